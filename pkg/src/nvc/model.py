"""The conditional-coding network: patch embedding, temporal context
extraction, encoder, hyper path, two-step prior estimation, decoder, and
reconstruction, all built from depth-wise conv blocks and runnable in real
or int16 mode with identical dataflow.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import quant, tensor as tz
from .entropy import PARAM_FP, PriorParams, Y_SMAX, Y_SMIN, Z_SMAX, Z_SMIN
from .errors import InvalidArgumentError
from .quant import (
    INT16_MAX,
    INT16_MIN,
    DEFAULT_SCHEME,
    QuantScheme,
    QuantStats,
    QuantizedLayer,
    round_div,
    round_half_away,
)
from .tensor import ConvSpec, Tensor

PATCH = 8
COLORSPACES = ("rgb", "yuv420")


@dataclass(frozen=True)
class CodecConfig:
    """Network sizing. Desk-scale default is 32 latent channels; 256 mirrors
    the full-scale layout (latent size 4*H*W at 1/8 resolution)."""

    latent_channels: int = 32
    patch: int = PATCH
    dc_blocks_per_stage: int = 2
    hyper_channels: int = 0  # 0 -> latent_channels // 2
    colorspace: str = "rgb"
    extractor_split: int = 0  # 0 -> half the extractor blocks

    def __post_init__(self):
        if self.patch != PATCH:
            raise InvalidArgumentError("the single low resolution is fixed at 1/8")
        if self.latent_channels < 3 or self.latent_channels % 2:
            raise InvalidArgumentError("latent_channels must be even and >= 3 (latent holds the frame)")
        if self.dc_blocks_per_stage < 1:
            raise InvalidArgumentError("need at least one block per stage")
        if self.colorspace not in COLORSPACES:
            raise InvalidArgumentError(f"colorspace must be one of {COLORSPACES}")
        if self.hyper_channels == 0:
            object.__setattr__(self, "hyper_channels", self.latent_channels // 2)
        if self.extractor_split == 0:
            object.__setattr__(self, "extractor_split", max(1, self.dc_blocks_per_stage // 2))
        if not (1 <= self.extractor_split <= self.dc_blocks_per_stage):
            raise InvalidArgumentError("extractor_split outside block range")

    @property
    def frame_channels(self) -> int:
        return 3 if self.colorspace == "rgb" else 6

    @property
    def pad_multiple(self) -> int:
        return 8 if self.colorspace == "rgb" else 16


@dataclass(frozen=True)
class FrameContext:
    """Reference state between frames.

    ``f_prev`` is the previously decoded latent; ``F`` conditions the
    decoder, ``F_e`` the encoder, and ``entropy_ctx`` (the extractor's
    first-stage output) conditions the prior estimation, which is what lets
    entropy decoding overlap the rest of the extractor.
    """

    f_prev: Tensor
    F: Tensor
    F_e: Tensor
    entropy_ctx: Tensor


@dataclass
class LayerDef:
    spec: ConvSpec
    w: np.ndarray
    b: np.ndarray
    w_i: np.ndarray | None = None
    b_i: np.ndarray | None = None


class ModelWeights:
    """Named conv layers plus the sizing config they were built for."""

    def __init__(self, config: CodecConfig, layers: dict[str, LayerDef]):
        expected = set(layer_names(config))
        if set(layers) != expected:
            missing = expected - set(layers)
            extra = set(layers) - expected
            raise InvalidArgumentError(f"layer set mismatch: missing {missing}, extra {extra}")
        self.config = config
        self.layers = layers
        self._qcache: dict[str, QuantizedLayer] = {}

    def layer(self, name: str) -> LayerDef:
        return self.layers[name]

    def qlayer(self, name: str, scheme: QuantScheme = DEFAULT_SCHEME) -> QuantizedLayer:
        ql = self._qcache.get(name)
        if ql is None:
            ld = self.layers[name]
            if ld.w_i is not None:
                ql = QuantizedLayer(
                    w_i=np.ascontiguousarray(ld.w_i, dtype=np.int16),
                    b_i=np.ascontiguousarray(ld.b_i, dtype=np.int16),
                    spec=ld.spec,
                )
            else:
                ql = quant.quantize_layer(ld.w, ld.b, ld.spec, scheme)
            self._qcache[name] = ql
        return ql


def _dc_names(prefix: str, count: int) -> list[str]:
    names = []
    for i in range(count):
        names += [f"{prefix}.block{i}.pw1", f"{prefix}.block{i}.dw", f"{prefix}.block{i}.pw2"]
    return names


def layer_names(config: CodecConfig) -> list[str]:
    c = config.latent_channels
    n = config.dc_blocks_per_stage
    names = ["patch.proj"]
    names += _dc_names("ctx", n) + ["ctx.head"]
    names += ["enc.fuse"] + _dc_names("enc", n)
    names += ["hyper.enc1", "hyper.encd", "hyper.enc2"]
    names += ["hyper.dec1", "hyper.fuse", "hyper.out"]
    names += ["step2.fuse", "step2.out"]
    names += ["dec.fuse"] + _dc_names("dec", n)
    names += _dc_names("rec", n) + ["rec.head"]
    return names


def layer_spec(config: CodecConfig, name: str) -> ConvSpec:
    c = config.latent_channels
    ch = config.hyper_channels
    fc = config.frame_channels
    r2 = config.patch * config.patch
    if name == "patch.proj":
        return ConvSpec(fc * r2, c)
    if name == "ctx.head":
        return ConvSpec(c, 2 * c)
    if name == "enc.fuse" or name == "dec.fuse":
        return ConvSpec(2 * c, c)
    if name == "hyper.enc1":
        return ConvSpec(c, ch)
    if name == "hyper.encd":
        return ConvSpec(ch, ch, kernel=(3, 3), stride=2, padding=1, groups=ch)
    if name == "hyper.enc2":
        return ConvSpec(ch, ch)
    if name == "hyper.dec1":
        return ConvSpec(ch, 4 * ch)
    if name == "hyper.fuse":
        return ConvSpec(ch + c, c)
    if name == "hyper.out":
        return ConvSpec(c, 2 * c)
    if name == "step2.fuse":
        return ConvSpec(c // 2 + ch + c, c)
    if name == "step2.out":
        return ConvSpec(c, c)
    if name == "rec.head":
        return ConvSpec(c, fc * r2)
    if ".block" in name:
        if name.endswith(".pw1"):
            return ConvSpec(c, 2 * c)
        if name.endswith(".dw"):
            return ConvSpec(2 * c, 2 * c, kernel=(3, 3), padding=1, groups=2 * c)
        if name.endswith(".pw2"):
            return ConvSpec(c, c)
    raise InvalidArgumentError(f"unknown layer {name}")


# uniform half-widths per layer family; tuned so int16 activations stay well
# inside [-64, 64) while the reference-chain gain keeps float drift visible
_GAIN_PW1 = 1.0
_GAIN_DW = 0.55
_GAIN_PW2 = 0.55
_GAIN_HEAD = 2.1
_BIAS_HW = 0.05


def _half_width(name: str, spec: ConvSpec) -> float:
    fan_in = spec.in_channels // spec.groups * spec.kernel[0] * spec.kernel[1]
    if name.endswith(".pw1"):
        g = _GAIN_PW1
    elif name.endswith(".dw"):
        g = _GAIN_DW
    elif name.endswith(".pw2"):
        g = _GAIN_PW2
    else:
        g = _GAIN_HEAD
    return g * (3.0 ** 0.5) / (fan_in**0.5)


def generate_weights(config: CodecConfig, seed: int = 0) -> ModelWeights:
    """Seeded uniform weights; bounded support keeps int16 features in range."""
    rng = np.random.default_rng(seed)
    layers={}
    for name in layer_names(config):
        spec = layer_spec(config, name)
        a = _half_width(name, spec)
        w = rng.uniform(-a, a, spec.weight_shape)
        b = rng.uniform(-_BIAS_HW, _BIAS_HW, spec.out_channels)
        layers[name] = LayerDef(spec=spec, w=w, b=b)
    return ModelWeights(config, layers)


@dataclass
class ExecCtx:
    """Execution mode plus the shared quantization machinery."""

    mode: str = "real"
    scheme: QuantScheme = DEFAULT_SCHEME
    stats: QuantStats = field(default_factory=QuantStats)
    threads: int = 1

    def __post_init__(self):
        if self.mode not in ("real", "int16"):
            raise InvalidArgumentError(f"unknown mode {self.mode!r}")
        if self.mode == "int16":
            self.sigmoid_lut = quant.default_sigmoid_lut()
            self.softplus_lut = quant.default_softplus_lut()

    def conv(self, x: Tensor, weights: ModelWeights, name: str) -> Tensor:
        ld = weights.layer(name)
        if self.mode == "real":
            return tz.conv2d(x, ld.w, ld.b, ld.spec)
        return quant.qconv(x, weights.qlayer(name, self.scheme), self.scheme, self.stats, self.threads)

    def wsilu(self, x: Tensor) -> Tensor:
        if self.mode == "real":
            return tz.wsilu(x, 4.0)
        return quant.qwsilu(x, 4, self.sigmoid_lut, self.scheme)

    def scale(self, x: Tensor, vec) -> Tensor:
        if self.mode == "real":
            return tz.channel_scale(x, vec)
        return quant.qchannel_scale(x, vec, self.scheme, self.stats)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if self.mode == "real":
            return Tensor(a.data + b.data, "real")
        return quant.qadd(a, b, self.stats)

    def gate(self, a: Tensor, b: Tensor) -> Tensor:
        if self.mode == "real":
            return Tensor(a.data * tz.sigmoid(b.data), "real")
        return quant.qgate(a, b, self.sigmoid_lut, self.scheme)

    def softplus(self, x: Tensor) -> Tensor:
        if self.mode == "real":
            return Tensor(np.logaddexp(0.0, x.data), "real")
        return Tensor(self.softplus_lut[x.data.astype(np.int64) + 32768], "int16")

    def zeros(self, shape) -> Tensor:
        return tz.zeros(shape, self.mode)


def dc_block(x: Tensor, weights: ModelWeights, prefix: str, ctx: ExecCtx) -> Tensor:
    """Depth-wise conv block with a sigmoid-gated merge and residual link.

    pointwise (c -> 2c) -> WSiLU -> 3x3 depth-wise -> chunk -> gate -> pointwise.
    """
    h = ctx.conv(x, weights, f"{prefix}.pw1")
    h = ctx.wsilu(h)
    h = ctx.conv(h, weights, f"{prefix}.dw")
    a, g = tz.chunk2(h)
    h = ctx.gate(a, g)
    h = ctx.conv(h, weights, f"{prefix}.pw2")
    return ctx.add(x, h)


def _run_blocks(x: Tensor, weights: ModelWeights, prefix: str, ctx: ExecCtx, lo: int, hi: int) -> Tensor:
    for i in range(lo, hi):
        x = dc_block(x, weights, f"{prefix}.block{i}", ctx)
    return x


def patch_embed(frame: Tensor, weights: ModelWeights, ctx: ExecCtx) -> Tensor:
    """Frame tensor -> latent at 1/8 resolution (space-to-depth + 1x1 conv)."""
    _, h, w = frame.shape
    if h % PATCH or w % PATCH:
        raise InvalidArgumentError(f"frame dims {h}x{w} not divisible by {PATCH}; pad first")
    x = tz.space_to_depth(frame, PATCH)
    return ctx.conv(x, weights, "patch.proj")


def extract_stage1(f_prev: Tensor, q_f, weights: ModelWeights, ctx: ExecCtx) -> Tensor:
    """First part of the feature extractor; its output is the entropy context."""
    x = ctx.scale(f_prev, q_f)
    return _run_blocks(x, weights, "ctx", ctx, 0, weights.config.extractor_split)


def extract_stage2(g: Tensor, weights: ModelWeights, ctx: ExecCtx) -> tuple[Tensor, Tensor]:
    """Remaining extractor blocks and head -> (decoder context, encoder context)."""
    cfg = weights.config
    h = _run_blocks(g, weights, "ctx", ctx, cfg.extractor_split, cfg.dc_blocks_per_stage)
    head = ctx.conv(h, weights, "ctx.head")
    f_dec, f_enc = tz.chunk2(head)
    return f_dec, f_enc


def extract_context_staged(
    f_prev: Tensor, q_f, weights: ModelWeights, ctx: ExecCtx
) -> tuple[Tensor, Tensor, Tensor]:
    """(entropy_ctx, F, F_e) from the previous decoded latent.

    The first ``extractor_split`` blocks produce the entropy context; the
    remaining blocks plus the head produce the decoder/encoder contexts.
    """
    g = extract_stage1(f_prev, q_f, weights, ctx)
    f_dec, f_enc = extract_stage2(g, weights, ctx)
    return g, f_dec, f_enc


def extract_context(f_prev: Tensor, q_f, weights: ModelWeights, ctx: ExecCtx) -> tuple[Tensor, Tensor]:
    _, f_dec, f_enc = extract_context_staged(f_prev, q_f, weights, ctx)
    return f_dec, f_enc


def make_context(f_prev: Tensor, q_f, weights: ModelWeights, ctx: ExecCtx) -> FrameContext:
    g, f_dec, f_enc = extract_context_staged(f_prev, q_f, weights, ctx)
    return FrameContext(f_prev=f_prev, F=f_dec, F_e=f_enc, entropy_ctx=g)


def encode_latent(x_lat: Tensor, f_enc: Tensor, q_e, weights: ModelWeights, ctx: ExecCtx) -> Tensor:
    if x_lat.shape[1:] != f_enc.shape[1:]:
        raise InvalidArgumentError("latent and encoder context dims differ")
    x = tz.concat_channels(ctx.scale(x_lat, q_e), f_enc)
    x = ctx.conv(x, weights, "enc.fuse")
    return _run_blocks(x, weights, "enc", ctx, 0, weights.config.dc_blocks_per_stage)


def hyper_encode(y: Tensor, weights: ModelWeights, ctx: ExecCtx) -> Tensor:
    """y -> hyper latent z at half the latent resolution (stride-2 stage)."""
    x = ctx.conv(y, weights, "hyper.enc1")
    x = ctx.wsilu(x)
    x = ctx.conv(x, weights, "hyper.encd")
    return ctx.conv(x, weights, "hyper.enc2")


def hyper_upsample(z_hat: Tensor, latent_hw: tuple[int, int], weights: ModelWeights, ctx: ExecCtx) -> Tensor:
    """z back to latent resolution (1x1 conv -> depth-to-space -> crop)."""
    x = ctx.conv(z_hat, weights, "hyper.dec1")
    x = ctx.wsilu(x)
    x = tz.depth_to_space(x, 2)
    h, w = latent_hw
    return Tensor(x.data[:, :h, :w], x.mode)


def hyper_decode(
    z_hat: Tensor, entropy_ctx: Tensor, weights: ModelWeights, ctx: ExecCtx
) -> tuple[Tensor, Tensor, Tensor]:
    """Prior tensors (mean, positive scale) for all of y, plus the upsampled z.

    Conditioned on the temporal entropy context; scale goes through the
    softplus mapping so it is strictly positive.
    """
    z_up = hyper_upsample(z_hat, entropy_ctx.shape[1:], weights, ctx)
    x = tz.concat_channels(z_up, entropy_ctx)
    x = ctx.conv(x, weights, "hyper.fuse")
    x = ctx.wsilu(x)
    x = ctx.conv(x, weights, "hyper.out")
    mean_t, raw_scale = tz.chunk2(x)
    return mean_t, ctx.softplus(raw_scale), z_up


def step2_params_net(
    y1_hat: Tensor, z_up: Tensor, entropy_ctx: Tensor, weights: ModelWeights, ctx: ExecCtx
) -> tuple[Tensor, Tensor]:
    """Re-estimated (mean, scale) for the second channel half, conditioned on
    the decoded first half."""
    x = tz.concat_channels(tz.concat_channels(y1_hat, z_up), entropy_ctx)
    x = ctx.conv(x, weights, "step2.fuse")
    x = ctx.wsilu(x)
    x = ctx.conv(x, weights, "step2.out")
    mean_t, raw_scale = tz.chunk2(x)
    return mean_t, ctx.softplus(raw_scale)


def decode_latent(y_hat: Tensor, f_dec: Tensor, q_d, weights: ModelWeights, ctx: ExecCtx) -> Tensor:
    if y_hat.shape[1:] != f_dec.shape[1:]:
        raise InvalidArgumentError("latent and decoder context dims differ")
    x = tz.concat_channels(ctx.scale(y_hat, q_d), f_dec)
    x = ctx.conv(x, weights, "dec.fuse")
    return _run_blocks(x, weights, "dec", ctx, 0, weights.config.dc_blocks_per_stage)


def reconstruct(f_t: Tensor, q_r, weights: ModelWeights, ctx: ExecCtx) -> Tensor:
    """Latent back to a full-resolution frame tensor (feature units)."""
    x = ctx.scale(f_t, q_r)
    x = _run_blocks(x, weights, "rec", ctx, 0, weights.config.dc_blocks_per_stage)
    x = ctx.conv(x, weights, "rec.head")
    return tz.depth_to_space(x, PATCH)


# --- symbol (de)quantization -------------------------------------------------

def step_denominator(qstep: float, scheme: QuantScheme = DEFAULT_SCHEME) -> int:
    """Integer feature-units-per-symbol: round(K1 * qstep), >= 1."""
    return max(1, int(round_half_away(scheme.k1 * qstep)))


def quantize_y(y: Tensor, qstep: float, ctx: ExecCtx) -> np.ndarray:
    """Latent to integer symbols: round(y / qstep), clamped to the alphabet."""
    if ctx.mode == "int16":
        d = step_denominator(qstep, ctx.scheme)
        q = round_div(y.data.astype(np.int64), d)
    else:
        q = round_half_away(y.data / qstep).astype(np.int64)
    return np.clip(q, Y_SMIN, Y_SMAX).astype(np.int64)


def dequantize_y(y_q: np.ndarray, qstep: float, ctx: ExecCtx) -> Tensor:
    if ctx.mode == "int16":
        d = step_denominator(qstep, ctx.scheme)
        v = np.clip(y_q.astype(np.int64) * d, INT16_MIN, INT16_MAX)
        return Tensor(v.astype(np.int16), "int16")
    return Tensor(y_q.astype(np.float64) * qstep, "real")


def quantize_z(z: Tensor, ctx: ExecCtx) -> np.ndarray:
    """Hyper latent to integer symbols: round(z), clamped to the z alphabet."""
    if ctx.mode == "int16":
        q = round_div(z.data.astype(np.int64), ctx.scheme.k1)
    else:
        q = round_half_away(z.data).astype(np.int64)
    return np.clip(q, Z_SMIN, Z_SMAX).astype(np.int64)


def dequantize_z(z_q: np.ndarray, ctx: ExecCtx) -> Tensor:
    if ctx.mode == "int16":
        return Tensor((z_q.astype(np.int64) * ctx.scheme.k1).astype(np.int16), "int16")
    return Tensor(z_q.astype(np.float64), "real")


def prior_from_tensors(mean_t: Tensor, scale_t: Tensor, qstep: float, ctx: ExecCtx) -> PriorParams:
    """Feature-unit prior tensors -> symbol-unit fixed-point params."""
    if ctx.mode == "int16":
        d = step_denominator(qstep, ctx.scheme)
        mean_fp = round_div(mean_t.data.astype(np.int64) * PARAM_FP, d)
        scale_fp = round_div(scale_t.data.astype(np.int64) * PARAM_FP, d)
    else:
        mean_fp = round_half_away(mean_t.data / qstep * PARAM_FP).astype(np.int64)
        scale_fp = round_half_away(scale_t.data / qstep * PARAM_FP).astype(np.int64)
    return PriorParams(mean_fp, scale_fp)


# --- frame packing -----------------------------------------------------------

def pack_frame(planes, config: CodecConfig, ctx: ExecCtx) -> Tensor:
    """8-bit planes -> centered feature tensor.

    RGB keeps three full-resolution channels; YUV420 folds Y into four
    half-resolution channels next to U and V so one network handles 4:2:0.
    """
    if config.colorspace == "rgb":
        arr = np.stack([np.asarray(p) for p in planes])
        t = _pixels_to_features(arr, ctx)
        return t
    y, u, v = (np.asarray(p) for p in planes)
    if y.shape[0] % 2 or y.shape[1] % 2:
        raise InvalidArgumentError("YUV420 needs even luma dims")
    yt = _pixels_to_features(y[None, :, :], ctx)
    yt = tz.space_to_depth(yt, 2)
    uv = _pixels_to_features(np.stack([u, v]), ctx)
    return tz.concat_channels(yt, uv)


def unpack_frame(frame: Tensor, config: CodecConfig, ctx: ExecCtx):
    """Inverse of :func:`pack_frame`; returns uint8 planes."""
    if config.colorspace == "rgb":
        arr = _features_to_pixels(frame, ctx)
        return tuple(arr[i] for i in range(3))
    yt = Tensor(frame.data[:4], frame.mode)
    yt = tz.depth_to_space(yt, 2)
    y = _features_to_pixels(yt, ctx)[0]
    uv = _features_to_pixels(Tensor(frame.data[4:], frame.mode), ctx)
    return y, uv[0], uv[1]


def _pixels_to_features(arr: np.ndarray, ctx: ExecCtx) -> Tensor:
    if arr.dtype != np.uint8:
        raise InvalidArgumentError("raw video planes must be uint8")
    if ctx.mode == "int16":
        v = round_div(arr.astype(np.int64) * ctx.scheme.k1, 255) - ctx.scheme.k1 // 2
        return Tensor(v.astype(np.int16), "int16")
    return Tensor(arr.astype(np.float64) / 255.0 - 0.5, "real")


def _features_to_pixels(t: Tensor, ctx: ExecCtx) -> np.ndarray:
    if ctx.mode == "int16":
        k1 = ctx.scheme.k1
        v = round_div((t.data.astype(np.int64) + k1 // 2) * 255, k1)
        return np.clip(v, 0, 255).astype(np.uint8)
    v = round_half_away((t.data + 0.5) * 255.0)
    return np.clip(v, 0, 255).astype(np.uint8)


def latent_dims(config: CodecConfig, height: int, width: int) -> tuple[int, int]:
    """Latent (h, w) for padded original dims."""
    if config.colorspace == "rgb":
        return height // PATCH, width // PATCH
    return height // 2 // PATCH, width // 2 // PATCH


def config_blob(config: CodecConfig) -> bytes:
    return (
        f"{config.latent_channels},{config.patch},{config.dc_blocks_per_stage},"
        f"{config.hyper_channels},{config.colorspace},{config.extractor_split}"
    ).encode()


def weights_hash(weights: ModelWeights) -> bytes:
    """8-byte digest binding a bitstream to config + exact weights."""
    h = hashlib.sha256()
    h.update(config_blob(weights.config))
    for name in layer_names(weights.config):
        ld = weights.layer(name)
        h.update(name.encode())
        h.update(np.ascontiguousarray(ld.w, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(ld.b, dtype="<f8").tobytes())
    return h.digest()[:8]
