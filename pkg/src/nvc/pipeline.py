"""Encode/decode orchestration: per-frame sessions, the two-lane parallel
schedule, whole-video round trips, and the drift report.

Two lanes at most: network inference and entropy coding, with a rendezvous at
chunk assembly. Lane handoffs are by value, so overlapped scheduling cannot
change any output byte.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import bitstream as bs
from . import model as md
from .entropy import PriorParams, code_z, decode_z, two_step_code_y, two_step_decode_y
from .errors import ConfigError, DecodeError, InvalidArgumentError
from .model import CodecConfig, ExecCtx, FrameContext, ModelWeights, Tensor
from .quant import QuantStats, _pool
from .rate import (
    DEFAULT_GOP_OFFSETS,
    BankEntry,
    QpSchedule,
    RateModuleBank,
    effective_qp_real,
    interpolate_entry,
)
from .tensor import chunk2 as _chunk2


@dataclass
class CodecSettings:
    base_qp: float = 20.0
    gop_offsets: tuple[int, ...] = DEFAULT_GOP_OFFSETS
    mode: str = "int16"
    threads: int = 1
    parallelism: str = "serial"  # serial | overlapped

    def __post_init__(self):
        if self.parallelism not in ("serial", "overlapped"):
            raise InvalidArgumentError(f"unknown parallelism {self.parallelism!r}")
        self.gop_offsets = tuple(int(o) for o in self.gop_offsets)


@dataclass
class SessionState:
    """Per-sequence mutable state; the context updates once per frame."""

    weights: ModelWeights
    bank: RateModuleBank
    settings: CodecSettings
    latent_hw: tuple[int, int]
    ctx: ExecCtx = None
    f_prev: Tensor = None
    frame_index: int = 0
    stats: QuantStats = None

    def __post_init__(self):
        cfg = self.weights.config
        if self.bank.channels != cfg.latent_channels or self.bank.z_channels != cfg.hyper_channels:
            raise ConfigError(
                f"bank sized for C={self.bank.channels}/Ch={self.bank.z_channels}, "
                f"model needs C={cfg.latent_channels}/Ch={cfg.hyper_channels}"
            )
        self.ctx = ExecCtx(mode=self.settings.mode, threads=self.settings.threads)
        self.stats = self.ctx.stats
        lh, lw = self.latent_hw
        self.f_prev = self.ctx.zeros((cfg.latent_channels, lh, lw))

    @property
    def schedule(self) -> QpSchedule:
        return QpSchedule(self.settings.base_qp, self.settings.gop_offsets)

    def frame_entry(self, index: int) -> tuple[float, BankEntry]:
        qp = effective_qp_real(self.schedule, index)
        return qp, interpolate_entry(self.bank, qp)

    def z_shape(self) -> tuple[int, int, int]:
        lh, lw = self.latent_hw
        return (self.weights.config.hyper_channels, (lh + 1) // 2, (lw + 1) // 2)


def _prior_halves(mean_t: Tensor, scale_t: Tensor, qstep: float, ctx: ExecCtx) -> tuple[PriorParams, None]:
    m1, _ = _chunk2(mean_t)
    s1, _ = _chunk2(scale_t)
    return md.prior_from_tensors(m1, s1, qstep, ctx)


def _make_step2_fn(state: SessionState, z_up: Tensor, g: Tensor, qstep: float):
    def step2_fn(y1_q: np.ndarray) -> PriorParams:
        y1_hat = md.dequantize_y(y1_q, qstep, state.ctx)
        mean2, scale2 = md.step2_params_net(y1_hat, z_up, g, state.weights, state.ctx)
        return md.prior_from_tensors(mean2, scale2, qstep, state.ctx)

    return step2_fn


def encode_frame(state: SessionState, frame_t: Tensor, include_recon: bool = False):
    """One conditional-coding step; returns (FrameChunk, f_t, recon or None).

    The context buffer updates with the encoder-side decoded latent after
    decode_latent, never earlier. In overlapped mode the entropy lane codes
    z/y while the network lane runs the decoder; bytes are identical to
    serial mode.
    """
    w, ctx = state.weights, state.ctx
    qp, entry = state.frame_entry(state.frame_index)
    qstep = entry.qstep
    fc = md.make_context(state.f_prev, entry.q_f, w, ctx)
    x_lat = md.patch_embed(frame_t, w, ctx)
    y = md.encode_latent(x_lat, fc.F_e, entry.q_e, w, ctx)
    z = md.hyper_encode(y, w, ctx)
    z_q = md.quantize_z(z, ctx)
    z_hat = md.dequantize_z(z_q, ctx)
    mean_t, scale_t, z_up = md.hyper_decode(z_hat, fc.entropy_ctx, w, ctx)
    y_q = md.quantize_y(y, qstep, ctx)
    prior1 = _prior_halves(mean_t, scale_t, qstep, ctx)
    step2_fn = _make_step2_fn(state, z_up, fc.entropy_ctx, qstep)
    y_hat = md.dequantize_y(y_q, qstep, ctx)

    def entropy_work():
        zb = code_z(z_q, entry.z_tables())
        y1b, y2b = two_step_code_y(y_q, prior1, step2_fn)
        return zb, y1b, y2b

    def network_work():
        return md.decode_latent(y_hat, fc.F, entry.q_d, w, ctx)

    if state.settings.parallelism == "overlapped":
        fut = _pool(2).submit(entropy_work)
        f_t = network_work()
        z_bytes, y1_bytes, y2_bytes = fut.result()
    else:
        z_bytes, y1_bytes, y2_bytes = entropy_work()
        f_t = network_work()

    chunk = bs.FrameChunk(qp=qp, z_bytes=z_bytes, y1_bytes=y1_bytes, y2_bytes=y2_bytes)
    recon = md.reconstruct(f_t, entry.q_r, w, ctx) if include_recon else None
    state.f_prev = f_t
    state.frame_index += 1
    return chunk, f_t, recon


def decode_frame(state: SessionState, chunk: bs.FrameChunk, perturb=None):
    """Inverse of encode_frame; returns (frame tensor, f_t).

    Overlapped mode decodes z against the extractor's first stage, then the
    y passes against the second stage. On any decode error the reference
    context is left unchanged.
    """
    w, ctx = state.weights, state.ctx
    entry = interpolate_entry(state.bank, chunk.qp)
    qstep = entry.qstep
    z_shape = state.z_shape()
    overlapped = state.settings.parallelism == "overlapped"

    if overlapped:
        fut_z = _pool(2).submit(decode_z, chunk.z_bytes, z_shape, entry.z_tables())
        g = md.extract_stage1(state.f_prev, entry.q_f, w, ctx)
        z_q = fut_z.result()
    else:
        z_q = decode_z(chunk.z_bytes, z_shape, entry.z_tables())
        g = md.extract_stage1(state.f_prev, entry.q_f, w, ctx)

    z_hat = md.dequantize_z(z_q, ctx)
    mean_t, scale_t, z_up = md.hyper_decode(z_hat, g, w, ctx)
    prior1 = _prior_halves(mean_t, scale_t, qstep, ctx)
    step2_fn = _make_step2_fn(state, z_up, g, qstep)
    lh, lw = state.latent_hw
    y_shape = (w.config.latent_channels, lh, lw)

    def y_work():
        return two_step_decode_y(chunk.y1_bytes, chunk.y2_bytes, y_shape, prior1, step2_fn)

    if overlapped:
        fut_y = _pool(2).submit(y_work)
        f_dec, _ = md.extract_stage2(g, w, ctx)
        y_q = fut_y.result()
    else:
        y_q = y_work()
        f_dec, _ = md.extract_stage2(g, w, ctx)

    y_hat = md.dequantize_y(y_q, qstep, ctx)
    f_t = md.decode_latent(y_hat, f_dec, entry.q_d, w, ctx)
    if perturb is not None:
        f_t = perturb(f_t, state.frame_index, ctx)
    frame = md.reconstruct(f_t, entry.q_r, w, ctx)
    state.f_prev = f_t
    state.frame_index += 1
    return frame, f_t


@dataclass
class EncodeResult:
    stream: bytes
    chunks: list
    latents: list
    recons: list | None
    elapsed_s: float
    stats: QuantStats

    @property
    def frame_bits(self) -> list[int]:
        return [c.total_bits for c in self.chunks]


@dataclass
class DecodeResult:
    frames: list
    latents: list
    header: bs.StreamHeader
    elapsed_s: float


def _padded_dims(frames, config: CodecConfig):
    padded = []
    dims = None
    for planes in frames:
        p, d = bs.pad_frame(planes, config.colorspace)
        if dims is None:
            dims = d
        elif d != dims:
            raise InvalidArgumentError("all frames must share dimensions")
        padded.append(p)
    return padded, dims


def encode_video(
    frames,
    weights: ModelWeights,
    bank: RateModuleBank,
    settings: CodecSettings,
    include_recon: bool = False,
) -> EncodeResult:
    """Pad, encode every frame under the GOP qp schedule, and write the container."""
    if not frames:
        raise InvalidArgumentError("need at least one frame")
    cfg = weights.config
    padded, (h0, w0) = _padded_dims(frames, cfg)
    ph, pw = padded[0][0].shape
    state = SessionState(weights, bank, settings, md.latent_dims(cfg, ph, pw))
    t0 = time.perf_counter()
    chunks, latents, recons = [], [], [] if include_recon else None
    for planes in padded:
        frame_t = md.pack_frame(planes, cfg, state.ctx)
        chunk, f_t, recon = encode_frame(state, frame_t, include_recon)
        chunks.append(chunk)
        latents.append(f_t)
        if include_recon:
            recons.append(_to_planes(recon, (h0, w0), cfg, state.ctx))
    elapsed = time.perf_counter() - t0
    header = bs.StreamHeader(
        width=w0,
        height=h0,
        colorspace=cfg.colorspace,
        frame_count=len(frames),
        base_qp=float(settings.base_qp),
        gop_offsets=settings.gop_offsets,
        config_hash=md.weights_hash(weights),
        mode=settings.mode,
    )
    return EncodeResult(
        stream=bs.write_stream(header, chunks),
        chunks=chunks,
        latents=latents,
        recons=recons,
        elapsed_s=elapsed,
        stats=state.stats,
    )


def _to_planes(frame_t: Tensor, dims, config: CodecConfig, ctx: ExecCtx):
    planes = md.unpack_frame(frame_t, config, ctx)
    return bs.crop_frame(planes, dims, config.colorspace)


def decode_video(
    stream: bytes,
    weights: ModelWeights,
    bank: RateModuleBank,
    threads: int = 1,
    parallelism: str = "serial",
    perturb=None,
) -> DecodeResult:
    """Parse, verify the config hash, and reconstruct every frame."""
    header, chunks = bs.read_stream(stream)
    cfg = weights.config
    if header.config_hash != md.weights_hash(weights):
        raise ConfigError("stream was encoded with different weights (config hash mismatch)")
    if header.colorspace != cfg.colorspace:
        raise ConfigError(f"stream colorspace {header.colorspace} != model {cfg.colorspace}")
    mult = cfg.pad_multiple
    ph = header.height + (-header.height) % mult
    pw = header.width + (-header.width) % mult
    settings = CodecSettings(
        base_qp=header.base_qp,
        gop_offsets=header.gop_offsets,
        mode=header.mode,
        threads=threads,
        parallelism=parallelism,
    )
    state = SessionState(weights, bank, settings, md.latent_dims(cfg, ph, pw))
    t0 = time.perf_counter()
    frames, latents = [], []
    for chunk in chunks:
        frame_t, f_t = decode_frame(state, chunk, perturb=perturb)
        frames.append(_to_planes(frame_t, (header.height, header.width), cfg, state.ctx))
        latents.append(f_t)
    return DecodeResult(
        frames=frames, latents=latents, header=header, elapsed_s=time.perf_counter() - t0
    )


def ulp_perturbation(frame_index: int):
    """Bump one activation by one ulp at the given frame (decoder side).

    In int16 mode the bump is below one quantum, so requantization erases it.
    """

    def perturb(f_t: Tensor, index: int, ctx: ExecCtx):
        if index != frame_index:
            return f_t
        d = f_t.data.copy()
        if ctx.mode == "real":
            d[0, 0, 0] = np.nextafter(d[0, 0, 0], np.inf)
        else:
            k1 = ctx.scheme.k1
            real = np.nextafter(d[0, 0, 0] / k1, np.inf)
            d[0, 0, 0] = np.clip(np.sign(real) * np.floor(abs(real) * k1 + 0.5), -32768, 32767)
        return Tensor(d, ctx.mode)

    return perturb


def drift_report(
    frames,
    weights: ModelWeights,
    bank: RateModuleBank,
    settings: CodecSettings,
    n_frames: int | None = None,
    perturb_frame: int | None = None,
) -> list[dict]:
    """Encoder vs independently re-executed decoder, per-frame divergence.

    Rows carry max |f_t_enc - f_t_dec| in feature units. A decode failure
    after divergence marks the remaining frames as infinite.
    """
    if n_frames is not None:
        frames = frames[:n_frames]
    enc = encode_video(frames, weights, bank, settings)
    perturb = ulp_perturbation(perturb_frame) if perturb_frame is not None else None
    rows = []
    try:
        dec = decode_video(enc.stream, weights, bank, threads=settings.threads, perturb=perturb)
        dec_latents = dec.latents
    except DecodeError:
        dec_latents = []
    for i, f_enc in enumerate(enc.latents):
        if i < len(dec_latents):
            a = f_enc.data.astype(np.float64)
            b = dec_latents[i].data.astype(np.float64)
            if settings.mode == "int16":
                div = float(np.max(np.abs(a - b))) / 512.0
            else:
                div = float(np.max(np.abs(a - b)))
        else:
            div = math.inf
        rows.append({"frame": i, "max_divergence": div})
    return rows
