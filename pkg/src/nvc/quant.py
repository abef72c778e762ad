"""Training-free int16 integerization of the codec network.

Features map to int16 with scale K1 (1.0 -> 512), weights/biases with scale
K2 (8192). K2/K1 is an exact power of two so the post-conv rescale is a
rounded shift. All rounding is half-away-from-zero; this choice is normative:
bit-exact streams depend on it.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .tensor import INT_DTYPE, ConvSpec, Tensor, conv_raw

INT16_MIN = -32768
INT16_MAX = 32767
INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1


@dataclass(frozen=True)
class QuantScheme:
    """Fixed-point scales: k1 for features, k2 for weights."""

    k1: int = 512
    k2: int = 8192

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < self.k1:
            raise InvalidArgumentError("need k2 >= k1 >= 1")
        ratio = self.k2 // self.k1
        if self.k1 * ratio != self.k2 or ratio & (ratio - 1):
            raise InvalidArgumentError("k2/k1 must be an exact power of two")


DEFAULT_SCHEME = QuantScheme()


@dataclass
class QuantStats:
    """Saturation counters surfaced instead of a silent rescaling policy."""

    feature_clips: int = 0
    weight_clips: int = 0

    def add_features(self, n: int):
        self.feature_clips += int(n)

    def add_weights(self, n: int):
        self.weight_clips += int(n)


def round_half_away(x):
    """Round to nearest integer, ties away from zero (scalar or array)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def round_div(a, d: int):
    """Integer division with round-half-away-from-zero; d > 0.

    Exact for int64 inputs; this is the normative "a / K2" of the rescale
    step (add half the divisor before truncating toward zero).
    """
    a = np.asarray(a)
    half = d >> 1
    return np.sign(a) * ((np.abs(a) + half) // d)


def _clip_count(a, lo: int, hi: int, stats: QuantStats | None, kind: str = "feature"):
    if stats is not None:
        n = int(np.count_nonzero((a < lo) | (a > hi)))
        if n:
            if kind == "feature":
                stats.add_features(n)
            else:
                stats.add_weights(n)
    return np.clip(a, lo, hi)


def quantize_value(v_f: float, scheme: QuantScheme = DEFAULT_SCHEME) -> int:
    """Map a real feature value to int16: round(K1 * v), saturating."""
    q = round_half_away(scheme.k1 * float(v_f))
    return int(np.clip(q, INT16_MIN, INT16_MAX))


def quantize_features(x, scheme: QuantScheme = DEFAULT_SCHEME, stats: QuantStats | None = None) -> np.ndarray:
    """Array version of :func:`quantize_value`."""
    q = round_half_away(scheme.k1 * np.asarray(x, dtype=np.float64))
    return _clip_count(q, INT16_MIN, INT16_MAX, stats).astype(INT_DTYPE)


def dequantize_features(x_i: np.ndarray, scheme: QuantScheme = DEFAULT_SCHEME) -> np.ndarray:
    return x_i.astype(np.float64) / scheme.k1


@dataclass
class QuantizedLayer:
    """int16 weights/bias for one conv layer plus its representation error."""

    w_i: np.ndarray
    b_i: np.ndarray
    spec: ConvSpec
    max_abs_error: float = 0.0
    saturated: int = 0
    _w64: np.ndarray | None = None
    _b64k1: np.ndarray | None = None

    def w64(self) -> np.ndarray:
        if self._w64 is None:
            self._w64 = self.w_i.astype(np.int64)
        return self._w64

    def b64k1(self, k1: int) -> np.ndarray:
        if self._b64k1 is None:
            self._b64k1 = self.b_i.astype(np.int64)[:, None, None] * k1
        return self._b64k1


def quantize_layer(
    w_f,
    b_f,
    spec: ConvSpec,
    scheme: QuantScheme = DEFAULT_SCHEME,
    stats: QuantStats | None = None,
) -> QuantizedLayer:
    """Quantize real weights/bias to int16 with scale K2, reporting error."""
    w_f = np.asarray(w_f, dtype=np.float64)
    b_f = np.asarray(b_f, dtype=np.float64)
    if not (np.isfinite(w_f).all() and np.isfinite(b_f).all()):
        raise InvalidArgumentError("weights must be finite")
    limit = INT16_MAX / scheme.k2  # ~3.9999 at K2=8192
    sat = int(np.count_nonzero(np.abs(w_f) > limit) + np.count_nonzero(np.abs(b_f) > limit))
    if sat:
        warnings.warn(
            f"{sat} weight/bias values exceed |{limit:.4f}| and saturate int16",
            stacklevel=2,
        )
        if stats is not None:
            stats.add_weights(sat)
    w_i = np.clip(round_half_away(scheme.k2 * w_f), INT16_MIN, INT16_MAX).astype(INT_DTYPE)
    b_i = np.clip(round_half_away(scheme.k2 * b_f), INT16_MIN, INT16_MAX).astype(INT_DTYPE)
    err = 0.0
    if w_f.size:
        err = float(np.max(np.abs(w_i.astype(np.float64) / scheme.k2 - w_f)))
    if b_f.size:
        err = max(err, float(np.max(np.abs(b_i.astype(np.float64) / scheme.k2 - b_f))))
    return QuantizedLayer(w_i=w_i, b_i=b_i, spec=spec, max_abs_error=err, saturated=sat)


_POOLS: dict[int, ThreadPoolExecutor] = {}


def _pool(threads: int) -> ThreadPoolExecutor:
    pool = _POOLS.get(threads)
    if pool is None:
        pool = _POOLS[threads] = ThreadPoolExecutor(max_workers=threads)
    return pool


def _qconv_rows(padded: np.ndarray, layer: QuantizedLayer, row_slice: slice) -> np.ndarray:
    """Compute one band of output rows; padding is already materialized."""
    spec = layer.spec
    lo = row_slice.start * spec.stride
    hi = (row_slice.stop - 1) * spec.stride + spec.kernel[0]
    band_spec = ConvSpec(
        spec.in_channels, spec.out_channels, spec.kernel, spec.stride, 0, spec.groups
    )
    return conv_raw(padded[:, lo:hi, :], layer.w64(), band_spec, np.int64)


def qconv(
    x: Tensor,
    layer: QuantizedLayer,
    scheme: QuantScheme = DEFAULT_SCHEME,
    stats: QuantStats | None = None,
    threads: int = 1,
) -> Tensor:
    """Integer convolution: clip((conv(x_i, w_i) + b_i*K1) / K2).

    Accumulation is exact integer math in fixed raster order, so the result
    is byte-identical for any thread count. The 32-bit accumulator contract
    is asserted (int64 is used internally and checked against int32 range).
    """
    if x.mode != "int16":
        raise InvalidArgumentError("qconv needs an int16-mode tensor")
    spec = layer.spec
    oh, ow = spec.out_dims(*x.shape[1:])
    x64 = x.data.astype(np.int64)
    if threads > 1 and oh >= threads * 2:
        pad = spec.padding
        padded = np.pad(x64, ((0, 0), (pad, pad), (pad, pad))) if pad else x64
        bounds = np.linspace(0, oh, threads + 1, dtype=int)
        slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        parts = list(_pool(threads).map(lambda sl: _qconv_rows(padded, layer, sl), slices))
        acc = np.concatenate(parts, axis=1)
    else:
        acc = conv_raw(x64, layer.w64(), spec, np.int64)
    acc += layer.b64k1(scheme.k1)
    if acc.size and (acc.max() > INT32_MAX or acc.min() < INT32_MIN):
        raise InvalidArgumentError("int32 accumulator overflow in qconv")
    out = round_div(acc, scheme.k2)
    out = _clip_count(out, INT16_MIN, INT16_MAX, stats)
    return Tensor(out.astype(INT_DTYPE), "int16")


class SigmoidLut:
    """65536-entry table: int16 v -> round(K1 * sigmoid(v / K1)), in [0, K1]."""

    def __init__(self, table: np.ndarray, scheme: QuantScheme):
        if table.shape != (65536,):
            raise InvalidArgumentError("sigmoid LUT must have 65536 entries")
        self.table = table
        self.scheme = scheme

    def __getitem__(self, v: int) -> int:
        return int(self.table[v + 32768])

    def lookup(self, v_i: np.ndarray) -> np.ndarray:
        return self.table[v_i.astype(np.int64) + 32768]


def build_sigmoid_lut(scheme: QuantScheme = DEFAULT_SCHEME) -> SigmoidLut:
    v = np.arange(INT16_MIN, INT16_MAX + 1, dtype=np.float64) / scheme.k1
    sig = 1.0 / (1.0 + np.exp(-v))
    table = round_half_away(scheme.k1 * sig).astype(INT_DTYPE)
    return SigmoidLut(table, scheme)


def build_softplus_lut(scheme: QuantScheme = DEFAULT_SCHEME) -> np.ndarray:
    """int16 v -> round(K1 * softplus(v / K1)); the positive-scale mapping."""
    v = np.arange(INT16_MIN, INT16_MAX + 1, dtype=np.float64) / scheme.k1
    sp = np.logaddexp(0.0, v)
    return np.clip(round_half_away(scheme.k1 * sp), 0, INT16_MAX).astype(INT_DTYPE)


_DEFAULT_SIGMOID_LUT: SigmoidLut | None = None
_DEFAULT_SOFTPLUS_LUT: np.ndarray | None = None


def default_sigmoid_lut() -> SigmoidLut:
    global _DEFAULT_SIGMOID_LUT
    if _DEFAULT_SIGMOID_LUT is None:
        _DEFAULT_SIGMOID_LUT = build_sigmoid_lut()
    return _DEFAULT_SIGMOID_LUT


def default_softplus_lut() -> np.ndarray:
    global _DEFAULT_SOFTPLUS_LUT
    if _DEFAULT_SOFTPLUS_LUT is None:
        _DEFAULT_SOFTPLUS_LUT = build_softplus_lut()
    return _DEFAULT_SOFTPLUS_LUT


def qwsilu(
    x: Tensor,
    alpha: int = 4,
    lut: SigmoidLut | None = None,
    scheme: QuantScheme = DEFAULT_SCHEME,
) -> Tensor:
    """Integer WSiLU: round(x_i * lut[clip(alpha*x_i)] / K1), saturating."""
    if x.mode != "int16":
        raise InvalidArgumentError("qwsilu needs an int16-mode tensor")
    if lut is None:
        lut = default_sigmoid_lut()
    t = np.clip(np.int64(alpha) * x.data.astype(np.int64), INT16_MIN, INT16_MAX)
    g = lut.table[t + 32768].astype(np.int64)
    out = round_div(x.data.astype(np.int64) * g, scheme.k1)
    out = np.clip(out, INT16_MIN, INT16_MAX)
    return Tensor(out.astype(INT_DTYPE), "int16")


def qchannel_scale(
    x: Tensor,
    scale,
    scheme: QuantScheme = DEFAULT_SCHEME,
    stats: QuantStats | None = None,
) -> Tensor:
    """Channel scaling as a 1x1 depth-wise quantized multiply.

    Scales are quantized with K2 and applied with the same
    multiply / rescale / clip contract as qconv.
    """
    if x.mode != "int16":
        raise InvalidArgumentError("qchannel_scale needs an int16-mode tensor")
    s = np.asarray(scale, dtype=np.float64)
    if s.shape != (x.channels,):
        raise InvalidArgumentError(f"scale length {s.shape} != channels {x.channels}")
    s_i = np.clip(round_half_away(scheme.k2 * s), INT16_MIN, INT16_MAX).astype(np.int64)
    acc = x.data.astype(np.int64) * s_i[:, None, None]
    out = round_div(acc, scheme.k2)
    out = _clip_count(out, INT16_MIN, INT16_MAX, stats)
    return Tensor(out.astype(INT_DTYPE), "int16")


def qadd(a: Tensor, b: Tensor, stats: QuantStats | None = None) -> Tensor:
    """Saturating int16 elementwise add (residual connections)."""
    if a.mode != "int16" or b.mode != "int16":
        raise InvalidArgumentError("qadd needs int16-mode tensors")
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    acc = a.data.astype(np.int64) + b.data.astype(np.int64)
    out = _clip_count(acc, INT16_MIN, INT16_MAX, stats)
    return Tensor(out.astype(INT_DTYPE), "int16")


def qgate(a: Tensor, b: Tensor, lut: SigmoidLut | None = None, scheme: QuantScheme = DEFAULT_SCHEME) -> Tensor:
    """Sigmoid gate a * sigmoid(b) in integer math via the LUT."""
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    if lut is None:
        lut = default_sigmoid_lut()
    g = lut.table[b.data.astype(np.int64) + 32768].astype(np.int64)
    out = round_div(a.data.astype(np.int64) * g, scheme.k1)
    return Tensor(np.clip(out, INT16_MIN, INT16_MAX).astype(INT_DTYPE), "int16")
