"""Dense (channels, height, width) tensor kernels in real and int16 scalar modes.

Everything the codec network touches is a :class:`Tensor`: a single frame's
worth of data, row-major (c, h, w), no batch axis. Real mode uses float64;
int16 mode stores quantized features (see :mod:`nvc.quant` for the scheme).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

REAL_DTYPE = np.float64
INT_DTYPE = np.int16

_MODES = ("real", "int16")


@dataclass(frozen=True)
class Tensor:
    """Immutable dense array of shape (channels, height, width)."""

    data: np.ndarray
    mode: str = "real"

    def __post_init__(self):
        if self.mode not in _MODES:
            raise InvalidArgumentError(f"unknown tensor mode {self.mode!r}")
        arr = np.ascontiguousarray(self.data)
        if arr.ndim != 3:
            raise InvalidArgumentError(f"tensor must be 3-d (c,h,w), got shape {arr.shape}")
        want = INT_DTYPE if self.mode == "int16" else REAL_DTYPE
        if arr.dtype != want:
            arr = arr.astype(want)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def tobytes(self) -> bytes:
        return self.data.tobytes()


def tensor(data, mode: str = "real") -> Tensor:
    return Tensor(np.asarray(data), mode)


def zeros(shape: tuple[int, int, int], mode: str = "real") -> Tensor:
    dtype = INT_DTYPE if mode == "int16" else REAL_DTYPE
    return Tensor(np.zeros(shape, dtype=dtype), mode)


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a convolution: dense (groups=1) or depth-wise (groups=in)."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise InvalidArgumentError("channel counts must be positive")
        if self.stride < 1 or self.padding < 0:
            raise InvalidArgumentError("bad stride/padding")
        if self.groups not in (1, self.in_channels):
            raise InvalidArgumentError("groups must be 1 (dense) or in_channels (depth-wise)")
        if self.groups == self.in_channels and self.out_channels != self.in_channels:
            raise InvalidArgumentError("depth-wise conv requires out_channels == in_channels")

    def out_dims(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        if oh < 1 or ow < 1:
            raise InvalidArgumentError(f"conv output would be empty for input {h}x{w}")
        return oh, ow

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, *self.kernel)


def _im2col(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Patch matrix of shape (oh*ow, cin*kh*kw); rows in raster order."""
    c, h, w = x.shape
    kh, kw = spec.kernel
    if spec.padding:
        x = np.pad(x, ((0, 0), (spec.padding,) * 2, (spec.padding,) * 2))
    oh, ow = spec.out_dims(h, w)
    s = spec.stride
    cs, hs, ws = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(c, oh, ow, kh, kw),
        strides=(cs, hs * s, ws * s, hs, ws),
        writeable=False,
    )
    # (oh, ow, c, kh, kw) -> rows indexed by output position
    return windows.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * kh * kw)


def conv_raw(x: np.ndarray, weights: np.ndarray, spec: ConvSpec, acc_dtype) -> np.ndarray:
    """Cross-correlation with zero padding on a raw (c,h,w) array, no bias.

    Accumulates in ``acc_dtype``; summation order is fixed (im2col rows for
    dense, raster tap order for depth-wise) so integer results are exact and
    reproducible.
    """
    c, h, w = x.shape
    if c != spec.in_channels:
        raise InvalidArgumentError(f"input has {c} channels, spec expects {spec.in_channels}")
    if weights.shape != spec.weight_shape:
        raise InvalidArgumentError(
            f"weights shape {weights.shape} != spec {spec.weight_shape}"
        )
    oh, ow = spec.out_dims(h, w)
    xa = x if x.dtype == acc_dtype else x.astype(acc_dtype)
    wa = weights if weights.dtype == acc_dtype else weights.astype(acc_dtype)
    if spec.groups == 1 and spec.kernel == (1, 1) and spec.stride == 1 and spec.padding == 0:
        out = wa.reshape(spec.out_channels, c) @ xa.reshape(c, h * w)
        return out.reshape(spec.out_channels, oh, ow)
    if spec.groups == 1:
        cols = _im2col(xa, spec)
        out = cols @ wa.reshape(spec.out_channels, -1).T
        return out.T.reshape(spec.out_channels, oh, ow)
    # depth-wise: accumulate taps in fixed (kh, kw) raster order
    kh, kw = spec.kernel
    if spec.padding:
        xa = np.pad(xa, ((0, 0), (spec.padding,) * 2, (spec.padding,) * 2))
    s = spec.stride
    out = np.zeros((spec.out_channels, oh, ow), dtype=acc_dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xa[:, i : i + (oh - 1) * s + 1 : s, j : j + (ow - 1) * s + 1 : s]
            out += patch * wa[:, 0, i, j][:, None, None]
    return out


def conv2d(x: Tensor, weights, bias, spec: ConvSpec) -> Tensor:
    """Real-mode convolution (cross-correlation) with zero padding."""
    if x.mode != "real":
        raise InvalidArgumentError("conv2d is the real-mode path; use quant.qconv for int16")
    w = np.asarray(weights, dtype=REAL_DTYPE)
    b = np.asarray(bias, dtype=REAL_DTYPE)
    if b.shape != (spec.out_channels,):
        raise InvalidArgumentError(f"bias shape {b.shape} != ({spec.out_channels},)")
    out = conv_raw(x.data, w, spec, REAL_DTYPE)
    out += b[:, None, None]
    return Tensor(out, "real")


def space_to_depth(x: Tensor, r: int) -> Tensor:
    """Fold each r x r spatial block into r*r channels (raster order)."""
    if r < 1:
        raise InvalidArgumentError("r must be positive")
    c, h, w = x.shape
    if h % r or w % r:
        raise InvalidArgumentError(f"dims {h}x{w} not divisible by r={r}; pad first")
    d = x.data.reshape(c, h // r, r, w // r, r)
    d = d.transpose(0, 2, 4, 1, 3).reshape(c * r * r, h // r, w // r)
    return Tensor(d, x.mode)


def depth_to_space(x: Tensor, r: int) -> Tensor:
    """Exact inverse of :func:`space_to_depth`."""
    if r < 1:
        raise InvalidArgumentError("r must be positive")
    c, h, w = x.shape
    if c % (r * r):
        raise InvalidArgumentError(f"{c} channels not divisible by r^2={r * r}")
    d = x.data.reshape(c // (r * r), r, r, h, w)
    d = d.transpose(0, 3, 1, 4, 2).reshape(c // (r * r), h * r, w * r)
    return Tensor(d, x.mode)


def sigmoid(t: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function on raw arrays."""
    out = np.empty_like(t, dtype=REAL_DTYPE)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    out[~pos] = et / (1.0 + et)
    return out


def wsilu(x: Tensor, alpha: float = 4.0) -> Tensor:
    """Weighted SiLU: x * sigmoid(alpha * x), elementwise, real mode."""
    if x.mode != "real":
        raise InvalidArgumentError("wsilu is the real-mode path; use quant.qwsilu for int16")
    d = x.data
    return Tensor(d * sigmoid(alpha * d), "real")


def chunk2(x: Tensor) -> tuple[Tensor, Tensor]:
    """Split into first/second channel halves."""
    c = x.channels
    if c % 2:
        raise InvalidArgumentError(f"chunk2 needs an even channel count, got {c}")
    return Tensor(x.data[: c // 2], x.mode), Tensor(x.data[c // 2 :], x.mode)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along channels; a's channels first."""
    if a.shape[1:] != b.shape[1:]:
        raise InvalidArgumentError(f"spatial dims differ: {a.shape[1:]} vs {b.shape[1:]}")
    if a.mode != b.mode:
        raise InvalidArgumentError("cannot concat tensors of different modes")
    return Tensor(np.concatenate([a.data, b.data], axis=0), a.mode)


def channel_scale(x: Tensor, scale) -> Tensor:
    """Multiply each channel by its scale entry (real mode)."""
    if x.mode != "real":
        raise InvalidArgumentError("channel_scale is the real-mode path; use quant.qchannel_scale")
    s = np.asarray(scale, dtype=REAL_DTYPE)
    if s.shape != (x.channels,):
        raise InvalidArgumentError(f"scale length {s.shape} != channels {x.channels}")
    return Tensor(x.data * s[:, None, None], "real")
