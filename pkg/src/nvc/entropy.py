"""Probability models for the coded latents.

The main latent y uses a discretized Laplace with predicted per-element
(mean, scale); the hyper latent z uses static per-channel tables from the
rate module bank. Table construction is integer-only over fixed-point
parameters (scale 512, symbol units) plus one precomputed exp table, so the
encoder and decoder always build identical tables, in both scalar modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidArgumentError
from .quant import round_div, round_half_away
from .rangecoder import CdfTable, decode_indexed, encode_indexed

PARAM_FP = 512  # fixed-point scale of mean/scale params (symbol units)
SCALE_MIN_FP = 6  # >= 0.01 in real units
SCALE_MAX_FP = 1 << 19  # flatter than this is unresolvable in 16-bit tables
MEAN_ABS_MAX_FP = 1 << 20

_EXP_FP = 2048  # fixed-point scale of the exp-table argument
_EXP_N = 24576  # e^(-k/2048) underflows 1/131072 near k = 24132
_F_ONE = 1 << 17  # fixed-point scale of the Laplace CDF

Y_SMIN, Y_SMAX = -128, 127
Z_SMIN, Z_SMAX = -32, 32

_EXP_LUT: np.ndarray | None = None
_SIGNED_CDF_LUT: np.ndarray | None = None
_EXP_ZCUT: int | None = None


def _exp_zero_cut() -> int:
    """First exp-table index with a zero entry (tail truncation point)."""
    global _EXP_ZCUT
    if _EXP_ZCUT is None:
        _EXP_ZCUT = int(np.argmax(exp_lut() == 0))
    return _EXP_ZCUT


def exp_lut() -> np.ndarray:
    """E[k] = round(65536 * exp(-k / 2048)) for k in [0, _EXP_N)."""
    global _EXP_LUT
    if _EXP_LUT is None:
        k = np.arange(_EXP_N, dtype=np.float64)
        _EXP_LUT = round_half_away(65536.0 * np.exp(-k / _EXP_FP)).astype(np.int64)
        _EXP_LUT.flags.writeable = False
    return _EXP_LUT


def _signed_cdf_lut() -> np.ndarray:
    """CDF values indexed by sign(delta) * (t + 1) + _EXP_N.

    Below the mean the CDF is E[t] / 2^17, at or above it is 1 - E[t] / 2^17;
    folding the sign into one table turns the evaluation into a single gather.
    """
    global _SIGNED_CDF_LUT
    if _SIGNED_CDF_LUT is None:
        e = exp_lut()
        lut = np.empty(2 * _EXP_N + 1, dtype=np.int64)
        lut[_EXP_N + 1 :] = _F_ONE - e  # lut[N+1+t] = 2^17 - E[t]
        lut[:_EXP_N] = e[::-1]  # lut[N-1-t] = E[t]
        lut[_EXP_N] = 0  # index never produced (t + 1 >= 1)
        lut.flags.writeable = False
        _SIGNED_CDF_LUT = lut
    return _SIGNED_CDF_LUT


@dataclass(frozen=True)
class PriorParams:
    """Per-element (mean, scale) in symbol units, fixed point x512."""

    mean_fp: np.ndarray
    scale_fp: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(self.mean_fp, dtype=np.int64)
        s = np.ascontiguousarray(self.scale_fp, dtype=np.int64)
        if m.shape != s.shape:
            raise InvalidArgumentError("mean/scale shapes differ")
        m = np.clip(m, -MEAN_ABS_MAX_FP, MEAN_ABS_MAX_FP)
        s = np.clip(s, SCALE_MIN_FP, SCALE_MAX_FP)
        for arr in (m, s):
            arr.flags.writeable = False
        object.__setattr__(self, "mean_fp", m)
        object.__setattr__(self, "scale_fp", s)

    @classmethod
    def from_real(cls, mean, scale) -> "PriorParams":
        mean_fp = round_half_away(np.asarray(mean, dtype=np.float64) * PARAM_FP)
        scale_fp = round_half_away(np.asarray(scale, dtype=np.float64) * PARAM_FP)
        return cls(mean_fp.astype(np.int64), scale_fp.astype(np.int64))

    @property
    def mean(self) -> np.ndarray:
        return self.mean_fp.astype(np.float64) / PARAM_FP

    @property
    def scale(self) -> np.ndarray:
        return self.scale_fp.astype(np.float64) / PARAM_FP

    @property
    def size(self) -> int:
        return self.mean_fp.size


def _renorm_freqs(freq: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Bring each freq row to an exact total of 65536, preserving symmetry.

    The excess from floor-quantization + smoothing is taken from the
    highest-frequency symbol; among tied maxima the one nearest ``center``
    wins, and an equidistant pair splits the excess (odd remainder goes to
    the center symbol). A centered symmetric row therefore stays symmetric.
    """
    n, a_size = freq.shape
    excess = freq.sum(axis=1, dtype=np.int64) - 65536
    cols = np.arange(a_size, dtype=np.int32)
    dist = np.abs(cols[None, :] - center[:, None]).astype(np.int32)
    mx = freq.max(axis=1)
    big = np.int32(1 << 20)
    penal = np.where(freq == mx[:, None], dist, big)
    tgt = np.argmin(penal, axis=1)  # nearest max; ties -> lower index
    rows = np.arange(n)
    mirror = 2 * center - tgt
    pair = (
        (mirror != tgt)
        & (mirror >= 0)
        & (mirror < a_size)
        & (freq[rows, np.clip(mirror, 0, a_size - 1)] == mx)
    )
    solo = ~pair
    freq[rows[solo], tgt[solo]] -= excess[solo]
    if pair.any():
        half = excess[pair] >> 1
        rem = excess[pair] - 2 * half
        freq[rows[pair], tgt[pair]] -= half
        freq[rows[pair], mirror[pair]] -= half
        freq[rows[pair], center[pair]] -= rem
    return freq


def _rows_numpy(mu: np.ndarray, b: np.ndarray, s_min: int, s_max: int) -> np.ndarray:
    n = mu.shape[0]
    a_size = s_max - s_min + 1
    symbols = np.arange(s_min, s_max + 2, dtype=np.int64)
    bnd_fp = (2 * symbols - 1) * (PARAM_FP // 2)  # boundaries s - 0.5, x512
    delta = bnd_fp[None, :] - mu[:, None]
    t = (np.abs(delta).astype(np.uint32) * np.uint32(_EXP_FP) // b[:, None].astype(np.uint32)).astype(np.int64)
    np.clip(t, 0, _EXP_N - 1, out=t)
    sgn = (delta >= 0).astype(np.int64) * 2 - 1
    f = _signed_cdf_lut()[sgn * (t + 1) + _EXP_N].astype(np.int32)
    f[:, 0] = 0
    f[:, -1] = _F_ONE  # tail mass folds into the edge symbols
    raw = np.diff(f, axis=1)
    freq = (raw >> 1) + 1
    center = (np.clip(round_div(mu, PARAM_FP), s_min, s_max) - s_min).astype(np.int64)
    freq = _renorm_freqs(freq.astype(np.int64), center)
    cum = np.zeros((n, a_size + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cum[:, 1:])
    return cum.astype(np.uint32)


def _rows_scalar_kernel(mu, b, s_min, s_max, zcut, cdf_lut, out):
    """Per-row reference kernel; numba-jitted when available.

    Must compute exactly what :func:`_rows_numpy` computes. ``zcut`` is the
    first exp-table index whose entry is 0, so |delta| >= dcut short-circuits
    to a saturated CDF value without the division.
    """
    n = mu.shape[0]
    a_size = s_max - s_min + 1
    half_fp = PARAM_FP // 2
    for i in range(n):
        mui = mu[i]
        bi = b[i]
        dcut = zcut * bi // _EXP_FP + 1
        prev = 0
        total = 0
        # first pass: masses -> freq (stored in out[i, 1:] temporarily)
        for j in range(a_size + 1):
            if j == 0:
                cur = 0
            elif j == a_size:
                cur = _F_ONE
            else:
                bnd = (2 * (s_min + j) - 1) * half_fp
                delta = bnd - mui
                if delta <= -dcut:
                    cur = 0
                elif delta >= dcut:
                    cur = _F_ONE
                else:
                    ad = delta if delta >= 0 else -delta
                    t = ad * _EXP_FP // bi
                    if t > _EXP_N - 1:
                        t = _EXP_N - 1
                    ci = (t + 1) if delta >= 0 else -(t + 1)
                    cur = cdf_lut[ci + _EXP_N]
            if j > 0:
                fr = ((cur - prev) >> 1) + 1
                out[i, j] = fr
                total += fr
            prev = cur
        excess = total - 65536
        # renormalize: excess off the max, ties nearest center, pairs split
        c = mui
        c = -c if c < 0 else c
        q = (c + half_fp) // PARAM_FP
        if mu[i] < 0:
            q = -q
        if q < s_min:
            q = s_min
        elif q > s_max:
            q = s_max
        center = q - s_min
        mx = 0
        for j in range(a_size):
            if out[i, j + 1] > mx:
                mx = out[i, j + 1]
        tgt = -1
        bestd = 1 << 20
        for j in range(a_size):
            if out[i, j + 1] == mx:
                d = j - center
                d = -d if d < 0 else d
                if d < bestd:
                    bestd = d
                    tgt = j
        mirror = 2 * center - tgt
        if mirror != tgt and 0 <= mirror < a_size and out[i, mirror + 1] == mx:
            half = excess >> 1
            rem = excess - 2 * half
            out[i, tgt + 1] -= half
            out[i, mirror + 1] -= half
            out[i, center + 1] -= rem
        else:
            out[i, tgt + 1] -= excess
        # cumulative
        acc = 0
        out[i, 0] = 0
        for j in range(a_size):
            acc += out[i, j + 1]
            out[i, j + 1] = acc
    return out


try:  # optional jit; both paths compute identical integer results
    from numba import njit as _njit

    _rows_fast = _njit(cache=True)(_rows_scalar_kernel)
except ImportError:  # pragma: no cover - numba is optional
    _rows_fast = None


def laplace_cum_rows(mean_fp: np.ndarray, scale_fp: np.ndarray, s_min: int, s_max: int) -> np.ndarray:
    """(n, A+1) cumulative tables for discretized Laplace, integer-only.

    CDF is evaluated at half-integer boundaries through the exp table, tail
    mass folds into the edge symbols, masses floor-quantize to 16-bit with +1
    smoothing, and the rounding excess renormalizes the total back to 65536
    (see :func:`_renorm_freqs`).
    """
    mu = np.atleast_1d(np.asarray(mean_fp, dtype=np.int64))
    b = np.atleast_1d(np.asarray(scale_fp, dtype=np.int64))
    if mu.shape != b.shape or mu.ndim != 1:
        raise InvalidArgumentError("mean/scale must be matching 1-d arrays")
    mu = np.clip(mu, -MEAN_ABS_MAX_FP, MEAN_ABS_MAX_FP)
    b = np.clip(b, SCALE_MIN_FP, SCALE_MAX_FP)
    if _rows_fast is not None and mu.shape[0] >= 64:
        out = np.zeros((mu.shape[0], s_max - s_min + 2), dtype=np.int64)
        _rows_fast(mu, b, s_min, s_max, _exp_zero_cut(), _signed_cdf_lut(), out)
        return out.astype(np.uint32)
    return _rows_numpy(mu, b, s_min, s_max)


def discretize_laplace(params: PriorParams, alphabet: tuple[int, int]) -> list[CdfTable]:
    """One CdfTable per element of ``params``."""
    s_min, s_max = alphabet
    rows = laplace_cum_rows(params.mean_fp.ravel(), params.scale_fp.ravel(), s_min, s_max)
    return [CdfTable(s_min, s_max, row) for row in rows]


def factorized_z_tables(bank_entry, z_shape: tuple[int, int, int]) -> list[CdfTable]:
    """Static per-channel tables for the hyper latent, one per z channel."""
    c = z_shape[0]
    tables = bank_entry.z_tables()
    if len(tables) < c:
        raise ConfigError(f"bank entry has {len(tables)} z channels, need {c}")
    return [tables[i] for i in range(c)]


def code_z(z_q: np.ndarray, tables: list[CdfTable]) -> bytes:
    """Encode the hyper latent with its per-channel static tables."""
    c, h, w = z_q.shape
    idx = (z_q.reshape(c, -1) - Z_SMIN).ravel()
    cum = np.repeat(np.stack([t.cum for t in tables[:c]]), h * w, axis=0)
    return encode_indexed(idx, cum)


def decode_z(data: bytes, shape: tuple[int, int, int], tables: list[CdfTable]) -> np.ndarray:
    c, h, w = shape
    cum = np.repeat(np.stack([t.cum for t in tables[:c]]), h * w, axis=0)
    idx = decode_indexed(data, cum, c * h * w)
    return (idx + Z_SMIN).reshape(c, h, w)


def _y_rows(params: PriorParams) -> np.ndarray:
    return laplace_cum_rows(params.mean_fp.ravel(), params.scale_fp.ravel(), Y_SMIN, Y_SMAX)


def two_step_code_y(y_q: np.ndarray, prior_step1: PriorParams, step2_fn) -> tuple[bytes, bytes]:
    """Code y in two channel halves.

    Step 1 codes the first half with the hyper/temporal prior. Step 2 calls
    ``step2_fn(decoded first half)`` to re-estimate (mean, scale) for the
    second half, then codes it. The decoder mirrors this order exactly.
    """
    c = y_q.shape[0]
    if c % 2:
        raise InvalidArgumentError("two-step coding needs an even channel count")
    half = c // 2
    y1, y2 = y_q[:half], y_q[half:]
    if prior_step1.mean_fp.shape != y1.shape:
        raise InvalidArgumentError("step-1 prior shape must match the first channel half")
    bytes_1 = encode_indexed((y1 - Y_SMIN).ravel(), _y_rows(prior_step1))
    prior_step2 = step2_fn(y1)
    if prior_step2.mean_fp.shape != y2.shape:
        raise InvalidArgumentError("step-2 prior shape must match the second channel half")
    bytes_2 = encode_indexed((y2 - Y_SMIN).ravel(), _y_rows(prior_step2))
    return bytes_1, bytes_2


def two_step_decode_y(
    bytes_1: bytes,
    bytes_2: bytes,
    shape: tuple[int, int, int],
    prior_step1: PriorParams,
    step2_fn,
) -> np.ndarray:
    c, h, w = shape
    if c % 2:
        raise InvalidArgumentError("two-step coding needs an even channel count")
    half = c // 2
    idx1 = decode_indexed(bytes_1, _y_rows(prior_step1), half * h * w)
    y1 = (idx1 + Y_SMIN).reshape(half, h, w)
    prior_step2 = step2_fn(y1)
    idx2 = decode_indexed(bytes_2, _y_rows(prior_step2), half * h * w)
    y2 = (idx2 + Y_SMIN).reshape(half, h, w)
    return np.concatenate([y1, y2], axis=0)
