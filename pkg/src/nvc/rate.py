"""Rate-adjustment module bank: 64 qp-indexed entries.

Each entry carries four per-channel scale vectors (encoder, decoder, feature
extractor, reconstruction), static per-channel tables for the hyper latent z,
and the quantization step for y. Arbitrary rates come from linear
interpolation of the vectors between neighbouring entries; the z tables come
from the nearest entry.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DecodeError, InvalidArgumentError
from .entropy import Z_SMAX, Z_SMIN, laplace_cum_rows
from .rangecoder import CdfTable

QP_MIN, QP_MAX = 0, 63
NUM_ENTRIES = 64
GOP_SIZE = 8
DEFAULT_GOP_OFFSETS = (0, 8, 0, 4, 0, 4, 0, 4)

_BANK_MAGIC = b"NVCB"
_BANK_VERSION = 1


def qstep_of(qp: float) -> float:
    """y quantization step: 2^((qp - 32) / 8), strictly increasing."""
    if not (QP_MIN <= qp <= QP_MAX):
        raise InvalidArgumentError(f"qp {qp} outside [{QP_MIN}, {QP_MAX}]")
    return float(2.0 ** ((qp - 32.0) / 8.0))


@dataclass(frozen=True)
class BankEntry:
    """Scale vectors, z prior tables, and quantization step for one rate point."""

    q_e: np.ndarray
    q_d: np.ndarray
    q_f: np.ndarray
    q_r: np.ndarray
    z_pmf: np.ndarray  # (z_channels, alphabet) uint16 frequencies, each row sums to 65536
    qstep: float

    def __post_init__(self):
        for name in ("q_e", "q_d", "q_f", "q_r"):
            v = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if v.ndim != 1:
                raise InvalidArgumentError(f"{name} must be a vector")
            if (v <= 0).any():
                raise InvalidArgumentError(f"{name} must be strictly positive")
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        z = np.ascontiguousarray(self.z_pmf, dtype=np.uint16)
        if z.ndim != 2 or z.shape[1] != Z_SMAX - Z_SMIN + 1:
            raise InvalidArgumentError("z_pmf must be (channels, alphabet)")
        if not (z.astype(np.int64).sum(axis=1) == 65536).all():
            raise InvalidArgumentError("each z pmf row must total 65536")
        if z.min(initial=1) < 1:
            raise InvalidArgumentError("z pmf frequencies must be >= 1")
        z.flags.writeable = False
        object.__setattr__(self, "z_pmf", z)
        if not self.qstep > 0:
            raise InvalidArgumentError("qstep must be positive")

    def z_tables(self) -> list[CdfTable]:
        cums = np.zeros((self.z_pmf.shape[0], self.z_pmf.shape[1] + 1), dtype=np.int64)
        np.cumsum(self.z_pmf.astype(np.int64), axis=1, out=cums[:, 1:])
        return [CdfTable(Z_SMIN, Z_SMAX, row) for row in cums]


@dataclass(frozen=True)
class RateModuleBank:
    """Exactly 64 entries indexed by integer qp."""

    entries: tuple[BankEntry, ...]

    def __post_init__(self):
        if len(self.entries) != NUM_ENTRIES:
            raise InvalidArgumentError(f"bank needs {NUM_ENTRIES} entries, got {len(self.entries)}")
        steps = [e.qstep for e in self.entries]
        if not all(b > a for a, b in zip(steps, steps[1:])):
            raise InvalidArgumentError("qstep must be strictly increasing in qp")

    @property
    def channels(self) -> int:
        return self.entries[0].q_e.shape[0]

    @property
    def z_channels(self) -> int:
        return self.entries[0].z_pmf.shape[0]


def select_entry(bank: RateModuleBank, qp: int) -> BankEntry:
    """The exact stored entry for an integer qp."""
    if not isinstance(qp, (int, np.integer)):
        raise InvalidArgumentError("select_entry takes an integer qp; use interpolate_entry")
    if not (QP_MIN <= qp <= QP_MAX):
        raise InvalidArgumentError(f"qp {qp} outside [{QP_MIN}, {QP_MAX}]")
    return bank.entries[int(qp)]


def interpolate_entry(bank: RateModuleBank, qp_real: float) -> BankEntry:
    """Entry for a real-valued qp.

    Scale vectors interpolate linearly between the floor/ceil entries, qstep
    interpolates geometrically, and the z tables come from the nearest integer
    entry (ties toward the lower index). Integral qp returns the stored entry
    exactly.
    """
    qp_real = float(qp_real)
    if not (QP_MIN <= qp_real <= QP_MAX):
        raise InvalidArgumentError(f"qp {qp_real} outside [{QP_MIN}, {QP_MAX}]")
    lo = int(np.floor(qp_real))
    if lo == QP_MAX:
        lo -= 1
    hi = lo + 1
    t = qp_real - lo
    if t == 0.0:
        return bank.entries[lo]
    if t == 1.0:
        return bank.entries[hi]
    a, b = bank.entries[lo], bank.entries[hi]
    nearest = lo if t <= 0.5 else hi
    return BankEntry(
        q_e=(1.0 - t) * a.q_e + t * b.q_e,
        q_d=(1.0 - t) * a.q_d + t * b.q_d,
        q_f=(1.0 - t) * a.q_f + t * b.q_f,
        q_r=(1.0 - t) * a.q_r + t * b.q_r,
        z_pmf=bank.entries[nearest].z_pmf,
        qstep=float(a.qstep ** (1.0 - t) * b.qstep**t),
    )


@dataclass(frozen=True)
class QpSchedule:
    """Base qp plus hierarchical per-frame offsets within a group of 8."""

    base_qp: float
    gop_offsets: tuple[int, ...] = DEFAULT_GOP_OFFSETS

    def __post_init__(self):
        if not (QP_MIN <= self.base_qp <= QP_MAX):
            raise InvalidArgumentError(f"base qp {self.base_qp} outside [{QP_MIN}, {QP_MAX}]")
        if len(self.gop_offsets) != GOP_SIZE:
            raise InvalidArgumentError(f"need {GOP_SIZE} gop offsets")
        object.__setattr__(self, "gop_offsets", tuple(int(o) for o in self.gop_offsets))


def effective_qp(schedule: QpSchedule, frame_index: int) -> int:
    """clip(base + offset[frame mod 8], 0, 63) for an integral base qp."""
    if frame_index < 0:
        raise InvalidArgumentError("frame_index must be >= 0")
    base = schedule.base_qp
    if base != int(base):
        raise InvalidArgumentError("effective_qp needs an integral base qp")
    off = schedule.gop_offsets[frame_index % GOP_SIZE]
    return int(min(max(int(base) + off, QP_MIN), QP_MAX))


def effective_qp_real(schedule: QpSchedule, frame_index: int) -> float:
    """Real-valued variant; equals effective_qp for integral base qp."""
    if frame_index < 0:
        raise InvalidArgumentError("frame_index must be >= 0")
    off = schedule.gop_offsets[frame_index % GOP_SIZE]
    return float(min(max(schedule.base_qp + off, float(QP_MIN)), float(QP_MAX)))


def seed_bank(channels: int, z_channels: int, seed: int = 0) -> RateModuleBank:
    """Deterministic desk-scale bank: log-spaced scales tied to qstep.

    Trained banks are unavailable; the seeded one keeps the structural rate
    behaviour (strictly increasing qstep, encoder scales decaying with qp,
    z priors narrowing with qp) with mild per-channel jitter.
    """
    rng = np.random.default_rng(seed)
    j_e = rng.uniform(0.9, 1.1, channels)
    j_d = rng.uniform(0.9, 1.1, channels)
    j_f = rng.uniform(0.95, 1.05, channels)
    j_r = rng.uniform(0.95, 1.05, channels)
    b_z = rng.uniform(0.8, 1.8, z_channels)
    entries = []
    for qp in range(NUM_ENTRIES):
        decay = 2.0 ** (-qp / 32.0)
        b_fp = np.maximum((b_z * decay * 512.0).round().astype(np.int64), 6)
        rows = laplace_cum_rows(np.zeros(z_channels, dtype=np.int64), b_fp, Z_SMIN, Z_SMAX)
        pmf = np.diff(rows.astype(np.int64), axis=1).astype(np.uint16)
        entries.append(
            BankEntry(
                q_e=j_e * decay,
                q_d=j_d / decay,
                q_f=j_f.copy(),
                q_r=j_r.copy(),
                z_pmf=pmf,
                qstep=qstep_of(qp),
            )
        )
    return RateModuleBank(tuple(entries))


def write_bank(bank: RateModuleBank, path) -> None:
    """Serialize to the NVCB container (little-endian, crc32 checksum)."""
    c = bank.channels
    zc = bank.z_channels
    body = io.BytesIO()
    for e in bank.entries:
        body.write(struct.pack("<d", e.qstep))
        for v in (e.q_e, e.q_d, e.q_f, e.q_r):
            body.write(v.astype("<f8").tobytes())
        body.write(e.z_pmf.astype("<u2").tobytes())
    payload = body.getvalue()
    with open(path, "wb") as fh:
        fh.write(_BANK_MAGIC)
        fh.write(struct.pack("<BHHhh", _BANK_VERSION, c, zc, Z_SMIN, Z_SMAX))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def read_bank(path) -> RateModuleBank:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _BANK_MAGIC:
        raise DecodeError(f"bad bank magic {data[:4]!r}", position=0)
    version, c, zc, zmin, zmax = struct.unpack_from("<BHHhh", data, 4)
    if version != _BANK_VERSION:
        raise DecodeError(f"unsupported bank version {version}", position=4)
    if (zmin, zmax) != (Z_SMIN, Z_SMAX):
        raise ConfigError(f"bank z alphabet [{zmin}, {zmax}] != [{Z_SMIN}, {Z_SMAX}]")
    a_size = zmax - zmin + 1
    rec = 8 + 4 * c * 8 + zc * a_size * 2
    off = 4 + struct.calcsize("<BHHhh")
    need = off + NUM_ENTRIES * rec + 4
    if len(data) != need:
        raise DecodeError(f"bank file length {len(data)} != expected {need}", position=len(data))
    payload = data[off : off + NUM_ENTRIES * rec]
    (crc,) = struct.unpack_from("<I", data, off + NUM_ENTRIES * rec)
    if crc != zlib.crc32(payload):
        raise ConfigError("bank checksum mismatch")
    entries = []
    pos = 0
    for _ in range(NUM_ENTRIES):
        (qstep,) = struct.unpack_from("<d", payload, pos)
        pos += 8
        vecs = []
        for _ in range(4):
            vecs.append(np.frombuffer(payload, dtype="<f8", count=c, offset=pos).copy())
            pos += c * 8
        pmf = (
            np.frombuffer(payload, dtype="<u2", count=zc * a_size, offset=pos)
            .reshape(zc, a_size)
            .copy()
        )
        pos += zc * a_size * 2
        entries.append(BankEntry(*vecs, z_pmf=pmf, qstep=qstep))
    return RateModuleBank(tuple(entries))
