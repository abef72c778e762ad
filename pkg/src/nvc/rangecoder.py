"""Byte-oriented renormalizing range coder over 16-bit cumulative tables.

32-bit state, carry-less: bytes are emitted only once the top byte of the
interval is fixed, so no carry propagation is needed. Total frequency is
always 65536 and every symbol has frequency >= 1. The emitted byte stream has
no length prefix; payload lengths live in the frame chunk headers.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, EncodeError, InvalidArgumentError

MASK = 0xFFFFFFFF
TOP = 1 << 24
BOT = 1 << 16
TOTAL = 1 << 16
FLUSH_BYTES = 4


@dataclass(frozen=True)
class CdfTable:
    """Cumulative frequencies for an integer alphabet [s_min, s_max].

    ``cum`` has length (s_max - s_min + 2) with cum[0] = 0 and
    cum[-1] = 65536, strictly increasing.
    """

    s_min: int
    s_max: int
    cum: np.ndarray

    def __post_init__(self):
        cum = np.ascontiguousarray(self.cum, dtype=np.uint32)
        n = self.s_max - self.s_min + 2
        if self.s_max < self.s_min:
            raise InvalidArgumentError("empty alphabet")
        if cum.shape != (n,):
            raise InvalidArgumentError(f"cum length {cum.shape} != alphabet size + 1 ({n})")
        if cum[0] != 0 or cum[-1] != TOTAL:
            raise InvalidArgumentError("cum must run from 0 to 65536")
        if not (np.diff(cum.astype(np.int64)) >= 1).all():
            raise InvalidArgumentError("cum must be strictly increasing (freq >= 1)")
        cum.flags.writeable = False
        object.__setattr__(self, "cum", cum)

    @property
    def alphabet_size(self) -> int:
        return self.s_max - self.s_min + 1

    def freq(self, symbol: int) -> int:
        i = symbol - self.s_min
        return int(self.cum[i + 1] - self.cum[i])


def uniform_table(s_min: int, s_max: int) -> CdfTable:
    """Closest-to-uniform table with exact total 65536."""
    n = s_max - s_min + 1
    base, rem = divmod(TOTAL, n)
    freq = np.full(n, base, dtype=np.int64)
    freq[:rem] += 1
    cum = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(freq, out=cum[1:])
    return CdfTable(s_min, s_max, cum)


def _encode_core(clo_list, chi_list, out: bytearray) -> bytearray:
    low = 0
    rng = MASK
    append = out.append
    for clo, chi in zip(clo_list, chi_list):
        r = rng >> 16
        low = (low + r * clo) & MASK
        rng = r * (chi - clo)
        while True:
            if (low ^ (low + rng)) < TOP:
                pass
            elif rng < BOT:
                rng = (-low) & (BOT - 1)
            else:
                break
            append((low >> 24) & 0xFF)
            low = (low << 8) & MASK
            rng = (rng << 8) & MASK
    for _ in range(FLUSH_BYTES):
        append((low >> 24) & 0xFF)
        low = (low << 8) & MASK
    return out


def encode_indexed(indices: np.ndarray, cum_rows: np.ndarray) -> bytes:
    """Encode alphabet indices with per-symbol cum rows.

    ``cum_rows`` is (A+1,) shared across symbols or (n, A+1) per symbol.
    """
    n = len(indices)
    if n == 0:
        return bytes(_encode_core((), (), bytearray()))
    idx = np.asarray(indices, dtype=np.int64)
    if cum_rows.ndim == 1:
        if idx.min() < 0 or idx.max() >= cum_rows.shape[0] - 1:
            raise EncodeError("symbol outside table alphabet")
        clo = cum_rows[idx]
        chi = cum_rows[idx + 1]
    else:
        if cum_rows.shape[0] != n:
            raise InvalidArgumentError("need one cum row per symbol")
        if idx.min() < 0 or idx.max() >= cum_rows.shape[1] - 1:
            raise EncodeError("symbol outside table alphabet")
        rows = np.arange(n)
        clo = cum_rows[rows, idx]
        chi = cum_rows[rows, idx + 1]
    return bytes(_encode_core(clo.tolist(), chi.tolist(), bytearray()))


def decode_indexed(data: bytes, cum_rows: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`encode_indexed`; raises DecodeError on truncation."""
    out = np.empty(n, dtype=np.int64)
    if n == 0:
        return out
    shared = cum_rows.ndim == 1
    shared_cum = cum_rows.tolist() if shared else None
    low = 0
    rng = MASK
    code = 0
    pos = 0
    try:
        for _ in range(FLUSH_BYTES):
            code = (code << 8) | data[pos]
            pos += 1
        for i in range(n):
            r = rng >> 16
            cnt = ((code - low) & MASK) // r
            if cnt > TOTAL - 1:
                cnt = TOTAL - 1
            if shared:
                s = bisect_right(shared_cum, cnt) - 1
                clo = shared_cum[s]
                chi = shared_cum[s + 1]
            else:
                row = cum_rows[i]
                s = int(np.searchsorted(row, cnt, side="right")) - 1
                clo = int(row[s])
                chi = int(row[s + 1])
            out[i] = s
            low = (low + r * clo) & MASK
            rng = r * (chi - clo)
            while True:
                if (low ^ (low + rng)) < TOP:
                    pass
                elif rng < BOT:
                    rng = (-low) & (BOT - 1)
                else:
                    break
                code = ((code << 8) | data[pos]) & MASK
                pos += 1
                low = (low << 8) & MASK
                rng = (rng << 8) & MASK
    except IndexError:
        raise DecodeError("truncated range-coded stream", position=pos) from None
    return out


def _as_cum_rows(tables, n: int) -> np.ndarray:
    if isinstance(tables, CdfTable):
        return tables.cum
    tables = list(tables)
    if len(tables) != n:
        raise InvalidArgumentError(f"got {len(tables)} tables for {n} symbols")
    return np.stack([t.cum for t in tables])


def range_encode(symbols, tables) -> bytes:
    """Encode integer symbols; ``tables`` is one CdfTable or one per symbol."""
    symbols = np.asarray(list(symbols), dtype=np.int64)
    n = len(symbols)
    if n == 0:
        return encode_indexed(np.empty(0, dtype=np.int64), np.empty(0))
    if isinstance(tables, CdfTable):
        s_min, s_max = tables.s_min, tables.s_max
    else:
        tables = list(tables)
        if any(t.s_min != tables[0].s_min or t.s_max != tables[0].s_max for t in tables):
            raise InvalidArgumentError("tables in one stream must share an alphabet")
        s_min, s_max = tables[0].s_min, tables[0].s_max
    if symbols.min() < s_min or symbols.max() > s_max:
        raise EncodeError("symbol outside table alphabet")
    return encode_indexed(symbols - s_min, _as_cum_rows(tables, n))


def range_decode(data: bytes, tables) -> list[int]:
    """Decode the exact symbol sequence encoded with the same tables."""
    if isinstance(tables, CdfTable):
        raise InvalidArgumentError("pass a sequence of tables (one per expected symbol)")
    tables = list(tables)
    n = len(tables)
    if n == 0:
        return []
    s_min = tables[0].s_min
    if any(t.s_min != s_min or t.s_max != tables[0].s_max for t in tables):
        raise InvalidArgumentError("tables in one stream must share an alphabet")
    idx = decode_indexed(data, _as_cum_rows(tables, n), n)
    return [int(v) + s_min for v in idx]
