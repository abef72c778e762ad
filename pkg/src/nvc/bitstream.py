"""Normative bitstream container, raw video I/O, padding, and quality metrics.

Stream layout (little-endian):
  "NVCR" | version u8 | width u32 | height u32 | colorspace u8 |
  frame_count u32 | base_qp f64 | gop_offsets 8 x i8 | config_hash 8B | mode u8
then per frame:
  qp f64 | len_z u32 | len_y1 u32 | len_y2 u32 | payloads
Every byte is accounted for; trailing bytes are a decode error.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, InvalidArgumentError

MAGIC = b"NVCR"
VERSION = 1
HEADER_BYTES = 4 + 1 + 4 + 4 + 1 + 4 + 8 + 8 + 8 + 1
CHUNK_HEADER_BYTES = 8 + 4 + 4 + 4
CHUNK_HEADER_BITS = 8 * CHUNK_HEADER_BYTES

_COLORSPACE_CODE = {"rgb": 0, "yuv420": 1}
_COLORSPACE_NAME = {v: k for k, v in _COLORSPACE_CODE.items()}
_MODE_CODE = {"real": 0, "int16": 1}
_MODE_NAME = {v: k for k, v in _MODE_CODE.items()}


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    colorspace: str
    frame_count: int
    base_qp: float
    gop_offsets: tuple[int, ...]
    config_hash: bytes
    mode: str

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError("dims must be >= 1")
        if self.colorspace not in _COLORSPACE_CODE:
            raise InvalidArgumentError(f"unknown colorspace {self.colorspace!r}")
        if self.mode not in _MODE_CODE:
            raise InvalidArgumentError(f"unknown mode {self.mode!r}")
        if len(self.gop_offsets) != 8:
            raise InvalidArgumentError("need 8 gop offsets")
        if len(self.config_hash) != 8:
            raise InvalidArgumentError("config hash must be 8 bytes")
        object.__setattr__(self, "gop_offsets", tuple(int(o) for o in self.gop_offsets))


@dataclass(frozen=True)
class FrameChunk:
    qp: float
    z_bytes: bytes
    y1_bytes: bytes
    y2_bytes: bytes

    @property
    def total_bits(self) -> int:
        return 8 * (len(self.z_bytes) + len(self.y1_bytes) + len(self.y2_bytes)) + CHUNK_HEADER_BITS


def write_stream(header: StreamHeader, chunks) -> bytes:
    chunks = list(chunks)
    if len(chunks) != header.frame_count:
        raise InvalidArgumentError(f"{len(chunks)} chunks != frame_count {header.frame_count}")
    out = bytearray()
    out += MAGIC
    out += struct.pack(
        "<BIIBId8b8sB",
        VERSION,
        header.width,
        header.height,
        _COLORSPACE_CODE[header.colorspace],
        header.frame_count,
        header.base_qp,
        *header.gop_offsets,
        header.config_hash,
        _MODE_CODE[header.mode],
    )
    for ch in chunks:
        out += struct.pack("<dIII", ch.qp, len(ch.z_bytes), len(ch.y1_bytes), len(ch.y2_bytes))
        out += ch.z_bytes + ch.y1_bytes + ch.y2_bytes
    return bytes(out)


def read_stream(data: bytes) -> tuple[StreamHeader, list[FrameChunk]]:
    if len(data) < HEADER_BYTES:
        raise DecodeError(f"stream shorter than header ({len(data)} bytes)", position=len(data))
    if data[:4] != MAGIC:
        raise DecodeError(f"bad stream magic {data[:4]!r}", position=0)
    fields = struct.unpack_from("<BIIBId8b8sB", data, 4)
    version = fields[0]
    if version != VERSION:
        raise DecodeError(f"unsupported stream version {version}", position=4)
    width, height, cspace, frame_count, base_qp = fields[1:6]
    offsets = fields[6:14]
    config_hash, mode_code = fields[14], fields[15]
    if cspace not in _COLORSPACE_NAME:
        raise DecodeError(f"unknown colorspace code {cspace}", position=13)
    if mode_code not in _MODE_NAME:
        raise DecodeError(f"unknown mode code {mode_code}", position=HEADER_BYTES - 1)
    header = StreamHeader(
        width=width,
        height=height,
        colorspace=_COLORSPACE_NAME[cspace],
        frame_count=frame_count,
        base_qp=base_qp,
        gop_offsets=offsets,
        config_hash=config_hash,
        mode=_MODE_NAME[mode_code],
    )
    pos = HEADER_BYTES
    chunks = []
    for i in range(frame_count):
        if pos + CHUNK_HEADER_BYTES > len(data):
            raise DecodeError(f"truncated chunk header at frame {i}", position=pos, chunk_index=i)
        qp, lz, l1, l2 = struct.unpack_from("<dIII", data, pos)
        pos += CHUNK_HEADER_BYTES
        if pos + lz + l1 + l2 > len(data):
            raise DecodeError(f"truncated payload at frame {i}", position=pos, chunk_index=i)
        z = data[pos : pos + lz]
        pos += lz
        y1 = data[pos : pos + l1]
        pos += l1
        y2 = data[pos : pos + l2]
        pos += l2
        chunks.append(FrameChunk(qp=qp, z_bytes=z, y1_bytes=y1, y2_bytes=y2))
    if pos != len(data):
        raise DecodeError(f"{len(data) - pos} trailing bytes after last chunk", position=pos)
    return header, chunks


# --- raw video ----------------------------------------------------------------

def load_yuv420(path, width: int, height: int, frame_count: int) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Planar 8-bit 4:2:0 frames as (Y, U, V) uint8 arrays."""
    if width % 2 or height % 2:
        raise InvalidArgumentError("YUV420 needs even dims")
    fsz = width * height * 3 // 2
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) != fsz * frame_count:
        raise OSError(f"{path}: size {len(data)} != {frame_count} frames x {fsz} bytes")
    frames = []
    for i in range(frame_count):
        off = i * fsz
        y = np.frombuffer(data, np.uint8, width * height, off).reshape(height, width)
        off += width * height
        u = np.frombuffer(data, np.uint8, width * height // 4, off).reshape(height // 2, width // 2)
        off += width * height // 4
        v = np.frombuffer(data, np.uint8, width * height // 4, off).reshape(height // 2, width // 2)
        frames.append((y.copy(), u.copy(), v.copy()))
    return frames


def save_yuv420(path, frames) -> None:
    with open(path, "wb") as fh:
        for y, u, v in frames:
            fh.write(np.ascontiguousarray(y, dtype=np.uint8).tobytes())
            fh.write(np.ascontiguousarray(u, dtype=np.uint8).tobytes())
            fh.write(np.ascontiguousarray(v, dtype=np.uint8).tobytes())


def load_rgb(path, width: int, height: int, frame_count: int) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Planar 8-bit RGB frames as (R, G, B) uint8 arrays."""
    fsz = width * height * 3
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) != fsz * frame_count:
        raise OSError(f"{path}: size {len(data)} != {frame_count} frames x {fsz} bytes")
    frames = []
    for i in range(frame_count):
        planes = []
        for p in range(3):
            off = i * fsz + p * width * height
            planes.append(np.frombuffer(data, np.uint8, width * height, off).reshape(height, width).copy())
        frames.append(tuple(planes))
    return frames


def save_rgb(path, frames) -> None:
    with open(path, "wb") as fh:
        for planes in frames:
            for p in planes:
                fh.write(np.ascontiguousarray(p, dtype=np.uint8).tobytes())


def load_raw(path, width: int, height: int, frame_count: int, colorspace: str):
    if colorspace == "rgb":
        return load_rgb(path, width, height, frame_count)
    return load_yuv420(path, width, height, frame_count)


def save_raw(path, frames, colorspace: str) -> None:
    if colorspace == "rgb":
        save_rgb(path, frames)
    else:
        save_yuv420(path, frames)


# --- padding / cropping ---------------------------------------------------------

def pad_to_multiple(plane: np.ndarray, multiple: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Replicate-edge pad up to the next multiple; returns original dims."""
    h, w = plane.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return plane, (h, w)
    return np.pad(plane, ((0, ph), (0, pw)), mode="edge"), (h, w)


def crop(plane: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    h, w = dims
    return plane[:h, :w]


def pad_frame(planes, colorspace: str):
    """Pad all planes of one frame; luma multiple is 8 (RGB) or 16 (4:2:0)."""
    if colorspace == "rgb":
        padded = [pad_to_multiple(p, 8)[0] for p in planes]
        return tuple(padded), planes[0].shape
    y, u, v = planes
    yp, dims = pad_to_multiple(y, 16)
    up, _ = pad_to_multiple(u, 8)
    vp, _ = pad_to_multiple(v, 8)
    return (yp, up, vp), dims


def crop_frame(planes, dims: tuple[int, int], colorspace: str):
    h, w = dims
    if colorspace == "rgb":
        return tuple(crop(p, (h, w)) for p in planes)
    y, u, v = planes
    return crop(y, (h, w)), crop(u, (h // 2, w // 2)), crop(v, (h // 2, w // 2))


# --- metrics --------------------------------------------------------------------

def psnr(a_frames, b_frames) -> dict[str, float]:
    """Per-plane PSNR in dB across all frames; inf marks identical planes."""
    if len(a_frames) != len(b_frames):
        raise InvalidArgumentError("frame counts differ")
    if not a_frames:
        raise InvalidArgumentError("no frames")
    subsampled = a_frames[0][1].shape != a_frames[0][0].shape
    names = ("Y", "U", "V") if subsampled else ("R", "G", "B")
    out = {}
    for p, name in enumerate(names):
        se = 0.0
        n = 0
        for fa, fb in zip(a_frames, b_frames):
            pa, pb = fa[p], fb[p]
            if pa.shape != pb.shape:
                raise InvalidArgumentError(f"plane {name} dims differ: {pa.shape} vs {pb.shape}")
            d = pa.astype(np.float64) - pb.astype(np.float64)
            se += float((d * d).sum())
            n += d.size
        if se == 0.0:
            out[name] = math.inf
        else:
            out[name] = 10.0 * math.log10(255.0 * 255.0 / (se / n))
    return out


def bpp(stream_len_bytes: int, width: int, height: int, frame_count: int) -> float:
    """Bits per pixel over the original (uncropped) dims, whole stream."""
    return 8.0 * stream_len_bytes / (width * height * frame_count)
