"""NVCW weight container: per-layer conv geometry, real weights, and
optionally precomputed int16 weights, little-endian throughout."""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError, DecodeError
from .model import CodecConfig, LayerDef, ModelWeights, layer_names
from .quant import DEFAULT_SCHEME, quantize_layer
from .tensor import ConvSpec

_MAGIC = b"NVCW"
_VERSION = 1
_COLORSPACE_CODE = {"rgb": 0, "yuv420": 1}
_COLORSPACE_NAME = {v: k for k, v in _COLORSPACE_CODE.items()}


def write_weights(weights: ModelWeights, path, include_int16: bool = True) -> None:
    cfg = weights.config
    out = bytearray()
    out += _MAGIC
    out += struct.pack(
        "<BHBBHBB",
        _VERSION,
        cfg.latent_channels,
        cfg.patch,
        cfg.dc_blocks_per_stage,
        cfg.hyper_channels,
        _COLORSPACE_CODE[cfg.colorspace],
        cfg.extractor_split,
    )
    names = layer_names(cfg)
    out += struct.pack("<H", len(names))
    for name in names:
        ld = weights.layer(name)
        nb = name.encode()
        out += struct.pack("<B", len(nb)) + nb
        s = ld.spec
        out += struct.pack(
            "<HHBBBBH", s.in_channels, s.out_channels, s.kernel[0], s.kernel[1], s.stride, s.padding, s.groups
        )
        out += struct.pack("<B", 1 if include_int16 else 0)
        out += np.ascontiguousarray(ld.w, dtype="<f8").tobytes()
        out += np.ascontiguousarray(ld.b, dtype="<f8").tobytes()
        if include_int16:
            ql = weights.qlayer(name)
            out += np.ascontiguousarray(ql.w_i, dtype="<i2").tobytes()
            out += np.ascontiguousarray(ql.b_i, dtype="<i2").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def read_weights(path) -> ModelWeights:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise DecodeError(f"bad weight magic {data[:4]!r}", position=0)
    try:
        version, c, patch, blocks, hyper, cspace, split = struct.unpack_from("<BHBBHBB", data, 4)
        if version != _VERSION:
            raise DecodeError(f"unsupported weight version {version}", position=4)
        cfg = CodecConfig(
            latent_channels=c,
            patch=patch,
            dc_blocks_per_stage=blocks,
            hyper_channels=hyper,
            colorspace=_COLORSPACE_NAME[cspace],
            extractor_split=split,
        )
        pos = 4 + struct.calcsize("<BHBBHBB")
        (count,) = struct.unpack_from("<H", data, pos)
        pos += 2
        layers: dict[str, LayerDef] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<B", data, pos)
            pos += 1
            name = data[pos : pos + nlen].decode()
            pos += nlen
            ci, co, kh, kw, stride, padding, groups = struct.unpack_from("<HHBBBBH", data, pos)
            pos += struct.calcsize("<HHBBBBH")
            spec = ConvSpec(ci, co, (kh, kw), stride, padding, groups)
            (flags,) = struct.unpack_from("<B", data, pos)
            pos += 1
            wn = int(np.prod(spec.weight_shape))
            w = np.frombuffer(data, dtype="<f8", count=wn, offset=pos).reshape(spec.weight_shape).copy()
            pos += wn * 8
            b = np.frombuffer(data, dtype="<f8", count=co, offset=pos).copy()
            pos += co * 8
            w_i = b_i = None
            if flags & 1:
                w_i = np.frombuffer(data, dtype="<i2", count=wn, offset=pos).reshape(spec.weight_shape).copy()
                pos += wn * 2
                b_i = np.frombuffer(data, dtype="<i2", count=co, offset=pos).copy()
                pos += co * 2
            layers[name] = LayerDef(spec=spec, w=w, b=b, w_i=w_i, b_i=b_i)
    except (struct.error, ValueError) as exc:
        raise DecodeError(f"truncated weight file: {exc}", position=len(data)) from None
    if pos != len(data):
        raise DecodeError("trailing bytes after last layer", position=pos)
    weights = ModelWeights(cfg, layers)
    _verify_int_sections(weights)
    return weights


def _verify_int_sections(weights: ModelWeights) -> None:
    """Stored int16 weights must equal the quantization of the real ones."""
    for name, ld in weights.layers.items():
        if ld.w_i is None:
            continue
        ql = quantize_layer(ld.w, ld.b, ld.spec, DEFAULT_SCHEME)
        if not (np.array_equal(ql.w_i, ld.w_i) and np.array_equal(ql.b_i, ld.b_i)):
            raise ConfigError(f"stored int16 weights for {name!r} do not match the real weights")
