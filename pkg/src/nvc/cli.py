"""Command-line front end: encode, decode, roundtrip, psnr, bench, info,
genweights. All randomness flows from --seed; int16 outputs are independent
of --threads."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import bench as bench_mod
from . import bitstream as bs
from . import model as md
from . import pipeline as pl
from .errors import NvcError
from .rate import DEFAULT_GOP_OFFSETS, QP_MAX, QP_MIN, read_bank, seed_bank, write_bank
from .weights_io import read_weights, write_weights


def _parse_offsets(text: str) -> tuple[int, ...]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 8:
        raise argparse.ArgumentTypeError("need exactly 8 comma-separated gop offsets")
    return tuple(parts)


def _add_common_coding_args(p: argparse.ArgumentParser):
    p.add_argument("--weights", required=True, help="NVCW weight file")
    p.add_argument("--bank", required=True, help="NVCB rate module bank")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--parallelism", choices=["serial", "overlapped"], default="serial")


def _add_encode_args(p: argparse.ArgumentParser):
    p.add_argument("--input", required=True, help="raw planar 8-bit video")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--qp", type=float, required=True, help="base qp in [0, 63]; real values interpolate")
    p.add_argument("--mode", choices=["real", "int16"], default="int16")
    p.add_argument("--gop-offsets", type=_parse_offsets, default=DEFAULT_GOP_OFFSETS)
    _add_common_coding_args(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nvc", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode raw video to a bitstream")
    _add_encode_args(p)
    p.add_argument("--output", required=True)

    p = sub.add_parser("decode", help="decode a bitstream to raw video")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_common_coding_args(p)

    p = sub.add_parser("roundtrip", help="encode then decode, report quality")
    _add_encode_args(p)
    p.add_argument("--stream", help="also keep the bitstream here")
    p.add_argument("--output", help="also keep the reconstruction here")

    p = sub.add_parser("psnr", help="per-plane PSNR between two raw videos")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--colorspace", choices=["rgb", "yuv420"], default="yuv420")
    p.add_argument("--stream", help="bitstream whose size sets the reported BPP")

    p = sub.add_parser("bench", help="operational vs computational complexity lab")
    p.add_argument("--vary", choices=["comp", "size", "num"], default="comp")
    p.add_argument("--factors", default="0.5,0.25")
    p.add_argument("--blocks", type=int, default=8)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True, help="report table (CSV)")
    p.add_argument("--plot-data", help="JSON plot data file")

    p = sub.add_parser("info", help="dump stream header and chunk table")
    p.add_argument("--input", required=True)

    p = sub.add_parser("genweights", help="emit seeded deterministic weight/bank files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--colorspace", choices=["rgb", "yuv420"], default="rgb")
    p.add_argument("--weights", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--no-int16", action="store_true", help="skip precomputed int16 weight sections")
    return ap


def _check_qp(ap: argparse.ArgumentParser, qp: float):
    if not (QP_MIN <= qp <= QP_MAX):
        ap.error(f"--qp {qp} outside [{QP_MIN}, {QP_MAX}]")


def _load_model(args):
    weights = read_weights(args.weights)
    bank = read_bank(args.bank)
    return weights, bank


def _encode_from_args(args) -> pl.EncodeResult:
    weights, bank = _load_model(args)
    frames = bs.load_raw(args.input, args.width, args.height, args.frames, weights.config.colorspace)
    settings = pl.CodecSettings(
        base_qp=args.qp,
        gop_offsets=args.gop_offsets,
        mode=args.mode,
        threads=args.threads,
        parallelism=args.parallelism,
    )
    return pl.encode_video(frames, weights, bank, settings)


def _print_encode_summary(res: pl.EncodeResult, width: int, height: int, frames: int):
    for i, ch in enumerate(res.chunks):
        print(
            f"frame {i}: qp={ch.qp:g} bits={ch.total_bits} "
            f"z={len(ch.z_bytes)} y1={len(ch.y1_bytes)} y2={len(ch.y2_bytes)}"
        )
    print(
        f"total bytes={len(res.stream)} bpp={bs.bpp(len(res.stream), width, height, frames):.6f} "
        f"time={res.elapsed_s:.3f}s"
    )
    if res.stats.feature_clips or res.stats.weight_clips:
        print(
            f"saturation: features={res.stats.feature_clips} weights={res.stats.weight_clips}",
            file=sys.stderr,
        )


def cmd_encode(ap, args) -> int:
    _check_qp(ap, args.qp)
    res = _encode_from_args(args)
    with open(args.output, "wb") as fh:
        fh.write(res.stream)
    _print_encode_summary(res, args.width, args.height, args.frames)
    return 0


def cmd_decode(ap, args) -> int:
    weights, bank = _load_model(args)
    with open(args.input, "rb") as fh:
        stream = fh.read()
    res = pl.decode_video(stream, weights, bank, threads=args.threads, parallelism=args.parallelism)
    bs.save_raw(args.output, res.frames, res.header.colorspace)
    print(
        f"decoded {len(res.frames)} frames {res.header.width}x{res.header.height} "
        f"({res.header.colorspace}, {res.header.mode}) time={res.elapsed_s:.3f}s"
    )
    return 0


def cmd_roundtrip(ap, args) -> int:
    _check_qp(ap, args.qp)
    weights, bank = _load_model(args)
    frames = bs.load_raw(args.input, args.width, args.height, args.frames, weights.config.colorspace)
    settings = pl.CodecSettings(
        base_qp=args.qp,
        gop_offsets=args.gop_offsets,
        mode=args.mode,
        threads=args.threads,
        parallelism=args.parallelism,
    )
    res = pl.encode_video(frames, weights, bank, settings)
    dec = pl.decode_video(res.stream, weights, bank, threads=args.threads, parallelism=args.parallelism)
    if args.stream:
        with open(args.stream, "wb") as fh:
            fh.write(res.stream)
    if args.output:
        bs.save_raw(args.output, dec.frames, weights.config.colorspace)
    _print_encode_summary(res, args.width, args.height, args.frames)
    drift = max(
        float(np.max(np.abs(a.data.astype(np.float64) - b.data.astype(np.float64))))
        for a, b in zip(res.latents, dec.latents)
    )
    print(f"max latent drift={drift:g}")
    for name, val in bs.psnr(frames, dec.frames).items():
        print(f"psnr {name}={val:.3f} dB")
    return 0


def cmd_psnr(ap, args) -> int:
    ref = bs.load_raw(args.ref, args.width, args.height, args.frames, args.colorspace)
    test = bs.load_raw(args.test, args.width, args.height, args.frames, args.colorspace)
    for name, val in bs.psnr(ref, test).items():
        print(f"psnr {name}={val if val != float('inf') else 'inf'}" + ("" if val == float("inf") else " dB"))
    if args.stream:
        with open(args.stream, "rb") as fh:
            n = len(fh.read())
        print(f"bpp={bs.bpp(n, args.width, args.height, args.frames):.6f}")
    return 0


def cmd_bench(ap, args) -> int:
    factors = [float(f) for f in args.factors.split(",") if f]
    base = bench_mod.BenchConfig(args.blocks, args.channels, args.height, args.width, name="base")
    configs = bench_mod.plan_isocontrol(base, args.vary, factors)
    rows = bench_mod.run_bench(configs, repeats=args.repeats, seed=args.seed)
    bench_mod.write_report(rows, args.output, args.plot_data)
    for r in rows:
        print(
            f"{r['name']}: P_comp={r['p_comp']} P_size={r['p_size']} P_num={r['p_num']} "
            f"median={r['median_ms']:.3f}ms iqr={r['iqr_ms']:.3f}ms"
        )
    for s in bench_mod.speedup_vs_reference(rows):
        print(
            f"{s['name']}: speedup={s['speedup']:.2f}x vs comp-ratio {s['comp_ratio']:.2f}x "
            f"(size-ratio {s['size_ratio']:.2f}x, num-ratio {s['num_ratio']:.2f}x)"
        )
    return 0


def cmd_info(ap, args) -> int:
    with open(args.input, "rb") as fh:
        data = fh.read()
    header, chunks = bs.read_stream(data)
    print(f"magic=NVCR version={bs.VERSION}")
    print(
        f"width={header.width} height={header.height} colorspace={header.colorspace} "
        f"mode={header.mode} frames={header.frame_count}"
    )
    print(f"base_qp={header.base_qp:g} gop_offsets={','.join(str(o) for o in header.gop_offsets)}")
    print(f"config_hash={header.config_hash.hex()}")
    for i, ch in enumerate(chunks):
        print(
            f"frame {i}: qp={ch.qp:g} len_z={len(ch.z_bytes)} len_y1={len(ch.y1_bytes)} "
            f"len_y2={len(ch.y2_bytes)} bits={ch.total_bits}"
        )
    return 0


def cmd_genweights(ap, args) -> int:
    config = md.CodecConfig(
        latent_channels=args.channels,
        dc_blocks_per_stage=args.blocks,
        colorspace=args.colorspace,
    )
    weights = md.generate_weights(config, seed=args.seed)
    write_weights(weights, args.weights, include_int16=not args.no_int16)
    bank = seed_bank(config.latent_channels, config.hyper_channels, seed=args.seed)
    write_bank(bank, args.bank)
    print(f"weights={args.weights} bank={args.bank} config_hash={md.weights_hash(weights).hex()}")
    return 0


_COMMANDS = {
    "encode": cmd_encode,
    "decode": cmd_decode,
    "roundtrip": cmd_roundtrip,
    "psnr": cmd_psnr,
    "bench": cmd_bench,
    "info": cmd_info,
    "genweights": cmd_genweights,
}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return _COMMANDS[args.command](ap, args)
    except (NvcError, OSError) as exc:
        extra = ""
        if getattr(exc, "chunk_index", None) is not None:
            extra = f" (chunk {exc.chunk_index})"
        print(f"nvc {args.command}: {exc}{extra}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
