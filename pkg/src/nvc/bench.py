"""Complexity lab: independently control MAC count, latent size, and module
count, then measure wall time on a minimal conv-stack workload.

The analytic triple for a stack of N dense k x k conv blocks on a C x H x W
tensor is P_comp = N * k^2 * C^2 * H * W, P_size = C * H * W, P_num = N.
The planner solves for configs that vary exactly one quantity while the
other two are held, verified in exact integer arithmetic.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidArgumentError, PlanningError

BENCH_KERNEL = 1  # 1x1 dense blocks isolate the three quantities


@dataclass(frozen=True)
class BenchConfig:
    n_blocks: int
    channels: int
    height: int
    width: int
    name: str = ""

    def __post_init__(self):
        if min(self.n_blocks, self.channels, self.height, self.width) < 1:
            raise InvalidArgumentError("all bench dims must be positive")


@dataclass(frozen=True)
class ComplexityTriple:
    p_comp: int
    p_size: int
    p_num: int


def analytic_metrics(cfg: BenchConfig) -> ComplexityTriple:
    hw = cfg.height * cfg.width
    return ComplexityTriple(
        p_comp=cfg.n_blocks * BENCH_KERNEL**2 * cfg.channels**2 * hw,
        p_size=cfg.channels * hw,
        p_num=cfg.n_blocks,
    )


def _scale_dims(h: int, w: int, ratio: Fraction) -> tuple[int, int]:
    """Scale the spatial area by ``ratio`` keeping integer dims."""
    for wh, ww in ((1, ratio), (ratio, 1)):
        nh, nw = h * wh, w * ww
        if nh.denominator == 1 and nw.denominator == 1 and nh >= 1 and nw >= 1:
            return int(nh), int(nw)
    # split the ratio evenly across both dims when possible
    import math

    num_r = math.isqrt(ratio.numerator)
    den_r = math.isqrt(ratio.denominator)
    if num_r * num_r == ratio.numerator and den_r * den_r == ratio.denominator:
        side = Fraction(num_r, den_r)
        nh, nw = h * side, w * side
        if nh.denominator == 1 and nw.denominator == 1 and nh >= 1 and nw >= 1:
            return int(nh), int(nw)
    raise PlanningError(f"cannot scale {h}x{w} area by {ratio} with integer dims")


def _as_int(x: Fraction, what: str) -> int:
    if x.denominator != 1 or x < 1:
        raise PlanningError(f"{what} = {x} is not a positive integer")
    return int(x)


def plan_isocontrol(base: BenchConfig, vary: str, factors) -> list[BenchConfig]:
    """Configs where exactly ``vary`` in {comp, size, num} scales by each factor.

    comp x f: (f*C, HW/f, N); size x f: (C/f, f^2*HW, N); num x f: (C/f, f*HW, f*N).
    Raises PlanningError naming the conflicting quantity when integer dims
    cannot realize a factor.
    """
    if vary not in ("comp", "size", "num"):
        raise InvalidArgumentError("vary must be comp, size, or num")
    base_m = analytic_metrics(base)
    out = [BenchConfig(base.n_blocks, base.channels, base.height, base.width, name="base")]
    for factor in factors:
        f = Fraction(factor).limit_denominator(1 << 20)
        if f <= 0:
            raise PlanningError(f"factor {factor} must be positive")
        if vary == "comp":
            c = _as_int(base.channels * f, "channels")
            h, w = _scale_dims(base.height, base.width, 1 / f)
            n = base.n_blocks
        elif vary == "size":
            c = _as_int(Fraction(base.channels) / f, "channels")
            h, w = _scale_dims(base.height, base.width, f * f)
            n = base.n_blocks
        else:
            n = _as_int(base.n_blocks * f, "block count")
            c = _as_int(Fraction(base.channels) / f, "channels")
            h, w = _scale_dims(base.height, base.width, f)
        cfg = BenchConfig(n, c, h, w, name=f"{vary}x{factor}")
        m = analytic_metrics(cfg)
        held = {
            "comp": ("p_size", "p_num"),
            "size": ("p_comp", "p_num"),
            "num": ("p_comp", "p_size"),
        }[vary]
        for q in held:
            if getattr(m, q) != getattr(base_m, q):
                raise PlanningError(f"planner failed to hold {q}: {getattr(m, q)} != {getattr(base_m, q)}")
        varied = {"comp": "p_comp", "size": "p_size", "num": "p_num"}[vary]
        if Fraction(getattr(m, varied), getattr(base_m, varied)) != f:
            raise PlanningError(f"{varied} factor is {getattr(m, varied) / getattr(base_m, varied)}, wanted {f}")
        out.append(cfg)
    return out


def run_bench(configs, repeats: int = 20, warmup: int = 3, seed: int = 0) -> list[dict]:
    """Median/IQR wall time per config for the N-block conv stack."""
    if warmup < 3 or repeats < 20:
        raise InvalidArgumentError("need warmup >= 3 and repeats >= 20")
    rows = []
    rng = np.random.default_rng(seed)
    for cfg in configs:
        w = [
            rng.standard_normal((cfg.channels, cfg.channels)).astype(np.float32) * 0.1
            for _ in range(cfg.n_blocks)
        ]
        x0 = rng.standard_normal((cfg.channels, cfg.height * cfg.width)).astype(np.float32)

        def step():
            x = x0
            for wi in w:
                x = wi @ x
            return x

        for _ in range(warmup):
            step()
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            step()
            times.append((time.perf_counter() - t0) * 1e3)
        m = analytic_metrics(cfg)
        q25, q50, q75 = np.percentile(times, [25, 50, 75])
        rows.append(
            {
                "name": cfg.name or f"N{cfg.n_blocks}_C{cfg.channels}_{cfg.height}x{cfg.width}",
                "n_blocks": cfg.n_blocks,
                "channels": cfg.channels,
                "height": cfg.height,
                "width": cfg.width,
                "p_comp": m.p_comp,
                "p_size": m.p_size,
                "p_num": m.p_num,
                "median_ms": float(q50),
                "iqr_ms": float(q75 - q25),
            }
        )
    return rows


_COLUMNS = [
    "name", "n_blocks", "channels", "height", "width",
    "p_comp", "p_size", "p_num", "median_ms", "iqr_ms",
]


def write_report(rows, table_path, plot_path=None) -> None:
    """Delimiter-separated table plus a JSON plot-data file."""
    with open(table_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in _COLUMNS})
    if plot_path is not None:
        with open(plot_path, "w") as fh:
            json.dump({"columns": _COLUMNS, "rows": rows}, fh, indent=1)


def speedup_vs_reference(rows, base_name: str = "base") -> list[dict]:
    """Measured speedup of each config against the base row, with the
    linear/quadratic reference ratios for channel sweeps."""
    base = next(r for r in rows if r["name"] == base_name)
    out = []
    for r in rows:
        if r is base:
            continue
        out.append(
            {
                "name": r["name"],
                "speedup": base["median_ms"] / r["median_ms"] if r["median_ms"] else float("inf"),
                "comp_ratio": base["p_comp"] / r["p_comp"],
                "size_ratio": base["p_size"] / r["p_size"],
                "num_ratio": base["p_num"] / r["p_num"],
            }
        )
    return out
