"""Random targets, sample generation and verification reports."""

from __future__ import annotations

import math
import random
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

from . import exactrep, minwidth, narrowing
from .narrowing import CompileConfig, CompileError, ceil_log2
from .netcore import Layer, Network, NetStats, evaluate_float, evaluate_many, format_scalar, stats

MODES = ("sampled", "goodset", "exact")
SAMPLE_EXTRA_BITS = 16


def generate_target(d: int, n: int, L: int, B=1, seed: int = 0, precision: int = 4) -> Network:
    """Random target with hidden widths n and dyadic parameters k/2^precision in [-B, B]."""
    if d > n:
        raise CompileError(f"input dimension d={d} exceeds width n={n}; the construction assumes d <= n")
    if L < 2:
        raise CompileError("targets need L >= 2")
    if d < 1 or precision < 0:
        raise CompileError("d must be positive and precision nonnegative")
    rng = random.Random(seed)
    top = math.floor(Fraction(B) * 2**precision)
    sizes = [d] + [n] * (L - 1) + [1]

    def draw() -> Fraction:
        return Fraction(rng.randint(-top, top), 2**precision)

    layers = []
    for k in range(L):
        rows, cols = sizes[k + 1], sizes[k]
        layers.append(Layer([[draw() for _ in range(cols)] for _ in range(rows)], [draw() for _ in range(rows)], k < L - 1))
    return Network(d, tuple(layers), f"random d{d} n{n} L{L} seed{seed}", "target")


# ---------------------------------------------------------------------------
# sample points


def good_points(cfg: CompileConfig, count: int, seed: int = 0) -> list[list[Fraction]]:
    """Dyadic midpoints of the c0-bit grid inside [-A, A]^d.

    Enumerates them all when there are at most ``count``; otherwise draws
    ``count`` of them at random.
    """
    c0, box, A = cfg.bits.c0, cfg.box, cfg.A
    step = 2 * box / 2**c0

    def point(ks) -> list[Fraction]:
        return [(2 * k + 1) * step / 2 - box for k in ks]

    if 2 ** (c0 * cfg.d) <= count:
        pts = (point(ks) for ks in product(range(2**c0), repeat=cfg.d))
        return [p for p in pts if all(abs(v) <= A for v in p)]
    rng = random.Random(seed)
    out = []
    while len(out) < count:
        p = point([rng.randrange(2**c0) for _ in range(cfg.d)])
        if all(abs(v) <= A for v in p):
            out.append(p)
    return out


def uniform_points(cfg: CompileConfig, count: int, seed: int = 0) -> list[list[Fraction]]:
    """Uniform grid points in [-A, A]^d at resolution c0 + 16 bits."""
    res = cfg.bits.c0 + SAMPLE_EXTRA_BITS
    rng = random.Random(seed)
    return [[-cfg.A + 2 * cfg.A * Fraction(rng.randrange(2**res), 2**res) for _ in range(cfg.d)] for _ in range(count)]


def wide_points(d: int, count: int, seed: int = 0, reach: int = 10**6) -> list[list[Fraction]]:
    """Rationals of both small and large magnitude, for exact comparisons."""
    rng = random.Random(seed)
    out = []
    for i in range(count):
        q = rng.randint(1, 1000)
        scale = reach if i % 2 else 2
        out.append([Fraction(rng.randint(-scale * q, scale * q), q) for _ in range(d)])
    return out


# ---------------------------------------------------------------------------
# evaluation on a worker pool


def _eval_chunk(args):
    net, chunk = args
    return evaluate_many(net, chunk)


def evaluate_points(net: Network, points: Sequence[Sequence], workers: int = 1) -> list[list[Fraction]]:
    if workers <= 1 or len(points) < 2 * workers:
        return evaluate_many(net, points)
    size = -(-len(points) // workers)
    chunks = [list(points[i : i + size]) for i in range(0, len(points), size)]
    with ProcessPoolExecutor(workers) as pool:
        parts = pool.map(_eval_chunk, [(net, ch) for ch in chunks])
        return [row for part in parts for row in part]


# ---------------------------------------------------------------------------
# predicted bounds


@dataclass(frozen=True)
class Bound:
    name: str
    predicted: Fraction
    measured: Fraction

    @property
    def ok(self) -> bool:
        return self.measured <= self.predicted


def _dense_params(width: int, depth: int) -> int:
    return (width * width + width) * depth


def predicted_bounds(target: NetStats, compiled: NetStats, tag: str, cfg: CompileConfig | None, d: int) -> list[Bound]:
    """Guarantees for a compiled net, computed only from the stored stats and config."""
    if tag == "compiled-exact":
        n, L = target.width, target.depth
        width, depth = 2 * (d + L - 1), (2 * n) ** (L - 1) + 2
        weight = max(Fraction(1), target.max_weight)
    elif cfg is None:
        return []
    elif tag == "compiled-narrow":
        width, depth = narrowing.width_bound(cfg), narrowing.depth_bound(cfg)
        weight = narrowing.max_weight_bound(cfg)
    elif tag == "compiled-minwidth":
        width, depth = minwidth.width_bound(cfg), minwidth.depth_bound(cfg)
        weight = minwidth.max_weight_bound(cfg)
    elif tag == "compiled-bounded":
        pre_depth = max(narrowing.depth_bound(cfg), minwidth.depth_bound(cfg))
        pre_weight = max(narrowing.max_weight_bound(cfg), minwidth.max_weight_bound(cfg))
        width = max(narrowing.width_bound(cfg), minwidth.width_bound(cfg))
        depth = pre_depth + pre_depth * ceil_log2(pre_weight) + 2
        weight = Fraction(2)
    else:
        return []
    return [
        Bound("width", Fraction(width), Fraction(compiled.width)),
        Bound("depth", Fraction(depth), Fraction(compiled.depth)),
        Bound("params", Fraction(_dense_params(width, depth)), Fraction(compiled.params)),
        Bound("max_weight", Fraction(weight), compiled.max_weight),
    ]


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class VerificationReport:
    mode: str
    seed: int
    samples: int
    failures: int
    max_error: Fraction
    eps: Fraction | None
    delta: Fraction | None
    slack: float
    target_stats: NetStats
    compiled_stats: NetStats
    compiled_tag: str
    bounds: tuple[Bound, ...]
    error_bound_ok: bool | None = None
    backend: str = "exact"

    @property
    def failure_fraction(self) -> float:
        return self.failures / self.samples if self.samples else 0.0

    @property
    def threshold(self) -> float | None:
        return None if self.delta is None else float(self.delta) + self.slack

    @property
    def bounds_ok(self) -> bool:
        return all(b.ok for b in self.bounds)

    @property
    def certified(self) -> bool:
        return self.backend == "exact"

    @property
    def passed(self) -> bool:
        if not self.certified or not self.bounds_ok or self.samples == 0:
            return False
        if self.mode == "sampled":
            return self.failure_fraction <= self.threshold
        if self.mode == "goodset":
            return self.failures == 0 and self.error_bound_ok is not False
        return self.failures == 0 and self.max_error == 0

    @property
    def verdict(self) -> str:
        if not self.certified:
            return "uncertified"
        return "pass" if self.passed else "fail"

    def render(self) -> str:
        lines = [
            "# verification report",
            f"mode={self.mode}",
            f"backend={self.backend}",
            f"seed={self.seed}",
            f"samples={self.samples}",
        ]
        if self.eps is not None:
            lines.append(f"eps={format_scalar(self.eps)}")
        if self.delta is not None:
            lines += [
                f"delta={format_scalar(self.delta)}",
                f"slack={self.slack:.6g}",
                f"failure_threshold={self.threshold:.6g}",
            ]
        lines += [
            f"failures={self.failures}",
            f"failure_fraction={self.failure_fraction:.6g}",
            f"max_error={float(self.max_error):.6g}",
            f"max_error_exact={format_scalar(self.max_error)}",
        ]
        if self.error_bound_ok is not None:
            lines.append(f"error_bound_ok={'yes' if self.error_bound_ok else 'no'}")
        for label, s in (("target", self.target_stats), ("compiled", self.compiled_stats)):
            lines += [
                f"{label}.width={s.width}",
                f"{label}.depth={s.depth}",
                f"{label}.params={s.params}",
                f"{label}.max_weight={format_scalar(s.max_weight)}",
                f"{label}.max_bits={s.max_bits}",
            ]
        lines.append(f"compiled.tag={self.compiled_tag}")
        for b in self.bounds:
            lines += [
                f"bound.{b.name}.predicted={format_scalar(b.predicted)}",
                f"bound.{b.name}.measured={format_scalar(b.measured)}",
                f"bound.{b.name}.ok={'yes' if b.ok else 'no'}",
            ]
        if not self.certified:
            lines.append("warning=float backend is advisory and certifies nothing")
        lines.append(f"verdict={self.verdict}")
        return "\n".join(lines) + "\n"


def binomial_slack(delta: Fraction, samples: int, d: int) -> float:
    """Three-sigma binomial slack plus the grid discretization allowance."""
    p = float(delta)
    return 3 * math.sqrt(p * (1 - p) / samples) + d * 2.0**-SAMPLE_EXTRA_BITS


def _points(mode: str, cfg: CompileConfig | None, d: int, count: int, seed: int) -> list[list[Fraction]]:
    if mode == "exact":
        if cfg is None:
            return wide_points(d, count, seed)
        half = count // 2
        return uniform_points(cfg, half, seed) + wide_points(d, count - half, seed + 1)
    if cfg is None:
        raise CompileError(f"{mode} verification needs a compile configuration")
    return good_points(cfg, count, seed) if mode == "goodset" else uniform_points(cfg, count, seed)


def _float_errors(target: Network, compiled: Network, points, want) -> list[Fraction]:
    errs = []
    for p, w in zip(points, want):
        got = evaluate_float(compiled, [float(v) for v in p])
        if got.overflow:
            errs.append(Fraction(10**300))
            continue
        errs.append(max(abs(Fraction(g) - t) for g, t in zip(got.values, w)))
    return errs


def verify(
    target: Network,
    compiled: Network,
    cfg: CompileConfig | None,
    samples: int = 100,
    seed: int = 0,
    mode: str = "goodset",
    workers: int = 1,
    backend: str = "exact",
) -> VerificationReport:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if target.d != compiled.d:
        raise CompileError(f"target takes d={target.d} inputs, compiled net takes {compiled.d}")
    if target.d_out != compiled.d_out:
        raise CompileError(f"target has {target.d_out} outputs, compiled net has {compiled.d_out}")
    if cfg is not None and cfg.d != target.d:
        raise CompileError(f"config says d={cfg.d}, target has d={target.d}")
    points = _points(mode, cfg, target.d, samples, seed)
    want = evaluate_points(target, points, workers)
    if backend == "float":
        errors = _float_errors(target, compiled, points, want)
    else:
        got = evaluate_points(compiled, points, workers)
        errors = [max(abs(g - t) for g, t in zip(gs, ts)) for gs, ts in zip(got, want)]

    if mode == "exact":
        bad = [e for e in errors if e != 0]
        kept = errors
    else:
        bad = [e for e in errors if e > cfg.eps]
        kept = [e for e in errors if e <= cfg.eps]
    max_error = max(kept, default=Fraction(0))
    error_bound_ok = None
    if mode == "goodset":
        error_bound_ok = all(cfg.error_bound_holds(e) for e in errors)
    delta = cfg.delta if mode == "sampled" else None
    slack = binomial_slack(cfg.delta, len(points), target.d) if mode == "sampled" else 0.0
    ts, cs = stats(target), stats(compiled)
    return VerificationReport(
        mode=mode,
        seed=seed,
        samples=len(points),
        failures=len(bad),
        max_error=max_error,
        eps=None if cfg is None or mode == "exact" else cfg.eps,
        delta=delta,
        slack=slack,
        target_stats=ts,
        compiled_stats=cs,
        compiled_tag=compiled.tag,
        bounds=tuple(predicted_bounds(ts, cs, compiled.tag, cfg, target.d)),
        error_bound_ok=error_bound_ok,
        backend=backend,
    )


def compile_target(target: Network, cfg: CompileConfig | None, mode: str, depth_ceiling: int = exactrep.DEPTH_CEILING) -> Network:
    """Dispatch to a compiler by mode name."""
    if mode == "exact":
        return exactrep.exact_deep(target, depth_ceiling)
    if cfg is None:
        raise CompileError(f"mode {mode} needs a compile configuration")
    if mode == "narrow":
        return narrowing.compile_narrow_multi(target, cfg)
    if mode == "narrow-bounded":
        return narrowing.bound_weights(narrowing.compile_narrow_multi(target, cfg))
    if mode == "minwidth":
        return minwidth.compile_minwidth(target, cfg)
    raise CompileError(f"unknown compile mode {mode!r}")
