"""Compile a wide shallow ReLU network into a width-max(5d, 10) deep one.

Pipeline: shift and encode the input into one packed word, then for every
target layer simulate it on the packed word (one neuron at a time) and
compress the result back to the working precision.  The last layer is
simulated without an output ReLU and rescaled by 2**(-2*c0).

Also hosts the bounded-weights rewrite based on positive homogeneity of ReLU.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from math import floor

from ._builder import Builder, const
from .gadgets import (
    Fragment,
    _finish,
    chain,
    compose,
    compress_fragment,
    dyadic_ceil,
    dyadic_floor,
    fan_out,
    layer_stream,
    neuron_stream,
    parallel,
    simulate_layer_fragment,
    unit_extract,
    wrap,
)
from .netcore import ONE, ZERO, Layer, Network, stats, to_scalar


class CompileError(ValueError):
    """The target or configuration violates a compiler precondition."""


def ceil_log2(v) -> int:
    """Smallest integer k with 2**k >= v, for rational v > 0."""
    v = Fraction(v)
    if v <= 0:
        raise ValueError("needs a positive value")
    k = v.numerator.bit_length() - v.denominator.bit_length()
    while Fraction(2) ** k < v:
        k += 1
    while Fraction(2) ** (k - 1) >= v:
        k -= 1
    return k


@dataclass(frozen=True)
class BitBudget:
    c0: int
    c: int


@dataclass(frozen=True)
class CompileConfig:
    d: int
    n: int
    L: int
    A: Fraction = Fraction(1)
    B: Fraction = Fraction(1)
    eps: Fraction = Fraction(1, 16)
    delta: Fraction = Fraction(1, 16)
    beta: Fraction = Fraction(1)
    distribution: str = "uniform"
    seed: int = 0
    backend: str = "exact"

    def __post_init__(self):
        for name in ("A", "B", "eps", "delta", "beta"):
            object.__setattr__(self, name, to_scalar(getattr(self, name)))
        if min(self.d, self.n, self.L) < 1:
            raise CompileError("d, n and L must be positive")
        if self.d > self.n:
            raise CompileError(f"input dimension d={self.d} exceeds width n={self.n}; the construction assumes d <= n")
        if self.A < 1 or self.B < 1:
            raise CompileError("A and B must be at least 1")
        if self.eps <= 0:
            raise CompileError("eps must be positive")
        if not 0 < self.delta < 1:
            raise CompileError("delta must lie in (0, 1)")
        if self.beta <= 0:
            raise CompileError("beta must be positive")
        if self.distribution not in ("uniform", "beta-bounded"):
            raise CompileError(f"unknown distribution {self.distribution!r}")
        if self.distribution == "beta-bounded" and self.beta * (2 * self.A) ** self.d < 1:
            raise CompileError("beta is below 1 / (2A)^d, so no density on the box is bounded by it")
        if self.backend not in ("exact", "float"):
            raise CompileError(f"unknown backend {self.backend!r}")

    @property
    def box(self) -> Fraction:
        """Input half-width rounded up to a power of two."""
        return dyadic_ceil(self.A)

    @property
    def bound(self) -> Fraction:
        """Weight bound rounded up to a power of two."""
        return dyadic_ceil(self.B)

    @property
    def bits(self) -> BitBudget:
        return bit_budget(self)

    @property
    def effective_delta(self) -> Fraction:
        """Failure budget as a volume fraction of the power-of-two input cube.

        Uniform inputs on [-A, A]^d see each coordinate's bad set magnified
        by box/A at most; a density bounded by beta sees it magnified by
        beta times the cube volume.
        """
        if self.distribution == "beta-bounded":
            return self.delta / (self.beta * (2 * self.box) ** self.d)
        return self.delta * self.A / self.box

    @property
    def coordinate_delta(self) -> Fraction:
        """Per-coordinate budget of the parallel encoder (power of two)."""
        return dyadic_floor(self.effective_delta / self.d)

    def error_bound_holds(self, err: Fraction) -> bool:
        """err <= (5nB)^L * A * sqrt(d) / 2^c0, decided exactly."""
        scale = Fraction(2**self.bits.c0) / ((5 * self.n * self.bound) ** self.L * self.box)
        return (abs(err) * scale) ** 2 <= self.d


def bit_budget(cfg: CompileConfig) -> BitBudget:
    A, B, n, d, L = cfg.box, cfg.bound, cfg.n, cfg.d, cfg.L
    c0 = max(1, ceil_log2((5 * A * B * n * d / cfg.eps) ** (2 * L)))
    c = 2 * c0 + max(0, ceil_log2(2 * A * d)) + max(0, ceil_log2(((n + 1) * B) ** L))
    return BitBudget(c0, c)


@dataclass(frozen=True)
class QuantizedLayer:
    magnitudes: tuple[tuple[int, ...], ...]
    signs: tuple[tuple[int, ...], ...]
    biases: tuple[int, ...]

    @property
    def rows(self) -> list[tuple[tuple[int, ...], tuple[int, ...], int]]:
        return list(zip(self.magnitudes, self.signs, self.biases))


def check_target(target: Network, cfg: CompileConfig) -> None:
    if target.d != cfg.d:
        raise CompileError(f"target has input dimension {target.d}, config says {cfg.d}")
    if target.depth != cfg.L:
        raise CompileError(f"target has depth {target.depth}, config says {cfg.L}")
    for k, layer in enumerate(target.layers[:-1], 1):
        if layer.rows > cfg.n:
            raise CompileError(f"target layer {k} has {layer.rows} neurons, config allows n={cfg.n}")
    for k, layer in enumerate(target.layers, 1):
        for v in layer.entries():
            if abs(v) > cfg.B:
                raise CompileError(f"target layer {k} has parameter {v} outside [-B, B] with B={cfg.B}")


def quantize(target: Network, cfg: CompileConfig) -> list[QuantizedLayer]:
    """Fixed-point weights: |w| scaled by 2^c0, biases by 2^(2 c0); the first
    layer's biases absorb the input shift x -> x + A."""
    c0 = cfg.bits.c0
    out = []
    for k, layer in enumerate(target.layers):
        mags = tuple(tuple(floor(2**c0 * abs(w)) for w in row) for row in layer.weights)
        signs = tuple(tuple(-1 if w < 0 else 1 for w in row) for row in layer.weights)
        biases = []
        for row_m, row_s, b in zip(mags, signs, layer.bias):
            q = floor(2 ** (2 * c0) * b)
            if k == 0:
                q -= int(cfg.box * 2**c0 * sum(s * m for s, m in zip(row_s, row_m)))
            biases.append(q)
        out.append(QuantizedLayer(mags, signs, tuple(biases)))
    return out


def check_lengths(qlayers: Sequence[QuantizedLayer], cfg: CompileConfig) -> None:
    """Every packed block must fit in c bits for every admissible input.

    Interval propagation over the quantized recursion, plus the closed-form
    bound 2 c0 + log(2Ad) + l log(B(n+1)) on pre-activation lengths.
    """
    bits = cfg.bits
    limit = 2**bits.c
    top = [(2**bits.c0 - 1) * int(2 * cfg.box)] * cfg.d
    for ell, q in enumerate(qlayers, 1):
        nxt = []
        for i, (mags, signs, bias) in enumerate(q.rows):
            for m in mags:
                if m >= limit:
                    raise CompileError(f"layer {ell} neuron {i + 1}: weight {m} needs more than c={bits.c} bits")
            if abs(bias) >= limit:
                raise CompileError(f"layer {ell} neuron {i + 1}: bias {bias} needs more than c={bits.c} bits")
            high = bias + sum(m * z for m, s, z in zip(mags, signs, top) if s > 0)
            if ell < len(qlayers):
                if high >= limit:
                    raise CompileError(
                        f"layer {ell} neuron {i + 1}: worst-case pre-activation {high} exceeds 2^c with c={bits.c}"
                    )
                nxt.append(max(high, 0) >> bits.c0)
        top = nxt
    A, B, n, d = cfg.box, cfg.bound, cfg.n, cfg.d
    for ell in range(1, cfg.L + 1):
        need = 2 * bits.c0 + ceil_log2(2 * A * d) + ceil_log2(((n + 1) * B) ** ell)
        if need > bits.c:
            raise CompileError(f"closed-form length bound {need} exceeds c={bits.c} at layer {ell}")


# ---------------------------------------------------------------------------
# stages


def encode_input_fragment(cfg: CompileConfig, bits: BitBudget | None = None) -> Fragment:
    """x in [-A, A]^d -> packed word whose block i is floor((x_i + A)/(2A) * 2^c0) * 2A.

    Width 5d, depth 3 c0 + 1.
    """
    bits = bits or cfg.bits
    A = cfg.box
    delta = cfg.coordinate_delta
    b = Builder(cfg.d)
    ts = [(x + A) / (2 * A) for x in b.inputs()]
    cur = unit_extract(b, ts, bits.c0, [delta] * cfg.d)
    word = const(0)
    for v in cur:
        word = word * 2**bits.c + v * (2 * A)
    return _finish(b, [word], 5 * cfg.d, 3 * bits.c0 + 1)


def output_fragment(q: QuantizedLayer, bits: BitBudget, n_in: int) -> Fragment:
    """Simulate the affine output layer on a packed word; one output per row."""
    frags = []
    for mags, signs, bias in q.rows:
        b = Builder(1)
        (x,) = b.inputs()
        pos, neg, _ = neuron_stream(b, x, bits.c, n_in, mags, signs, [])
        out = (pos - neg + bias) / 2 ** (2 * bits.c0)
        frags.append(_finish(b, [out], 8, 2 * n_in * bits.c + 2, (False,)))
    merged = frags[0]
    for f in frags[1:]:
        merged = parallel(merged, f)
    return merged


def hidden_stages(qlayers: Sequence[QuantizedLayer], bits: BitBudget, d: int) -> list[tuple[str, Fragment]]:
    """Layer simulators and compressors for every hidden layer."""
    stages = []
    n_in = d
    for ell, q in enumerate(qlayers[:-1], 1):
        n_out = len(q.biases)
        stages.append((f"layer {ell}", simulate_layer_fragment(q.rows, bits.c, n_in)))
        stages.append((f"compress {ell}", compress_fragment(bits.c, bits.c0, n_out)))
        n_in = n_out
    return stages


def downstream_stages(target: Network, cfg: CompileConfig) -> list[tuple[str, Fragment]]:
    """Everything after the input encoder, shared by every approximate compiler."""
    check_target(target, cfg)
    qlayers = quantize(target, cfg)
    check_lengths(qlayers, cfg)
    bits = cfg.bits
    stages = hidden_stages(qlayers, bits, cfg.d)
    n_in = target.layers[-1].cols
    last = output_fragment(qlayers[-1], bits, n_in)
    if last.n_in > 1:
        label, prev = stages[-1] if stages else ("", None)
        if prev is None:
            raise CompileError("multiple outputs need at least one hidden layer")
        stages[-1] = (label, compose(prev, fan_out(last.n_in), merge=True))
    stages.append(("output", last))
    return stages


def narrow_stages(target: Network, cfg: CompileConfig) -> list[tuple[str, Fragment]]:
    return [("encode", encode_input_fragment(cfg))] + downstream_stages(target, cfg)


def compile_narrow(target: Network, cfg: CompileConfig) -> Network:
    if target.d_out != 1:
        raise CompileError("compile_narrow handles one output; use compile_narrow_multi")
    return compile_narrow_multi(target, cfg)


def compile_narrow_multi(target: Network, cfg: CompileConfig) -> Network:
    frag = chain(*(f for _, f in narrow_stages(target, cfg)))
    return wrap(frag, f"{target.name} narrow".strip(), "compiled-narrow")


def width_bound(cfg: CompileConfig) -> int:
    return max(5 * cfg.d, 10)


def downstream_depth(cfg: CompileConfig) -> int:
    """Layers after the encoder when every hidden layer has n neurons."""
    c = cfg.bits.c
    depth, n_in = 0, cfg.d
    for _ in range(cfg.L - 1):
        depth += cfg.n * (2 * n_in * c + 2) + 1 + 2 * cfg.n * c + 2
        n_in = cfg.n
    return depth + 2 * n_in * c + 2


def depth_bound(cfg: CompileConfig) -> int:
    return 3 * cfg.bits.c0 + 1 + downstream_depth(cfg)


def downstream_weight_bound(cfg: CompileConfig) -> Fraction:
    bits = cfg.bits
    return Fraction(2) ** (max(cfg.n, cfg.d) * bits.c + 4)


def max_weight_bound(cfg: CompileConfig) -> Fraction:
    encoder = Fraction(2) ** ((cfg.d - 1) * cfg.bits.c + 5) * cfg.box / cfg.coordinate_delta
    return max(encoder, downstream_weight_bound(cfg))


# ---------------------------------------------------------------------------
# bounded weights


@dataclass(frozen=True)
class BoundedWeightsPlan:
    C: Fraction
    depth: int
    alpha: int
    beta_factor: Fraction
    schedule: str
    exponents: tuple[int, ...] = field(default=())

    @property
    def total_scale(self) -> Fraction:
        return Fraction(2) ** self.alpha * self.beta_factor


UNIFORM_LIMIT = 4096


def _max_entry(net: Network) -> Fraction:
    return stats(net).max_weight


def plan_bounded_weights(net: Network, schedule: str = "auto") -> BoundedWeightsPlan:
    """Choose how to divide each layer so every parameter lands in [-2, 2].

    ``uniform`` divides every layer by the largest parameter C, so the
    output must be multiplied back by C^depth.  ``layerwise`` divides layer
    i by the smallest power of two that suffices, keeping denominators
    small when C^depth would be astronomically large.  ``auto`` picks
    uniform unless C^depth needs more than UNIFORM_LIMIT bits.
    """
    C = _max_entry(net)
    depth = net.depth
    if schedule not in ("auto", "uniform", "layerwise"):
        raise ValueError(f"unknown schedule {schedule!r}")
    if schedule == "auto":
        schedule = "uniform" if C <= 2 or depth * ceil_log2(C) <= UNIFORM_LIMIT else "layerwise"
    if schedule == "uniform":
        total = C**depth if C else ONE
        alpha = max(0, total.numerator.bit_length() - total.denominator.bit_length())
        if Fraction(2) ** alpha > total:
            alpha -= 1
        alpha = max(alpha, 0)
        return BoundedWeightsPlan(C, depth, alpha, total / 2**alpha, "uniform")
    exps = []
    scale = ONE
    for layer in net.layers:
        m = max(
            max((abs(w) for row in layer.weights for w in row), default=ZERO),
            max((abs(b) for b in layer.bias), default=ZERO) / scale,
        )
        k = max(0, ceil_log2(m) - 1) if m else 0
        exps.append(k)
        scale *= 2**k
    return BoundedWeightsPlan(C, depth, sum(exps), ONE, "layerwise", tuple(exps))


def _diag(values: Sequence[Fraction], relu: bool = True) -> Layer:
    k = len(values)
    return Layer([[values[i] if i == j else ZERO for j in range(k)] for i in range(k)], [ZERO] * k, relu)


def bound_weights(net: Network, schedule: str = "auto") -> Network:
    """Rewrite net so every weight and bias has magnitude at most 2, computing
    exactly the same function."""
    plan = plan_bounded_weights(net, schedule)
    if plan.C <= 2:
        return net
    if plan.schedule == "uniform":
        divisors = [plan.C] * plan.depth
    else:
        divisors = [Fraction(2) ** k for k in plan.exponents]
    layers = []
    scale = ONE
    for layer, s in zip(net.layers, divisors):
        scale *= s
        layers.append(Layer([[w / s for w in row] for row in layer.weights], [b / scale for b in layer.bias], True))
    last = layers.pop()
    m = last.rows
    layers.append(
        Layer(
            list(last.weights) + [[-w for w in row] for row in last.weights],
            list(last.bias) + [-b for b in last.bias],
            True,
        )
    )
    doubling = _diag([Fraction(2)] * (2 * m))
    layers += [doubling] * plan.alpha
    layers.append(_diag([plan.beta_factor] * (2 * m)))
    recombine = Layer(
        [[ONE if j == i else -ONE if j == i + m else ZERO for j in range(2 * m)] for i in range(m)],
        [ZERO] * m,
        False,
    )
    layers.append(recombine)
    return Network(net.d, tuple(layers), f"{net.name} bounded".strip(), "compiled-bounded")
