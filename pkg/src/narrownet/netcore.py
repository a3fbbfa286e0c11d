"""Layered ReLU network IR with exact rational evaluation.

Every weight, bias and activation is a :class:`fractions.Fraction`.  The
exact evaluator works on batches: each wire holds a numpy object array of
integer numerators over one shared denominator, so a layer costs a handful
of vectorised big-integer operations regardless of batch size.
"""

from __future__ import annotations

import math
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, reduce

import numpy as np

Scalar = Fraction

ZERO = Fraction(0)
ONE = Fraction(1)

TAGS = ("target", "compiled-narrow", "compiled-minwidth", "compiled-exact", "compiled-bounded")
FLOAT_SAFE_BITS = 50


class NetworkError(ValueError):
    """Structural problem with a network or its input."""


def to_scalar(value) -> Fraction:
    """Coerce ints, Fractions, decimal strings and "p/q" strings to a Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        raise TypeError("floats are not exact; pass a Fraction or a string")
    return Fraction(value)


def _vector(values: Iterable) -> tuple[Fraction, ...]:
    return tuple(to_scalar(v) for v in values)


@dataclass(frozen=True)
class Layer:
    weights: tuple[tuple[Fraction, ...], ...]
    bias: tuple[Fraction, ...]
    relu: bool = True

    def __post_init__(self):
        weights = tuple(_vector(row) for row in self.weights)
        bias = _vector(self.bias)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)
        if len(bias) != len(weights):
            raise NetworkError(f"bias length {len(bias)} != weight rows {len(weights)}")
        if not weights:
            raise NetworkError("layer has no neurons")
        cols = {len(row) for row in weights}
        if len(cols) != 1:
            raise NetworkError("ragged weight matrix")
        if cols.pop() == 0:
            raise NetworkError("layer has no inputs")

    @property
    def rows(self) -> int:
        return len(self.weights)

    @property
    def cols(self) -> int:
        return len(self.weights[0])

    @property
    def params(self) -> int:
        return self.rows * self.cols + self.rows

    def entries(self) -> Iterable[Fraction]:
        for row in self.weights:
            yield from row
        yield from self.bias

    @cached_property
    def kernel(self) -> _Kernel:
        return _Kernel.build(self)


@dataclass(frozen=True)
class _Kernel:
    """Integer form of a layer: row i computes (sum num*x_j + bias_i) / den."""

    den: int
    rows: tuple[tuple[tuple[int, int], ...], ...]
    bias: tuple[int, ...]
    relu: bool
    scale: tuple[Fraction, ...] | None  # diagonal factors when the layer only rescales

    @classmethod
    def build(cls, layer: Layer) -> _Kernel:
        den = math.lcm(*(v.denominator for v in layer.entries()))
        rows = tuple(
            tuple((j, int(w * den)) for j, w in enumerate(row) if w) for row in layer.weights
        )
        bias = tuple(int(b * den) for b in layer.bias)
        scale = None
        if layer.relu and layer.rows == layer.cols and not any(bias):
            if all(len(r) == 1 and r[0][0] == i and r[0][1] > 0 for i, r in enumerate(rows)):
                scale = tuple(layer.weights[i][i] for i in range(layer.rows))
        return cls(den, rows, bias, layer.relu, scale)


def _check_chain(n_in: int, layers: Sequence[Layer], what: str) -> None:
    width = n_in
    for k, layer in enumerate(layers, 1):
        if layer.cols != width:
            raise NetworkError(f"{what}: layer {k} expects {layer.cols} inputs but receives {width}")
        width = layer.rows


@dataclass(frozen=True)
class Network:
    d: int
    layers: tuple[Layer, ...]
    name: str = ""
    tag: str = "target"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.d < 1:
            raise NetworkError("input dimension must be positive")
        if not self.layers:
            raise NetworkError("network has no layers")
        if self.tag not in TAGS:
            raise NetworkError(f"unknown provenance tag {self.tag!r}")
        _check_chain(self.d, self.layers, "network")
        for k, layer in enumerate(self.layers[:-1], 1):
            if not layer.relu:
                raise NetworkError(f"layer {k} is identity-activated but not final")
        if self.layers[-1].relu:
            raise NetworkError("final layer must be identity-activated")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def d_out(self) -> int:
        return self.layers[-1].rows

    def __call__(self, x: Sequence) -> list[Fraction]:
        return evaluate(self, x)


# ---------------------------------------------------------------------------
# exact evaluation


def _plan(layers: Sequence[Layer]) -> list[tuple]:
    """Turn layers into steps, collapsing runs of identical pure rescalings."""
    steps: list[tuple] = []
    prev_relu = False
    for layer in layers:
        k = layer.kernel
        if k.scale is not None and prev_relu:
            if steps and steps[-1][0] == "scale" and steps[-1][1] == k.scale:
                steps[-1] = ("scale", k.scale, steps[-1][2] + 1)
            else:
                steps.append(("scale", k.scale, 1))
        else:
            steps.append(("affine", k))
        prev_relu = layer.relu
    return steps


def _reduce(state: list[np.ndarray], den: int) -> tuple[list[np.ndarray], int]:
    if den == 1:
        return state, den
    if den & (den - 1) == 0:
        bits = reduce(lambda acc, a: acc | int(np.bitwise_or.reduce(a)), state, 0)
        if bits == 0:
            return [np.zeros_like(a) for a in state], 1
        shift = min((bits & -bits).bit_length() - 1, den.bit_length() - 1)
        if shift:
            state = [a >> shift for a in state]
            den >>= shift
        return state, den
    g = den
    for a in state:
        g = math.gcd(g, *a.tolist())
        if g == 1:
            return state, den
    return [a // g for a in state], den // g


def _affine(k: _Kernel, state: list[np.ndarray], den: int, batch: int):
    out = []
    for terms, b in zip(k.rows, k.bias):
        acc = None
        for j, w in terms:
            t = state[j] if w == 1 else -state[j] if w == -1 else state[j] * w
            acc = t if acc is None else acc + t
        if acc is None:
            acc = np.full(batch, b * den, dtype=object)
        elif b:
            acc = acc + b * den
        if k.relu:
            acc = np.maximum(acc, 0)
        out.append(acc)
    return _reduce(out, den * k.den)


def _scale(factors: tuple[Fraction, ...], times: int, state: list[np.ndarray], den: int):
    dens = {f.denominator for f in factors}
    common = math.lcm(*dens) ** times
    out = []
    for a, f in zip(state, factors):
        num = f.numerator**times * (common // f.denominator**times)
        out.append(a if num == 1 else a * num)
    return _reduce(out, den * common)


def run_layers(layers: Sequence[Layer], n_in: int, xs: Sequence[Sequence]) -> list[list[Fraction]]:
    """Evaluate a chain of layers exactly on a batch of input vectors."""
    _check_chain(n_in, layers, "evaluation")
    rows = [_vector(x) for x in xs]
    for i, x in enumerate(rows):
        if len(x) != n_in:
            raise NetworkError(f"input {i} has length {len(x)}, layer 1 expects {n_in}")
    if not rows:
        return []
    batch = len(rows)
    den = math.lcm(*(v.denominator for x in rows for v in x))
    state = [
        np.array([v.numerator * (den // v.denominator) for v in col], dtype=object)
        for col in zip(*rows)
    ]
    for step in _plan(layers):
        if step[0] == "affine":
            state, den = _affine(step[1], state, den, batch)
        else:
            state, den = _scale(step[1], step[2], state, den)
    return [[Fraction(int(v), den) for v in sample] for sample in zip(*state)]


def evaluate(net: Network, x: Sequence) -> list[Fraction]:
    return run_layers(net.layers, net.d, [x])[0]


def evaluate_many(net: Network, xs: Sequence[Sequence]) -> list[list[Fraction]]:
    return run_layers(net.layers, net.d, xs)


def activations(layers: Sequence[Layer], x: Sequence) -> list[list[Fraction]]:
    """Every layer's output for one input, computed naively; for probing."""
    h = list(_vector(x))
    _check_chain(len(h), layers, "evaluation")
    trace = []
    for layer in layers:
        h = [sum((w * v for w, v in zip(row, h) if w), b) for row, b in zip(layer.weights, layer.bias)]
        if layer.relu:
            h = [max(v, ZERO) for v in h]
        trace.append(h)
    return trace


# ---------------------------------------------------------------------------
# float evaluation


@dataclass(frozen=True)
class FloatResult:
    values: tuple[float, ...]
    overflow: bool
    precision_unsafe: bool


def _as_float(v: Fraction) -> float:
    try:
        return float(v)
    except OverflowError:
        return math.inf if v > 0 else -math.inf


def evaluate_float(net: Network, x: Sequence[float]) -> FloatResult:
    """Advisory float64 evaluation.  Never certifies anything."""
    h = np.asarray(x, dtype=np.float64)
    if h.shape != (net.d,):
        raise NetworkError(f"input has shape {h.shape}, network expects ({net.d},)")
    unsafe = stats(net).max_bits > FLOAT_SAFE_BITS
    with np.errstate(over="ignore", invalid="ignore"):
        for layer in net.layers:
            w = np.array([[_as_float(v) for v in row] for row in layer.weights])
            b = np.array([_as_float(v) for v in layer.bias])
            h = w @ h + b
            if layer.relu:
                h = np.maximum(h, 0.0)
    overflow = not bool(np.all(np.isfinite(h)))
    return FloatResult(tuple(float(v) for v in h), overflow, unsafe or overflow)


# ---------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class NetStats:
    width: int
    depth: int
    params: int
    max_weight: Fraction
    max_bits: int


def stats(net: Network) -> NetStats:
    width = max([net.d] + [layer.rows for layer in net.layers[:-1]])
    max_weight = ZERO
    max_bits = 0
    seen: set[int] = set()
    for layer in net.layers:
        if id(layer) in seen:
            continue
        seen.add(id(layer))
        for v in layer.entries():
            if abs(v) > max_weight:
                max_weight = abs(v)
            max_bits = max(max_bits, v.numerator.bit_length(), v.denominator.bit_length())
    params = sum(layer.params for layer in net.layers)
    return NetStats(width, net.depth, params, max_weight, max_bits)


# ---------------------------------------------------------------------------
# RELUNET v1 text format

HEADER = "RELUNET v1"


def format_scalar(v: Fraction) -> str:
    return f"{v.numerator}/{v.denominator}"


_RATIONAL = re.compile(r"^-?\d+(/\d+)?$")


def parse_scalar(text: str, where: str = "") -> Fraction:
    if not _RATIONAL.match(text):
        raise NetworkError(f"{where}: bad rational {text!r}")
    value = Fraction(text)
    return value


def serialize(net: Network) -> str:
    out = [HEADER, f"name {net.name}", f"tag {net.tag}", f"d {net.d}", f"layers {net.depth}"]
    for k, layer in enumerate(net.layers, 1):
        act = "relu" if layer.relu else "identity"
        out.append(f"layer {k} {act} {layer.rows} {layer.cols}")
        for row in layer.weights:
            out.append("w " + " ".join(map(format_scalar, row)))
        out.append("b " + " ".join(map(format_scalar, layer.bias)))
    out.append("end")
    return "\n".join(out) + "\n"


@dataclass
class _Reader:
    lines: list[str]
    pos: int = 0
    last: int = field(default=0)

    def next(self, key: str) -> list[str]:
        while self.pos < len(self.lines) and not self.lines[self.pos].strip():
            self.pos += 1
        if self.pos >= len(self.lines):
            raise NetworkError(f"line {self.pos + 1}: unexpected end of file, wanted {key!r}")
        self.last = self.pos + 1
        parts = self.lines[self.pos].split()
        self.pos += 1
        if parts[0] != key:
            raise NetworkError(f"line {self.last}: expected {key!r}, found {parts[0]!r}")
        return parts[1:]

    def ints(self, key: str, count: int) -> list[int]:
        parts = self.next(key)
        if len(parts) < count or not all(p.isdigit() for p in parts[:count]):
            raise NetworkError(f"line {self.last}: {key!r} needs {count} natural numbers")
        return [int(p) for p in parts[:count]]


def deserialize(text: str) -> Network:
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise NetworkError(f"line 1: missing {HEADER!r} header")
    r = _Reader(lines, 1)
    name = " ".join(r.next("name"))
    tag_parts = r.next("tag")
    tag = tag_parts[0] if tag_parts else ""
    (d,) = r.ints("d", 1)
    (count,) = r.ints("layers", 1)
    layers = []
    for k in range(1, count + 1):
        parts = r.next("layer")
        if len(parts) != 4 or parts[0] != str(k) or parts[1] not in ("relu", "identity"):
            raise NetworkError(f"line {r.last}: malformed header for layer {k}")
        if not (parts[2].isdigit() and parts[3].isdigit()):
            raise NetworkError(f"line {r.last}: layer {k} dimensions must be natural numbers")
        rows, cols = int(parts[2]), int(parts[3])
        weights = []
        for i in range(rows):
            entries = r.next("w")
            if len(entries) != cols:
                raise NetworkError(f"line {r.last}: layer {k} row {i + 1} has {len(entries)} entries, expected {cols}")
            weights.append([parse_scalar(e, f"line {r.last}") for e in entries])
        bias = r.next("b")
        if len(bias) != rows:
            raise NetworkError(f"line {r.last}: layer {k} bias has {len(bias)} entries, expected {rows}")
        layers.append(Layer(weights, [parse_scalar(e, f"line {r.last}") for e in bias], parts[1] == "relu"))
    r.next("end")
    return Network(d, tuple(layers), name, tag)
