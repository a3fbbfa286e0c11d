"""Exact rewriting of a depth-L network into width 2(d + L - 1).

The input is carried as the pair (relu(x), relu(-x)) through every layer,
so any first-layer neuron can be recomputed on demand.  Deeper neurons are
evaluated one input at a time into a single accumulator per level.  Adding
the nonnegative contributions first, then the bias, then the negative ones
makes the running ReLU harmless:

    relu(relu(a) - c) == relu(a - c)   for c >= 0,

so the accumulator ends at exactly relu(pre-activation).  Levels are
pipelined: while level l folds in a finished child, level l-1 is already
working on the next one, so every layer evaluates one first-layer neuron.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from math import prod

from ._builder import Builder, Lin, const
from .gadgets import _finish, wrap
from .netcore import Network, stats

DEPTH_CEILING = 10**6


class DepthCeilingError(ValueError):
    """The exact construction would exceed the configured depth ceiling."""


def predicted_depth(target: Network) -> int:
    return prod(layer.rows for layer in target.layers[:-1]) + target.depth


def depth_bound(target: Network) -> int:
    n = max(layer.rows for layer in target.layers[:-1])
    return (2 * n) ** (target.depth - 1) + 2


def width_bound(target: Network) -> int:
    return 2 * (target.d + target.depth - 1)


@dataclass(frozen=True)
class Fold:
    weight: object
    bias: object
    reset: bool


def schedule(target: Network) -> tuple[list[int], dict[int, dict[object, Fold]], int]:
    """Leaf order and per-layer folds.

    Returns (leaves, folds, last) where leaves[t-1] is the first-layer
    neuron evaluated in layer t, folds[t][level] is the fold applied to that
    level's accumulator in layer t ("top" for the output sums) and last is
    the layer of the final fold.
    """
    layers = target.layers
    top = target.depth - 1
    leaves: list[int] = []
    folds: dict[int, dict[object, Fold]] = defaultdict(dict)

    def visit(level: int, j: int) -> int:
        if level == 1:
            leaves.append(j)
            return len(leaves)
        row = layers[level - 1].weights[j]
        kids = sorted(range(len(row)), key=lambda k: row[k] < 0)
        n_pos = sum(1 for w in row if w >= 0)
        bias_at = max(n_pos - 1, 0)
        done = 0
        for pos, k in enumerate(kids):
            done = visit(level - 1, k) + 1
            bias = layers[level - 1].bias[j] if pos == bias_at else 0
            folds[done][level] = Fold(row[k], bias, pos == 0)
        return done

    last = 0
    for j, w in enumerate(layers[-1].weights[0]):
        last = visit(top, j) + 1
        folds[last]["top"] = Fold(w, 0, False)
    return leaves, dict(folds), last


def _check(target: Network, ceiling: int) -> None:
    if target.d_out != 1:
        raise ValueError("exact representation handles one output")
    if target.depth < 2:
        raise ValueError("target needs at least one hidden layer")
    depth = predicted_depth(target)
    if depth > ceiling:
        raise DepthCeilingError(f"exact construction needs {depth} layers, ceiling is {ceiling}")


def exact_two_layer(target: Network, ceiling: int = DEPTH_CEILING) -> Network:
    """One hidden layer of n neurons -> width 2d + 2, depth n + 2.

    The positive part of the output rides on the first input pair as a
    common offset (their difference is unchanged), which frees the wire a
    separate positive accumulator would need.
    """
    if target.depth != 2:
        raise ValueError(f"expected a single hidden layer, got depth {target.depth}")
    return _exact(target, ceiling)


def exact_deep(target: Network, ceiling: int = DEPTH_CEILING) -> Network:
    """Width at most 2(d + L - 1), depth prod(hidden widths) + L."""
    return _exact(target, ceiling)


def _exact(target: Network, ceiling: int) -> Network:
    _check(target, ceiling)
    d, L = target.d, target.depth
    first, last_layer = target.layers[0], target.layers[-1]
    stash = L == 2
    leaves, folds, end = schedule(target)
    levels = list(range(2, L))

    b = Builder(d)
    xs = b.inputs()
    pos = list(xs)
    neg = [-x for x in xs]
    s: Lin = const(0)
    acc = {lv: const(0) for lv in levels}
    P, N = const(0), const(0)
    for t in range(1, end + 1):
        x = list(xs) if t == 1 else [p - m for p, m in zip(pos, neg)]
        here = folds.get(t, {})
        new_s = const(0)
        if t <= len(leaves):
            k = leaves[t - 1]
            new_s = sum((w * xi for w, xi in zip(first.weights[k], x)), const(first.bias[k]))
        new_acc = {}
        for lv in levels:
            child = s if lv == 2 else acc[lv - 1]
            consumed = (lv + 1 in here) if lv + 1 < L else ("top" in here)
            if lv in here:
                f = here[lv]
                base = const(0) if f.reset else acc[lv]
                new_acc[lv] = base + f.weight * child + f.bias
            else:
                new_acc[lv] = const(0) if consumed else acc[lv]
        new_P, new_N = P, N
        if "top" in here:
            w = here["top"].weight
            child = s if L == 2 else acc[L - 1]
            if w >= 0:
                new_P = P + w * child
            else:
                new_N = N - w * child
        if stash:
            pos[0] = pos[0] + (new_P - P)
            neg[0] = neg[0] + (new_P - P)
            if t == end:
                new_s = x[0]
            rows = pos + neg + [new_s, new_N]
        else:
            rows = pos + neg + [new_s] + [new_acc[lv] for lv in levels] + [new_P, new_N]
        wires = b.relu(rows)
        pos, neg = wires[:d], wires[d : 2 * d]
        s = wires[2 * d]
        if stash:
            N = wires[2 * d + 1]
            P = const(0)
        else:
            for i, lv in enumerate(levels):
                acc[lv] = wires[2 * d + 1 + i]
            P, N = wires[-2], wires[-1]
    bias = last_layer.bias[0]
    out = (pos[0] - s) - N + bias if stash else P - N + bias
    width = 2 * d + 2 if stash else 2 * d + L + 1
    frag = _finish(b, [out], width, end + 1, (False,))
    return wrap(frag, f"{target.name} exact".strip(), "compiled-exact")


@dataclass(frozen=True)
class EfficiencyReport:
    target_params: int
    compiled_params: int
    ratio: float
    regime: str


def efficiency_report(target: Network, compiled: Network) -> EfficiencyReport:
    tp, cp = stats(target).params, stats(compiled).params
    regime = {2: "linear: both Theta(n) parameters", 3: "quadratic: both Theta(n^2) parameters"}.get(
        target.depth, "exponential: compiled parameters grow like (2n)^(L-1)"
    )
    return EfficiencyReport(tp, cp, cp / tp, regime)
