"""Lazy affine builder used to assemble gadgets layer by layer.

A ``Lin`` is an affine combination of the wires of the most recent layer.
Affine arithmetic on Lins is free; only ``Builder.relu`` emits a layer, so
consecutive affine steps fold into the next ReLU layer automatically.
"""

from __future__ import annotations

from collections.abc import Sequence
from fractions import Fraction

from .netcore import ZERO, Layer, NetworkError


class Lin:
    __slots__ = ("stage", "terms", "const")

    def __init__(self, stage: int | None, terms: dict[int, Fraction], const: Fraction = ZERO):
        self.stage = stage
        self.terms = terms
        self.const = const

    def _join(self, other: Lin) -> int | None:
        if self.stage is None:
            return other.stage
        if other.stage is not None and other.stage != self.stage:
            raise NetworkError("mixing wires from different layers")
        return self.stage

    def __add__(self, other) -> Lin:
        if not isinstance(other, Lin):
            return Lin(self.stage, self.terms, self.const + Fraction(other))
        terms = dict(self.terms)
        for j, w in other.terms.items():
            s = terms.get(j, ZERO) + w
            if s:
                terms[j] = s
            else:
                terms.pop(j, None)
        return Lin(self._join(other), terms, self.const + other.const)

    __radd__ = __add__

    def __mul__(self, k) -> Lin:
        k = Fraction(k)
        if not k:
            return Lin(None, {}, ZERO)
        return Lin(self.stage, {j: w * k for j, w in self.terms.items()}, self.const * k)

    __rmul__ = __mul__

    def __truediv__(self, k) -> Lin:
        return self * (1 / Fraction(k))

    def __neg__(self) -> Lin:
        return self * -1

    def __sub__(self, other) -> Lin:
        return self + (-other)

    def __rsub__(self, other) -> Lin:
        return (-self) + other


def const(v) -> Lin:
    return Lin(None, {}, Fraction(v))


class Builder:
    def __init__(self, n_in: int):
        self.n_in = n_in
        self.width = n_in
        self.stage = 0
        self.layers: list[Layer] = []

    def inputs(self) -> list[Lin]:
        return self._wires(self.n_in)

    def _wires(self, count: int) -> list[Lin]:
        return [Lin(self.stage, {j: Fraction(1)}) for j in range(count)]

    def _rows(self, exprs: Sequence[Lin]):
        weights, bias = [], []
        for e in exprs:
            if e.stage is not None and e.stage != self.stage:
                raise NetworkError("expression refers to a stale layer")
            row = [ZERO] * self.width
            for j, w in e.terms.items():
                row[j] = w
            weights.append(row)
            bias.append(e.const)
        return weights, bias

    def relu(self, exprs: Sequence[Lin]) -> list[Lin]:
        weights, bias = self._rows(exprs)
        self.layers.append(Layer(weights, bias, True))
        self.stage += 1
        self.width = len(exprs)
        return self._wires(self.width)

    def output(self, exprs: Sequence[Lin]) -> list[Layer]:
        """Close with an identity layer unless the outputs are exactly the last wires."""
        plain = (
            self.layers
            and self.layers[-1].relu
            and len(exprs) == self.width
            and all(e.stage == self.stage and e.terms == {j: 1} and not e.const for j, e in enumerate(exprs))
        )
        if not plain:
            weights, bias = self._rows(exprs)
            self.layers.append(Layer(weights, bias, False))
        return self.layers
