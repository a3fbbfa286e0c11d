"""Width max(d+2, 10) compiler: a sequential input encoder feeding the same
downstream layer simulators as the narrow compiler.

The encoder never holds more than the unread coordinates plus four working
wires.  Coordinate 1 is hidden in the integer part of coordinate 2,
recovered with an integer-part extraction, and then each remaining
coordinate is appended to the packed accumulator in turn.
"""

from __future__ import annotations

from fractions import Fraction

from ._builder import Builder, const
from .gadgets import Fragment, _finish, chain, integral_ramp, seq_extract, seq_ramp, wrap
from .narrowing import BitBudget, CompileConfig, CompileError, downstream_depth, downstream_stages, downstream_weight_bound
from .netcore import Network


def stage_delta(cfg: CompileConfig) -> Fraction:
    """Failure budget for each of the extraction passes."""
    passes = 1 if cfg.d == 1 else cfg.d + 1
    return cfg.effective_delta / passes


def encoder_depth(d: int, c0: int) -> int:
    passes = 1 if d == 1 else d + 1
    return passes * (c0 * c0 + 2 * c0) + 1


def encode_input_seq_fragment(cfg: CompileConfig, bits: BitBudget | None = None) -> Fragment:
    """Same packed word as the parallel encoder, using width max(4, d + 2)."""
    bits = bits or cfg.bits
    c0, c, A = bits.c0, bits.c, cfg.box
    delta = stage_delta(cfg)
    ramp = seq_ramp(c0, delta)
    b = Builder(cfg.d)
    ts = [(x + A) / (2 * A) for x in b.inputs()]
    if cfg.d == 1:
        _, acc, _ = seq_extract(b, ts[0], const(0), c0, ramp, [])
        return _finish(b, [acc * (2 * A)], 4, encoder_depth(1, c0))
    # stash floor(t1 * 2^c0) in the integer part of t2
    _, v, rest = seq_extract(b, ts[0], ts[1], c0, ramp, ts[2:])
    # split it back out: m = floor(v), t2 = v - m
    x, m, rest = seq_extract(b, v / 2**c0, const(0), c0, integral_ramp(c0, delta), rest)
    t = x * 2**c0 - m
    acc = m * (2 * A)
    for _ in range(1, cfg.d):
        _, y, rest = seq_extract(b, t, acc * Fraction(2**c) / (2 * A), c0, ramp, rest)
        acc = y * (2 * A)
        if rest:
            t, rest = rest[0], rest[1:]
    return _finish(b, [acc], max(4, cfg.d + 2), encoder_depth(cfg.d, c0))


def minwidth_stages(target: Network, cfg: CompileConfig) -> list[tuple[str, Fragment]]:
    return [("encode", encode_input_seq_fragment(cfg))] + downstream_stages(target, cfg)


def compile_minwidth(target: Network, cfg: CompileConfig) -> Network:
    if target.d_out != 1:
        raise CompileError("compile_minwidth handles one output")
    frag = chain(*(f for _, f in minwidth_stages(target, cfg)))
    return wrap(frag, f"{target.name} minwidth".strip(), "compiled-minwidth")


def width_bound(cfg: CompileConfig) -> int:
    return max(cfg.d + 2, 10)


def depth_bound(cfg: CompileConfig) -> int:
    return encoder_depth(cfg.d, cfg.bits.c0) + downstream_depth(cfg)


def max_weight_bound(cfg: CompileConfig) -> Fraction:
    bits = cfg.bits
    ramp = integral_ramp(bits.c0, stage_delta(cfg))
    encoder = max(Fraction(2) ** (bits.c0 + 1) / ramp, Fraction(2) ** (bits.c + 1) * cfg.box)
    return max(encoder, downstream_weight_bound(cfg))
