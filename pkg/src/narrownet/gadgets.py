"""Reusable ReLU fragments: triangle iterates, bit extractors, indicators.

Packed words are MSB-first: a natural ``x`` with ``total_bits`` bits has bit 1
as its most significant bit, and block ``i`` of a word with blocks of ``c``
bits is bits ``(i-1)*c + 1 .. i*c``.

All extractors here rest on one identity.  If ``v`` and ``v + s`` lie on the
same linear piece of the ``i``-fold triangle iterate, then
``relu(phi_i(v + s') - phi_i(v + s))`` with ``s' < s`` equals
``bit_i * 2**i * (s - s')``.  Feeding shifted copies of the input through the
iterates therefore reads bits off one at a time with constant width.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from fractions import Fraction

from ._builder import Builder, Lin, const
from .netcore import ONE, ZERO, Layer, Network, NetworkError, run_layers


def bin_oracle(x: int, i: int, j: int, total_bits: int) -> int:
    """Integer value of bits i..j (1-indexed, MSB-first) of x padded to total_bits."""
    if x < 0 or x.bit_length() > total_bits:
        raise ValueError(f"{x} does not fit in {total_bits} bits")
    if not 1 <= i <= j <= total_bits:
        raise ValueError(f"bad bit range {i}..{j} for {total_bits} bits")
    return (x >> (total_bits - j)) & ((1 << (j - i + 1)) - 1)


def pack_blocks(blocks: Sequence[int], c: int) -> int:
    """Pack naturals into one word, first block most significant."""
    word = 0
    for v in blocks:
        if v < 0 or v.bit_length() > c:
            raise ValueError(f"block value {v} does not fit in {c} bits")
        word = (word << c) | v
    return word


def unpack_blocks(word: int, c: int, count: int) -> list[int]:
    return [bin_oracle(word, k * c + 1, (k + 1) * c, count * c) for k in range(count)]


def dyadic_floor(v: Fraction) -> Fraction:
    """Largest power of two not exceeding v > 0."""
    if v <= 0:
        raise ValueError("needs a positive value")
    e = v.numerator.bit_length() - v.denominator.bit_length()
    p = Fraction(2) ** e
    return p if p <= v else p / 2


def dyadic_ceil(v: Fraction) -> Fraction:
    """Smallest power of two not below v > 0."""
    p = dyadic_floor(v)
    return p if p == v else p * 2


# ---------------------------------------------------------------------------
# fragments


@dataclass(frozen=True)
class Fragment:
    n_in: int
    n_out: int
    layers: tuple[Layer, ...]
    width: int
    depth: int
    nonneg: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise NetworkError("fragment has no layers")
        width = self.n_in
        for k, layer in enumerate(self.layers, 1):
            if layer.cols != width:
                raise NetworkError(f"fragment layer {k} expects {layer.cols} inputs, receives {width}")
            if not layer.relu and k != len(self.layers):
                raise NetworkError(f"fragment layer {k} is identity-activated but not last")
            width = layer.rows
        if width != self.n_out or len(self.nonneg) != self.n_out:
            raise NetworkError("fragment output arity mismatch")

    @property
    def measured_width(self) -> int:
        return max([self.n_in] + [layer.rows for layer in self.layers])

    @property
    def measured_depth(self) -> int:
        return len(self.layers)

    @property
    def linear_tail(self) -> bool:
        return not self.layers[-1].relu

    def __call__(self, *x) -> list[Fraction]:
        return run_layers(self.layers, self.n_in, [x])[0]

    def evaluate_many(self, xs: Sequence[Sequence]) -> list[list[Fraction]]:
        return run_layers(self.layers, self.n_in, xs)


def _finish(b: Builder, outputs: Sequence[Lin], width: int, depth: int, nonneg=None) -> Fragment:
    layers = b.output(outputs)
    if nonneg is None:
        nonneg = (True,) * len(outputs)
    return Fragment(b.n_in, len(outputs), tuple(layers), width, depth, tuple(nonneg))


def _eye(k: int, relu: bool = True) -> Layer:
    return Layer([[ONE if i == j else ZERO for j in range(k)] for i in range(k)], [ZERO] * k, relu)


def identity_pass(k: int) -> Fragment:
    """One ReLU layer passing k nonnegative wires unchanged."""
    return Fragment(k, k, (_eye(k),), k, 1, (True,) * k)


def fan_out(copies: int) -> Fragment:
    """Copy one nonnegative wire into several."""
    layer = Layer([[ONE]] * copies, [ZERO] * copies, True)
    return Fragment(1, copies, (layer,), copies, 1, (True,) * copies)


def _to_relu_tail(frag: Fragment) -> tuple[list[Layer], list[tuple[int, int]]]:
    """Replace a linear last layer by ReLU rows; signed outputs become +/- pairs.

    Returns the layers and, per original output, the (row, sign) wires that
    recover it as a signed sum.
    """
    last = frag.layers[-1]
    weights, bias, recover = [], [], []
    for k, (row, bk) in enumerate(zip(last.weights, last.bias)):
        weights.append(row)
        bias.append(bk)
        if frag.nonneg[k]:
            recover.append([(len(weights) - 1, 1)])
        else:
            weights.append([-w for w in row])
            bias.append(-bk)
            recover.append([(len(weights) - 2, 1), (len(weights) - 1, -1)])
    return list(frag.layers[:-1]) + [Layer(weights, bias, True)], recover


def _reading(layer: Layer, recover, width: int) -> Layer:
    """Rewire a layer's inputs through the recovery map of a split tail."""
    weights = []
    for row in layer.weights:
        new = [ZERO] * width
        for k, w in enumerate(row):
            for j, s in recover[k]:
                new[j] += s * w
        weights.append(new)
    return Layer(weights, layer.bias, layer.relu)


def compose(f: Fragment, g: Fragment, merge: bool = False) -> Fragment:
    """Run f then g.  With merge, f's linear tail is multiplied into g's head."""
    if f.n_out != g.n_in:
        raise NetworkError(f"cannot feed {f.n_out} outputs into {g.n_in} inputs")
    if not f.linear_tail:
        return Fragment(f.n_in, g.n_out, f.layers + g.layers, max(f.width, g.width), f.depth + g.depth, g.nonneg)
    if merge:
        last, head = f.layers[-1], g.layers[0]
        weights = [
            [sum((hw * last.weights[k][j] for k, hw in enumerate(hrow) if hw), ZERO) for j in range(last.cols)]
            for hrow in head.weights
        ]
        bias = [sum((hw * last.bias[k] for k, hw in enumerate(hrow) if hw), hb) for hrow, hb in zip(head.weights, head.bias)]
        layers = f.layers[:-1] + (Layer(weights, bias, head.relu),) + g.layers[1:]
        return Fragment(f.n_in, g.n_out, layers, max(f.width, g.width), f.depth + g.depth - 1, g.nonneg)
    body, recover = _to_relu_tail(f)
    split = body[-1].rows
    head = _reading(g.layers[0], recover, split)
    layers = tuple(body) + (head,) + g.layers[1:]
    return Fragment(f.n_in, g.n_out, layers, max(f.width, g.width, split), f.depth + g.depth, g.nonneg)


def chain(*frags: Fragment) -> Fragment:
    out = frags[0]
    for f in frags[1:]:
        out = compose(out, f)
    return out


def _padded(frag: Fragment, depth: int, linear: bool) -> tuple[list[Layer], int]:
    """Extend frag to exactly `depth` layers, ending linear or ReLU as asked."""
    extra = depth - frag.depth
    if not frag.linear_tail:
        layers = list(frag.layers)
        if linear:
            layers += [_eye(frag.n_out)] * (extra - 1) + [_eye(frag.n_out, relu=False)]
        else:
            layers += [_eye(frag.n_out)] * extra
        return layers, frag.width
    if extra == 0:
        return list(frag.layers), frag.width
    if not linear:
        raise NetworkError("a linear-tailed fragment cannot be padded to a ReLU tail")
    body, recover = _to_relu_tail(frag)
    split = body[-1].rows
    layers = body + [_eye(split)] * (extra - 1)
    layers.append(_reading(_eye(frag.n_out, relu=False), recover, split))
    return layers, max(frag.width, split)


def _block_diag(a: Layer, b: Layer) -> Layer:
    weights = [list(r) + [ZERO] * b.cols for r in a.weights]
    weights += [[ZERO] * a.cols + list(r) for r in b.weights]
    return Layer(weights, a.bias + b.bias, a.relu)


def parallel(f: Fragment, g: Fragment) -> Fragment:
    """Run f and g side by side on concatenated inputs."""
    linear = f.linear_tail or g.linear_tail

    def need(x: Fragment) -> int:
        return x.depth + 1 if linear and not x.linear_tail else x.depth

    depth = max(need(f), need(g))
    fl, fw = _padded(f, depth, linear)
    gl, gw = _padded(g, depth, linear)
    layers = tuple(_block_diag(a, b) for a, b in zip(fl, gl))
    return Fragment(f.n_in + g.n_in, f.n_out + g.n_out, layers, fw + gw, depth, f.nonneg + g.nonneg)


def wrap(frag: Fragment, name: str = "", tag: str = "target") -> Network:
    """Export a fragment as a Network, adding an identity output if needed."""
    layers = frag.layers if frag.linear_tail else frag.layers + (_eye(frag.n_out, relu=False),)
    return Network(frag.n_in, layers, name, tag)


# ---------------------------------------------------------------------------
# triangle and indicator


def triangle() -> Fragment:
    """phi(z) = relu(relu(2z) - relu(4z - 2)): a tent on [0, 1] peaking at 1/2."""
    b = Builder(1)
    (x,) = b.inputs()
    up, down = b.relu([2 * x, 4 * x - 2])
    (phi,) = b.relu([up - down])
    return _finish(b, [phi], 2, 2)


def soft_indicator(delta) -> Fragment:
    """1{x >= 1/2} away from a ramp of width delta centred at 1/2."""
    delta = Fraction(delta)
    if not 0 < delta <= 1:
        raise ValueError("ramp width must lie in (0, 1]")
    b = Builder(1)
    (x,) = b.inputs()
    lo, hi = b.relu([(x - Fraction(1, 2) + delta / 2) / delta, (x - Fraction(1, 2) - delta / 2) / delta])
    return _finish(b, [lo - hi], 2, 2)


# ---------------------------------------------------------------------------
# parallel bit extraction on the unit interval


def unit_extract(b: Builder, ts: Sequence[Lin], c: int, deltas: Sequence[Fraction]) -> list[Lin]:
    """Emit 3c layers reading the top c bits of each t in [0, 1] in lockstep.

    Per coordinate the state is five wires; the returned Lins equal
    floor(t * 2**c) off the bad strips.  Bits accumulate in a rescaled
    register r = 4r + q so no weight grows with the bit index.
    """
    coords = []
    for t, delta in zip(ts, deltas):
        s_far, s_near = delta / 2 ** (c + 1), delta / 2 ** (c + 2)
        coords.append([t + s_far, t + s_near, const(0)])
    for _ in range(c):
        rows = []
        for v1, v2, r in coords:
            rows += [2 * v1, 4 * v1 - 2, 2 * v2, 4 * v2 - 2, r]
        wires = b.relu(rows)
        rows = []
        for k in range(len(coords)):
            a1, b1, a2, b2, r = wires[5 * k : 5 * k + 5]
            rows += [a1 - b1, a2 - b2, r]
        wires = b.relu(rows)
        rows = []
        for k in range(len(coords)):
            v1, v2, r = wires[3 * k : 3 * k + 3]
            rows += [v2 - v1, v1, v2, r]
        wires = b.relu(rows)
        for k in range(len(coords)):
            q, v1, v2, r = wires[4 * k : 4 * k + 4]
            coords[k] = [v1, v2, 4 * r + q]
    return [4 * r / delta for (_, _, r), delta in zip(coords, deltas)]


def bit_extract_unit_interval(c: int, delta) -> Fragment:
    """floor(x * 2**c) for x in [0, 1] outside strips of width delta/2**(c+1)
    just left of each multiple of 2**-c.  Width 5, depth 3c + 1."""
    delta = Fraction(delta)
    if c < 1 or not 0 < delta <= 1:
        raise ValueError("need c >= 1 and delta in (0, 1]")
    b = Builder(1)
    (out,) = unit_extract(b, b.inputs(), c, [delta])
    return _finish(b, [out], 5, 3 * c + 1)


# ---------------------------------------------------------------------------
# exact bit streams over packed integers

OnBit = Callable[[int, Lin, list[Lin]], list[Lin]]


def bit_stream(b: Builder, word: Lin, total_bits: int, carry: list[Lin], on_bit: OnBit) -> list[Lin]:
    """Read bits 1..total_bits of a natural word, MSB-first, exactly.

    Emits 2*total_bits + 1 layers of width 5 + len(carry).  After bit l is
    available as a wire q = bit * 2**(l - total_bits - 2), ``on_bit(l, q,
    carry)`` returns the updated carry expressions; carried values must stay
    nonnegative.
    """
    t = word / 2**total_bits
    v_far = t + Fraction(1, 2 ** (total_bits + 1))
    v_near = t + Fraction(1, 2 ** (total_bits + 2))
    for bit in range(total_bits + 1):
        wires = b.relu([v_near - v_far] + ([] if bit == total_bits else [2 * v_far, 4 * v_far - 2, 2 * v_near, 4 * v_near - 2]) + carry)
        if bit == total_bits:
            return on_bit(bit, wires[0], wires[1:])
        q, a1, b1, a2, b2 = wires[:5]
        carry = wires[5:]
        if bit:
            carry = on_bit(bit, q, carry)
        v_far, v_near, *carry = b.relu([a1 - b1, a2 - b2] + carry)
    raise AssertionError("unreachable")


def bit_extract_integer(bit: int, total_bits: int) -> Fragment:
    """Bit number `bit` (MSB-first) of any natural below 2**total_bits.

    The word is scaled into [0, 1) and probed at offsets 2**-(T+1) and
    2**-(T+2); integers sit strictly inside their cells, so this is exact.
    """
    if not 1 <= bit <= total_bits:
        raise ValueError(f"bit index {bit} outside 1..{total_bits}")
    b = Builder(1)
    (x,) = b.inputs()
    t = x / 2**total_bits
    v_far = t + Fraction(1, 2 ** (total_bits + 1))
    v_near = t + Fraction(1, 2 ** (total_bits + 2))
    for _ in range(bit):
        a1, b1, a2, b2 = b.relu([2 * v_far, 4 * v_far - 2, 2 * v_near, 4 * v_near - 2])
        v_far, v_near = b.relu([a1 - b1, a2 - b2])
    (q,) = b.relu([v_near - v_far])
    return _finish(b, [q * 2 ** (total_bits + 2 - bit)], 4, 2 * bit + 2)


# ---------------------------------------------------------------------------
# packed-word arithmetic


def neuron_stream(
    b: Builder,
    word: Lin,
    c: int,
    n_in: int,
    magnitudes: Sequence[int],
    signs: Sequence[int],
    extra: list[Lin],
) -> tuple[Lin, Lin, list[Lin]]:
    """Accumulate sum_i w_i * block_i of a packed word into (positive, negative)
    wires, keeping `extra` wires alive.  Returns pending (pos, neg, extra)."""
    total = n_in * c

    def on_bit(l: int, q: Lin, carry: list[Lin]) -> list[Lin]:
        r, pos, neg, *rest = carry
        block, m = divmod(l - 1, c)
        r = q if m == 0 else 4 * r + q
        if m == c - 1:
            gain = magnitudes[block] * 2 ** (total + 2 - l)
            if signs[block] >= 0:
                pos = pos + gain * r
            else:
                neg = neg + gain * r
            r = const(0)
        return [r, pos, neg, *rest]

    r, pos, neg, *rest = bit_stream(b, word, total, [const(0), const(0), const(0), *extra], on_bit)
    return pos, neg, rest


def _check_neuron(magnitudes, signs, n_in, c):
    if len(magnitudes) != n_in or len(signs) != n_in:
        raise ValueError(f"neuron needs {n_in} weights and signs")
    for w in magnitudes:
        if w < 0 or w.bit_length() > c:
            raise ValueError(f"weight magnitude {w} does not fit in {c} bits")


def simulate_neuron_fragment(
    magnitudes: Sequence[int], signs: Sequence[int], bias: int, c: int, n_in: int, linear: bool = False
) -> Fragment:
    """relu(sum_i sign_i * mag_i * block_i(x) + bias) on a packed word x.

    With ``linear`` the final ReLU is dropped.  Width 8, depth 2*n_in*c + 2.
    """
    _check_neuron(magnitudes, signs, n_in, c)
    b = Builder(1)
    (x,) = b.inputs()
    pos, neg, _ = neuron_stream(b, x, c, n_in, magnitudes, signs, [])
    if linear:
        return _finish(b, [pos - neg + bias], 8, 2 * n_in * c + 2, (False,))
    (out,) = b.relu([pos - neg + bias])
    return _finish(b, [out], 8, 2 * n_in * c + 2)


def layer_stream(b: Builder, word: Lin, c: int, n_in: int, rows: Sequence[tuple[Sequence[int], Sequence[int], int]]) -> Lin:
    """Simulate a ReLU layer on a packed word; returns the packed output Lin."""
    acc = const(0)
    for magnitudes, signs, bias in rows:
        pos, neg, (word, acc) = neuron_stream(b, word, c, n_in, magnitudes, signs, [word, acc])
        out, word, acc = b.relu([pos - neg + bias, word, acc])
        acc = acc * 2**c + out
    return acc


def simulate_layer_fragment(rows: Sequence[tuple[Sequence[int], Sequence[int], int]], c: int, n_in: int) -> Fragment:
    """Pack relu outputs of every (magnitudes, signs, bias) row into one word,
    first row in the most significant block.  Width 10."""
    for magnitudes, signs, _ in rows:
        _check_neuron(magnitudes, signs, n_in, c)
    b = Builder(1)
    (x,) = b.inputs()
    out = layer_stream(b, x, c, n_in, rows)
    return _finish(b, [out], 10, len(rows) * (2 * n_in * c + 2) + 1)


def compress_fragment(a: int, a0: int, n_blocks: int) -> Fragment:
    """Floor-divide every a-bit block of a packed word by 2**a0.  Width 7."""
    if not 0 <= a0 <= a or a < 1 or n_blocks < 1:
        raise ValueError("need a >= 1, 0 <= a0 <= a and n_blocks >= 1")
    total = a * n_blocks
    keep = a - a0

    def on_bit(l: int, q: Lin, carry: list[Lin]) -> list[Lin]:
        r, y = carry
        m = (l - 1) % a
        if m < keep:
            r = q if m == 0 else 4 * r + q
            if m == keep - 1:
                y = y * 2**a + r * 2 ** (total + 2 - l)
                r = const(0)
        elif keep == 0 and m == a - 1:
            y = y * 2**a
        return [r, y]

    b = Builder(1)
    (x,) = b.inputs()
    _, y = bit_stream(b, x, total, [const(0), const(0)], on_bit)
    return _finish(b, [y], 7, 2 * total + 2)


# ---------------------------------------------------------------------------
# width-4 sequential extraction


def seq_extract(b: Builder, x: Lin, y: Lin, c: int, ramp: Fraction, extra: list[Lin]) -> tuple[Lin, Lin, list[Lin]]:
    """Add floor(x * 2**c) to y using four working wires plus `extra`.

    Bit i is 1 exactly when the i-fold triangle iterate of x - 2**-(i+1)
    is at least 1/2; a ramp of width `ramp` turns that into a ReLU
    difference.  Emits c*c + 2c layers.  Returns (x wire, pending y, extra).
    """
    half = Fraction(1, 2)
    for i in range(1, c + 1):
        z = x - Fraction(1, 2 ** (i + 1))
        for _ in range(i):
            up, down, x, y, *extra = b.relu([2 * z, 4 * z - 2, x, y, *extra])
            z, x, y, *extra = b.relu([up - down, x, y, *extra])
        lo, hi, x, y, *extra = b.relu([z - half + ramp / 2, z - half - ramp / 2, x, y, *extra])
        y = y + (lo - hi) * (Fraction(2 ** (c - i)) / ramp)
    return x, y, extra


def seq_ramp(c: int, delta: Fraction) -> Fraction:
    """Ramp width giving failure measure <= delta and exactness at cell midpoints."""
    return min(dyadic_floor(delta / c), Fraction(1, 2**c))


def integral_ramp(c: int, delta: Fraction) -> Fraction:
    """Ramp width for reading the integer part of v in [0, 2**c) via v / 2**c."""
    return min(dyadic_floor(delta / 2**c), Fraction(1, 2 ** (2 * c)))


def bit_extract_seq(c: int, delta) -> Fragment:
    """(x, y) -> floor(x * 2**c) + y for x in [0, 1), y >= 0, off a bad set of
    measure at most delta.  Width 4, depth c*c + 2c + 1."""
    delta = Fraction(delta)
    if c < 1 or not 0 < delta <= 1:
        raise ValueError("need c >= 1 and delta in (0, 1]")
    b = Builder(2)
    x, y = b.inputs()
    _, y, _ = seq_extract(b, x, y, c, seq_ramp(c, delta), [])
    return _finish(b, [y], 4, c * c + 2 * c + 1)


def integral_part_fragment(c: int, delta) -> Fragment:
    """v -> (floor(v), v) for v in [0, 2**c) whose fractional part keeps
    clear of 0 and 1.  Width 4, depth c*c + 2c + 1."""
    delta = Fraction(delta)
    b = Builder(1)
    (v,) = b.inputs()
    x, y, _ = seq_extract(b, v / 2**c, const(0), c, integral_ramp(c, delta), [])
    return _finish(b, [y, x * 2**c], 4, c * c + 2 * c + 1)
