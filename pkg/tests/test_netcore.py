from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrownet.gadgets import triangle, wrap
from narrownet.harness import generate_target
from narrownet.netcore import (
    Layer,
    Network,
    NetworkError,
    activations,
    deserialize,
    evaluate,
    evaluate_float,
    evaluate_many,
    serialize,
    stats,
    to_scalar,
)
from oracles import naive_forward, random_rational_net


def identity_net(k=1):
    return Network(k, (Layer([[1 if i == j else 0 for j in range(k)] for i in range(k)], [0] * k, False),))


class TestEvaluate:
    def test_identity_layer(self):
        assert evaluate(identity_net(), [-3]) == [-3]

    def test_relu_kills_negatives(self):
        net = Network(1, (Layer([[1]], [0], True), Layer([[1]], [0], False)))
        assert evaluate(net, [-3]) == [0]

    def test_relu_difference_is_identity(self):
        net = Network(1, (Layer([[1], [-1]], [0, 0], True), Layer([[1, -1]], [0], False)))
        assert evaluate(net, [F(5, 7)]) == [F(5, 7)]

    def test_dimension_mismatch(self):
        with pytest.raises(NetworkError):
            evaluate(identity_net(2), [1])

    def test_rejects_float_inputs(self):
        with pytest.raises(TypeError):
            to_scalar(0.5)

    @pytest.mark.parametrize("seed", range(5))
    def test_batch_matches_naive(self, seed):
        net = random_rational_net(2, [3, 2], seed)
        xs = [[F(seed * 7 - k, 3), F(k, 5)] for k in range(12)]
        assert evaluate_many(net, xs) == [naive_forward(net, x) for x in xs]

    def test_scaling_runs_are_exact(self):
        # a run of identical doubling layers collapses into one power
        dbl = Layer([[2]], [0], True)
        net = Network(1, (Layer([[F(1, 3)]], [F(1, 7)], True), *([dbl] * 40), Layer([[1]], [0], False)))
        for x in (F(-1), F(2, 9), F(5)):
            assert evaluate(net, [x]) == naive_forward(net, [x])

    def test_activations_trace(self):
        net = Network(1, (Layer([[1], [-1]], [0, 0], True), Layer([[1, -1]], [0], False)))
        trace = activations(net.layers, [F(-2)])
        assert trace[-1] == [F(-2)]
        assert trace[0] == [0, 2]


class TestFloat:
    def test_identity(self):
        assert evaluate_float(identity_net(), [2.0]).values == (2.0,)

    def test_triangle_quarter(self):
        res = evaluate_float(wrap(triangle()), [0.25])
        assert abs(res.values[0] - 0.5) < 1e-12
        assert not res.precision_unsafe

    def test_large_weight_flagged(self):
        net = Network(1, (Layer([[2**60]], [0], False),))
        assert evaluate_float(net, [1.0]).precision_unsafe

    def test_overflow_flagged(self):
        big = Layer([[F(10**200)]], [0], True)
        net = Network(1, (big, big, Layer([[1]], [0], False)))
        res = evaluate_float(net, [1.0])
        assert res.overflow and res.precision_unsafe

    @pytest.mark.parametrize("seed", range(3))
    def test_agrees_with_exact_on_small_nets(self, seed):
        net = random_rational_net(1, [4], seed)
        for x in (-2, -0.5, 0.0, 0.75, 3.0):
            exact = float(evaluate(net, [F(x)])[0])
            assert abs(evaluate_float(net, [x]).values[0] - exact) < 1e-9


class TestStats:
    def test_one_hidden_layer(self):
        net = random_rational_net(2, [3], 0)
        s = stats(net)
        assert (s.width, s.depth, s.params) == (3, 2, 13)

    def test_single_affine_layer(self):
        net = Network(4, (Layer([[1, 2, 3, 4]], [5], False),))
        s = stats(net)
        assert (s.width, s.depth, s.params) == (4, 1, 5)

    def test_max_weight_and_bits(self):
        net = Network(1, (Layer([[F(-9, 2)]], [F(1, 1024)], False),))
        s = stats(net)
        assert s.max_weight == F(9, 2)
        assert s.max_bits == 11

    def test_width_counts_input_dimension(self):
        net = Network(5, (Layer([[1] * 5], [0], True), Layer([[1]], [0], False)))
        assert stats(net).width == 5


class TestStructure:
    def test_broken_chain(self):
        with pytest.raises(NetworkError):
            Network(2, (Layer([[1, 1]], [0], True), Layer([[1, 1]], [0], False)))

    def test_identity_must_be_last(self):
        with pytest.raises(NetworkError):
            Network(1, (Layer([[1]], [0], False), Layer([[1]], [0], False)))

    def test_last_must_be_identity(self):
        with pytest.raises(NetworkError):
            Network(1, (Layer([[1]], [0], True),))

    def test_ragged(self):
        with pytest.raises(NetworkError):
            Layer([[1, 2], [3]], [0, 0])

    def test_bias_length(self):
        with pytest.raises(NetworkError):
            Layer([[1]], [0, 0])

    def test_unknown_tag(self):
        with pytest.raises(NetworkError):
            Network(1, (Layer([[1]], [0], False),), tag="mystery")


class TestSerialization:
    @pytest.mark.parametrize("seed", range(4))
    def test_round_trip(self, seed):
        net = generate_target(2, 3, 3, 2, seed)
        back = deserialize(serialize(net))
        assert back == net
        assert serialize(back) == serialize(net)

    def test_round_trip_rationals(self):
        net = random_rational_net(1, [2, 2], 3)
        assert deserialize(serialize(net)) == net

    def test_malformed_chain_rejected(self):
        text = serialize(random_rational_net(1, [2], 0)).replace("layer 2 identity 1 2", "layer 2 identity 1 3")
        with pytest.raises(NetworkError, match="line"):
            deserialize(text)

    def test_bad_header(self):
        with pytest.raises(NetworkError, match="line 1"):
            deserialize("RELUNET v0\n")

    def test_bad_number(self):
        text = serialize(random_rational_net(1, [2], 0)).replace("b ", "b x", 1)
        with pytest.raises(NetworkError):
            deserialize(text)

    def test_truncated(self):
        text = serialize(random_rational_net(1, [2], 0))
        with pytest.raises(NetworkError, match="end of file"):
            deserialize(text.rsplit("end", 1)[0])

    @settings(max_examples=30, deadline=None)
    @given(
        st.lists(
            st.fractions(min_value=-50, max_value=50, max_denominator=1000), min_size=6, max_size=6
        )
    )
    def test_round_trip_any_values(self, vals):
        net = Network(2, (Layer([vals[0:2], vals[2:4]], vals[4:6], True), Layer([[1, -1]], [0], False)), "h y", "target")
        assert deserialize(serialize(net)) == net


class TestInvariants:
    @pytest.mark.parametrize("seed", range(4))
    def test_positive_homogeneity(self, seed):
        net = random_rational_net(2, [3, 2], seed)
        lam = F(7, 3)
        first = net.layers[0]
        scaled = Layer([[w * lam for w in row] for row in first.weights], [b * lam for b in first.bias], True)
        x = [F(seed - 2, 3), F(5, 4)]
        base = activations(net.layers, x)[0]
        assert activations((scaled,) + net.layers[1:], x)[0] == [lam * v for v in base]

    @pytest.mark.parametrize("seed", range(4))
    def test_float_agreement_small_bits(self, seed):
        import random

        rng = random.Random(seed)
        draw = lambda: F(rng.randint(-(2**12), 2**12), 2**10)  # noqa: E731
        layers = (Layer([[draw(), draw()] for _ in range(3)], [draw() for _ in range(3)], True), Layer([[draw() for _ in range(3)]], [draw()], False))
        net = Network(2, layers)
        for _ in range(10):
            x = [draw(), draw()]
            exact = float(evaluate(net, x)[0])
            assert abs(evaluate_float(net, [float(v) for v in x]).values[0] - exact) <= 1e-9

    def test_stats_survive_round_trip(self):
        net = generate_target(2, 3, 3, seed=11)
        a, b = stats(net), stats(deserialize(serialize(net)))
        assert (a.width, a.depth) == (b.width, b.depth)

    @pytest.mark.parametrize("seed", range(3))
    def test_lipschitz_continuity(self, seed):
        import math

        net = random_rational_net(2, [3, 3], seed)
        lip = 1.0
        for layer in net.layers:
            lip *= math.sqrt(sum(float(w) ** 2 for row in layer.weights for w in row))
        x = [F(1, 3), F(-2, 5)]
        for h in ([F(1, 10**6), 0], [F(-3, 10**7), F(2, 10**7)]):
            step = math.sqrt(sum(float(v) ** 2 for v in h))
            moved = evaluate(net, [a + b for a, b in zip(x, h)])[0]
            assert abs(float(moved - evaluate(net, x)[0])) <= lip * step * (1 + 1e-9)
