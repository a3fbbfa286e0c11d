import math
from fractions import Fraction as F

import pytest

from narrownet.harness import generate_target, good_points, uniform_points
from narrownet.narrowing import (
    BitBudget,
    CompileConfig,
    CompileError,
    QuantizedLayer,
    bit_budget,
    bound_weights,
    ceil_log2,
    check_lengths,
    compile_narrow,
    compile_narrow_multi,
    depth_bound,
    encode_input_fragment,
    max_weight_bound,
    narrow_stages,
    plan_bounded_weights,
    quantize,
    width_bound,
)
from narrownet.netcore import Layer, Network, evaluate_many, stats
from oracles import dyadic_midpoints, encoded_word, naive_forward, pack, quantized_recursion, random_rational_net

# measured maximum of params / (n^2 L^2 log2(ABn/eps)) over the desk grid, rounded up
PARAM_CONSTANT = 1100


def cfg_for(d, n, L, **kw):
    kw.setdefault("eps", F(1, 16))
    kw.setdefault("delta", F(1, 16))
    return CompileConfig(d, n, L, **kw)


class TestBudget:
    @pytest.mark.parametrize("v,k", [(1, 0), (2, 1), (3, 2), (F(1, 2), -1), (F(3, 8), -1), (1025, 11)])
    def test_ceil_log2(self, v, k):
        assert ceil_log2(v) == k

    @pytest.mark.parametrize("d,n,L", [(1, 2, 2), (2, 3, 3), (1, 4, 2), (3, 3, 4)])
    def test_c0_formula(self, d, n, L):
        cfg = cfg_for(d, n, L)
        # smallest c0 with 2^c0 >= (5ABnd/eps)^(2L), computed in floats with a guard
        guess = math.ceil(2 * L * math.log2(5 * n * d * 16))
        assert bit_budget(cfg).c0 in (guess - 1, guess)
        assert 2 ** bit_budget(cfg).c0 >= (5 * n * d * 16) ** (2 * L)

    def test_error_bound_formula(self):
        cfg = cfg_for(1, 2, 2)
        bound = F((5 * 2) ** 2, 2**cfg.bits.c0)
        assert bound <= cfg.eps
        assert cfg.error_bound_holds(bound)
        assert not cfg.error_bound_holds(bound * F(1001, 1000))

    @pytest.mark.parametrize("seed", range(3))
    def test_error_tracks_halving_bound(self, seed):
        # quantization error at a fixed point is not monotone in c0, but it
        # always sits under the bound, which halves with every extra bit
        target = generate_target(1, 2, 2, seed=seed)
        for c0 in range(6, 14):
            bound = F(100, 2**c0)
            for p in dyadic_midpoints(6, 1, F(1)):
                err = abs(quantized_recursion(target, p, F(1), c0)[1][0] - naive_forward(target, p)[0])
                assert err <= bound

    def test_non_power_of_two_scales(self):
        cfg = cfg_for(1, 2, 2, A=3, B=F(3, 2))
        assert cfg.box == 4 and cfg.bound == 2
        assert cfg.effective_delta == cfg.delta * F(3, 4)


class TestConfig:
    def test_d_greater_than_n(self):
        with pytest.raises(CompileError, match="d <= n"):
            CompileConfig(3, 2, 2)

    @pytest.mark.parametrize(
        "kw",
        [dict(eps=0), dict(delta=0), dict(delta=1), dict(A=F(1, 2)), dict(beta=0), dict(distribution="gauss"), dict(backend="gpu")],
    )
    def test_invalid(self, kw):
        with pytest.raises(CompileError):
            CompileConfig(1, 2, 2, **kw)

    def test_beta_bounded_delta(self):
        cfg = cfg_for(2, 2, 2, distribution="beta-bounded", beta=F(1, 2))
        assert cfg.effective_delta == cfg.delta / (F(1, 2) * 4)

    def test_beta_too_small_for_a_density(self):
        with pytest.raises(CompileError, match="density"):
            cfg_for(2, 2, 2, distribution="beta-bounded", beta=F(1, 8))


class TestEncoder:
    def test_zero(self):
        f = encode_input_fragment(cfg_for(1, 1, 2), BitBudget(2, 5))
        assert f(-1) == [0]

    def test_single_block(self):
        f = encode_input_fragment(cfg_for(1, 1, 2), BitBudget(2, 5))
        assert f(F(5, 8) - 1) == [2]

    def test_two_blocks(self):
        f = encode_input_fragment(cfg_for(2, 2, 2), BitBudget(2, 5))
        assert f(F(5, 8) - 1, F(9, 8) - 1) == [2 * 2**5 + 4]

    @pytest.mark.parametrize("d,c0,A", [(1, 3, 1), (2, 3, 1), (2, 2, 2), (3, 2, 1)])
    def test_midpoints(self, d, c0, A):
        bits = BitBudget(c0, 2 * c0 + 2)
        cfg = cfg_for(d, 3, 2, A=A)
        f = encode_input_fragment(cfg, bits)
        assert f.measured_width <= 5 * d and f.measured_depth == 3 * c0 + 1
        pts = dyadic_midpoints(c0, d, F(A))
        got = [v[0] for v in f.evaluate_many(pts)]
        assert got == [encoded_word(p, F(A), c0, bits.c) for p in pts]


class TestQuantization:
    def test_bias_absorbs_shift(self):
        net = Network(1, (Layer([[F(1, 2)]], [F(1, 4)], True), Layer([[-1]], [0], False)))
        cfg = cfg_for(1, 1, 2)
        q = quantize(net, cfg)
        c0 = cfg.bits.c0
        assert q[0].magnitudes == ((2 ** (c0 - 1),),)
        assert q[0].biases == (2 ** (2 * c0 - 2) - 2 ** (2 * c0 - 1),)
        assert q[1].signs == ((-1,),)

    def test_length_check_rejects_wide_weights(self):
        cfg = cfg_for(1, 1, 2)
        c = cfg.bits.c
        bad = [QuantizedLayer(((2**c,),), ((1,),), (0,)), QuantizedLayer(((1,),), ((1,),), (0,))]
        with pytest.raises(CompileError, match="bits"):
            check_lengths(bad, cfg)

    def test_weight_outside_bound(self):
        net = generate_target(1, 2, 2, B=2, seed=0)
        if stats(net).max_weight <= 1:
            pytest.skip("draw stayed inside [-1, 1]")
        with pytest.raises(CompileError, match="outside"):
            compile_narrow(net, cfg_for(1, 2, 2))

    def test_depth_mismatch(self):
        with pytest.raises(CompileError, match="depth"):
            compile_narrow(generate_target(1, 2, 3, seed=0), cfg_for(1, 2, 2))


def stage_trace(target, cfg, pts):
    """Run the compiled stages one by one, returning packed words after each compress."""
    words = {}
    values = pts
    for label, frag in narrow_stages(target, cfg):
        values = frag.evaluate_many(values)
        if label.startswith("compress"):
            words[int(label.split()[1])] = [v[0] for v in values]
    return words, [v for v in values]


class TestCompiled:
    @pytest.mark.parametrize("d,n,L,seed", [(1, 2, 2, 0), (1, 2, 3, 1), (2, 2, 2, 2), (2, 3, 3, 3)])
    def test_matches_quantized_recursion(self, d, n, L, seed):
        target = generate_target(d, n, L, seed=seed)
        cfg = cfg_for(d, n, L)
        pts = good_points(cfg, 12, seed)
        words, outs = stage_trace(target, cfg, pts)
        c0, c = cfg.bits.c0, cfg.bits.c
        for k, p in enumerate(pts):
            trace, want = quantized_recursion(target, p, cfg.box, c0)
            for ell in range(1, L):
                assert words[ell][k] == pack(trace[ell], c)
            assert outs[k] == want

    @pytest.mark.parametrize("d,n,L,seed", [(1, 2, 2, 5), (2, 2, 3, 6)])
    def test_error_on_good_points(self, d, n, L, seed):
        target = generate_target(d, n, L, seed=seed)
        cfg = cfg_for(d, n, L)
        net = compile_narrow(target, cfg)
        pts = good_points(cfg, 50, seed)
        for p, y in zip(pts, evaluate_many(net, pts)):
            err = abs(y[0] - naive_forward(target, p)[0])
            assert err <= cfg.eps and cfg.error_bound_holds(err)

    def test_sampled_example(self):
        w = [[1], [-1]]
        target = Network(1, (Layer(w, [0, 1], True), Layer([[1, -1]], [0], False)))
        cfg = CompileConfig(1, 2, 2, eps=F(1, 4), delta=F(1, 8))
        net = compile_narrow(target, cfg)
        pts = uniform_points(cfg, 200, 0)
        errs = [abs(a[0] - b[0]) for a, b in zip(evaluate_many(net, pts), evaluate_many(target, pts))]
        failures = sum(1 for e in errs if e > cfg.eps)
        assert failures / 200 <= 1 / 8 + 3 * math.sqrt((1 / 8) / 200)
        assert max(e for e in errs if e <= cfg.eps) <= cfg.eps

    def test_zero_target(self):
        zero = Network(2, (Layer([[0, 0]] * 2, [0, 0], True), Layer([[0, 0]], [0], False)))
        cfg = cfg_for(2, 2, 2)
        net = compile_narrow(zero, cfg)
        assert all(v == [0] for v in evaluate_many(net, good_points(cfg, 20, 0)))

    @pytest.mark.parametrize("d,width", [(1, 10), (3, 15)])
    def test_width(self, d, width):
        cfg = cfg_for(d, 3, 2)
        net = compile_narrow(generate_target(d, 3, 2, seed=1), cfg)
        s = stats(net)
        assert s.width == width == width_bound(cfg)
        assert s.depth == depth_bound(cfg)
        assert s.max_weight <= max_weight_bound(cfg)

    @pytest.mark.parametrize("d,n,L", [(1, 2, 2), (1, 3, 3), (2, 3, 2)])
    def test_params_regression(self, d, n, L):
        cfg = cfg_for(d, n, L)
        s = stats(compile_narrow(generate_target(d, n, L, seed=0), cfg))
        term = n * n * L * L * math.log2(cfg.A * cfg.B * n / cfg.eps)
        assert s.params <= PARAM_CONSTANT * term

    def test_multi_output(self):
        base = generate_target(1, 2, 2, seed=4)
        out = base.layers[-1]
        dup = Network(1, (base.layers[0], Layer([out.weights[0]] * 2, [out.bias[0]] * 2, False)))
        cfg = cfg_for(1, 2, 2)
        single = compile_narrow(base, cfg)
        multi = compile_narrow_multi(dup, cfg)
        assert compile_narrow_multi(base, cfg) == single
        assert stats(multi).width <= 2 * stats(single).width
        pts = good_points(cfg, 20, 1)
        for a, b in zip(evaluate_many(multi, pts), evaluate_many(single, pts)):
            assert a == [b[0], b[0]]

    def test_single_output_only(self):
        dup = Network(1, (Layer([[1]], [0], True), Layer([[1], [2]], [0, 0], False)))
        with pytest.raises(CompileError):
            compile_narrow(dup, cfg_for(1, 1, 2))

    def test_deterministic(self):
        target = generate_target(1, 2, 2, seed=9)
        assert compile_narrow(target, cfg_for(1, 2, 2)) == compile_narrow(target, cfg_for(1, 2, 2))


class TestBoundWeights:
    def test_small_weights_unchanged(self):
        net = random_rational_net(1, [2], 0)
        small = Network(1, tuple(Layer([[w / 10 for w in r] for r in l.weights], [b / 10 for b in l.bias], l.relu) for l in net.layers))
        assert bound_weights(small) is small

    def test_zero_net_unchanged(self):
        zero = Network(1, (Layer([[0]], [0], False),))
        assert bound_weights(zero) is zero

    def test_single_weight_eight(self):
        net = Network(1, (Layer([[8]], [0], False),))
        plan = plan_bounded_weights(net)
        assert (plan.alpha, plan.beta_factor) == (3, 1)
        out = bound_weights(net)
        assert out([1]) == [8]
        assert stats(out).max_weight <= 2

    @pytest.mark.parametrize("schedule", ["uniform", "layerwise"])
    @pytest.mark.parametrize("seed", range(3))
    def test_random_equality(self, schedule, seed):
        net = random_rational_net(2, [3, 3], seed)
        out = bound_weights(net, schedule)
        assert out.tag == "compiled-bounded"
        assert stats(out).max_weight <= 2
        pts = [[F(seed * 13 - k, 7), F(k * k, 11) - 5] for k in range(100)]
        assert evaluate_many(out, pts) == evaluate_many(net, pts)

    def test_beta_factor_range(self):
        net = Network(1, (Layer([[3]], [1], True), Layer([[3]], [0], False)))
        plan = plan_bounded_weights(net, "uniform")
        assert 1 <= plan.beta_factor < 2
        assert plan.total_scale == 9

    def test_compiled_net(self):
        cfg = cfg_for(1, 2, 2)
        net = compile_narrow(generate_target(1, 2, 2, seed=2), cfg)
        out = bound_weights(net)
        assert stats(out).max_weight <= 2
        assert stats(out).width == stats(net).width
        pts = uniform_points(cfg, 10, 0)
        assert evaluate_many(out, pts) == evaluate_many(net, pts)
