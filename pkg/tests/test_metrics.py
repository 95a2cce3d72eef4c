import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deltaquant.errors import ShapeError
from deltaquant.metrics import (
    DeltaPair,
    DeltaStats,
    LayerPair,
    MetricKind,
    aggregate_stats,
    compute_delta,
    cos_sim,
    delta_l2,
    delta_stats,
    evaluate,
    mse,
    sign_rate,
)

small_floats = st.floats(-100, 100, allow_nan=False, width=32)
small_ints = st.integers(-1000, 1000).map(float)


def pair_of(post, quant, base=0.0):
    post, quant = np.asarray(post, float), np.asarray(quant, float)
    return DeltaPair(post - base, quant - base)


def toy(quant):
    pair = LayerPair("w", np.array([5.0]), np.array([5.3]))
    return compute_delta(pair, np.array([quant]))


def mp_cosine(p, q):
    mpmath.mp.dps = 50
    dot = mpmath.fsum(mpmath.mpf(float(a)) * mpmath.mpf(float(b)) for a, b in zip(p, q))
    np_ = mpmath.sqrt(mpmath.fsum(mpmath.mpf(float(a)) ** 2 for a in p))
    nq = mpmath.sqrt(mpmath.fsum(mpmath.mpf(float(b)) ** 2 for b in q))
    return float(dot / (np_ * nq))


class TestComputeDelta:
    def test_identical_weights(self):
        w = np.arange(6.0).reshape(2, 3)
        d = compute_delta(LayerPair("w", w, w), w)
        assert not d.d_post.any() and not d.d_quant.any()

    def test_toy_nearest(self):
        d = toy(5.0)
        assert d.d_post[0] == pytest.approx(0.3, abs=1e-12)
        assert d.d_quant[0] == 0.0

    def test_toy_rounded_up(self):
        d = toy(6.0)
        assert d.d_post[0] == pytest.approx(0.3, abs=1e-12)
        assert d.d_quant[0] == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            LayerPair("w", np.zeros((2, 2)), np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            compute_delta(LayerPair("w", np.zeros((2, 2)), np.zeros((2, 2))), np.zeros(4))

    def test_widened_precision(self):
        base = np.array([1.0], dtype=np.float32)
        post = np.array([1.0 + 2**-20], dtype=np.float32)
        d = compute_delta(LayerPair("w", base, post), post)
        assert d.d_post.dtype == np.float64 and d.d_post[0] == 2**-20


class TestMse:
    def test_toy_values(self):
        assert mse(toy(5.0)) == pytest.approx(0.09, abs=1e-12)
        assert mse(toy(6.0)) == pytest.approx(0.49, abs=1e-12)

    def test_zero(self):
        assert mse(pair_of([1, -2, 3], [1, -2, 3])) == 0.0

    def test_identity_with_weight_mse(self, rng):
        for _ in range(20):
            base, post, quant = (rng.standard_normal((17, 9)) for _ in range(3))
            on_weights = np.mean((quant - post) ** 2)
            d = compute_delta(LayerPair("w", base, post), quant)
            assert abs(mse(d) - on_weights) <= 1e-12 * (1 + on_weights)


class TestSignRate:
    def test_identical(self, rng):
        d = rng.standard_normal(50)
        assert sign_rate(pair_of(d, d)) == 1.0

    def test_toy_erased(self):
        assert sign_rate(toy(5.0)) == 0.0
        assert sign_rate(toy(6.0)) == 1.0

    def test_enumeration(self):
        assert sign_rate(pair_of([1, -1, 1, 0], [2, 1, -1, 0])) == 0.5

    def test_zero_conventions(self):
        assert sign_rate(pair_of([0, 0], [0, 0])) == 1.0
        assert sign_rate(pair_of([0, 1], [1, 0])) == 0.0
        assert sign_rate(pair_of([-0.0], [0.0])) == 1.0


class TestCosSim:
    def test_identical(self, rng):
        d = rng.standard_normal(30)
        assert cos_sim(pair_of(d, d)) == pytest.approx(1.0, abs=1e-15)

    def test_reversed(self, rng):
        d = rng.standard_normal(30)
        assert cos_sim(pair_of(d, -d)) == pytest.approx(-1.0, abs=1e-15)

    def test_orthogonal(self):
        assert cos_sim(pair_of([1, 0], [0, 1])) == 0.0

    def test_degenerate(self):
        assert cos_sim(pair_of([0, 0], [0, 0])) == 1.0
        assert cos_sim(pair_of([0, 0], [1, 0])) == 0.0
        assert cos_sim(pair_of([1, 0], [0, 0])) == 0.0

    def test_matches_extended_precision(self, rng):
        for _ in range(25):
            p, q = rng.standard_normal(8), rng.standard_normal(8)
            assert abs(cos_sim(pair_of(p, q)) - mp_cosine(p, q)) <= 1e-12

    def test_toy_one_dimensional(self):
        assert cos_sim(toy(6.0)) == 1.0


class TestDeltaL2:
    def test_values(self):
        assert delta_l2(pair_of([1, 2], [1, 2])) == 0.0
        assert delta_l2(toy(5.0)) == pytest.approx(0.3, abs=1e-12)
        assert delta_l2(pair_of([0, 0], [3, 4])) == 5.0


class TestEvaluate:
    def test_dispatch(self):
        d = pair_of([1.0, -2.0], [1.0, -2.0])
        assert evaluate(MetricKind.NEG_MSE, d) == 0.0
        assert evaluate(MetricKind.SIGN_RATE, d) == 1.0
        assert evaluate(MetricKind.COS_SIM, d) == pytest.approx(1.0)
        assert evaluate(MetricKind.NEG_MSE, toy(5.0)) == pytest.approx(-0.09, abs=1e-12)
        assert evaluate(MetricKind.COS_SIM, toy(6.0)) == 1.0

    @pytest.mark.parametrize("text,kind", [("sign", MetricKind.SIGN_RATE), ("cosine", MetricKind.COS_SIM),
                                           ("cos", MetricKind.COS_SIM), ("MSE", MetricKind.NEG_MSE)])
    def test_parse(self, text, kind):
        assert MetricKind.parse(text) is kind


class TestProperties:
    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, 12, elements=small_floats), arrays(np.float64, 12, elements=small_floats))
    def test_ranges(self, p, q):
        d = pair_of(p, q)
        assert 0.0 <= sign_rate(d) <= 1.0
        assert -1.0 <= cos_sim(d) <= 1.0
        assert mse(d) >= 0 and delta_l2(d) >= 0

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, 10, elements=small_ints), arrays(np.float64, 10, elements=small_ints),
           arrays(np.float64, 10, elements=small_ints), arrays(np.float64, 10, elements=small_ints))
    def test_base_shift_invariance(self, base, post, quant, shift):
        # integer-valued data keeps every subtraction exact
        d1 = compute_delta(LayerPair("w", base, post), quant)
        d2 = compute_delta(LayerPair("w", base + shift, post + shift), quant + shift)
        assert sign_rate(d1) == sign_rate(d2)
        assert cos_sim(d1) == cos_sim(d2)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, 10, elements=small_floats), arrays(np.float64, 10, elements=small_floats),
           st.floats(1e-3, 1e3))
    def test_scale_covariance(self, p, q, c):
        d, dc = pair_of(p, q), pair_of(p * c, q * c)
        assert sign_rate(d) == sign_rate(dc)
        assert cos_sim(d) == pytest.approx(cos_sim(dc), abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, 10, elements=small_floats), arrays(np.float64, 10, elements=small_floats),
           st.permutations(list(range(10))))
    def test_permutation_invariance(self, p, q, perm):
        d, dp = pair_of(p, q), pair_of(p[perm], q[perm])
        assert sign_rate(d) == sign_rate(dp)
        assert cos_sim(d) == pytest.approx(cos_sim(dp), abs=1e-12)
        assert mse(d) == pytest.approx(mse(dp), rel=1e-12, abs=1e-300)


class TestAggregate:
    def test_recomputes_concatenation(self, rng):
        layers = [(rng.standard_normal(n), rng.standard_normal(n)) for n in (5, 40, 13)]
        rows = [delta_stats(pair_of(p, q)) for p, q in layers]
        agg = aggregate_stats(rows)
        cat = pair_of(np.concatenate([p for p, _ in layers]), np.concatenate([q for _, q in layers]))
        assert agg["sign_rate"] == pytest.approx(sign_rate(cat), abs=1e-15)
        assert agg["cos_sim"] == pytest.approx(cos_sim(cat), abs=1e-12)
        assert agg["delta_l2"] == pytest.approx(delta_l2(cat), rel=1e-12)
        assert agg["mse"] == pytest.approx(mse(cat), rel=1e-12)
        assert agg["sign_rate_layer_mean"] == pytest.approx(np.mean([r.sign_rate for r in rows]))

    def test_degenerate_layers(self):
        rows = [DeltaStats(4, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)]
        assert aggregate_stats(rows)["cos_sim"] == 1.0
        assert aggregate_stats([])["elements"] == 0
