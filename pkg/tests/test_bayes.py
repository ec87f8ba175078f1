import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from indist.bayes import (
    EventRecord,
    Favored,
    HypothesisFamily,
    binary_favored,
    confidence_curve,
    convex_log_ratio,
    convex_lr_stage_a,
    convex_lr_stage_a_arrays,
    convex_lr_stage_b,
    infer_x,
    infer_x_arrays,
    log_likelihood_ratio,
    log_ratio_terms,
    posterior_q,
    threshold_scan,
)
from indist.errors import ConvergenceError, ValidationError
from indist.interference import Distribution, distribution_pair
from indist.matrices import sylvester
from indist.scattershot import ScattershotConfig, sample_events
from indist.tomography import reference_device


@pytest.fixture(scope="module")
def hom_pair():
    return distribution_pair(sylvester(1), (1, 1))


@pytest.fixture(scope="module")
def s4_family():
    return HypothesisFamily.from_unitary(sylvester(2), 2, "binned")


@pytest.fixture(scope="module")
def stream():
    cfg = ScattershotConfig(sylvester(2), 2, x_true=0.738, seed=0)
    fam = cfg.family()
    return fam, fam.lookup(sample_events(cfg, 17_000, fam))


def _lookup(dist):
    table = dict(zip(dist.labels, dist.probs))
    return lambda e: table[e.output]


probs = st.floats(min_value=1e-3, max_value=1.0)


class TestLogLikelihoodRatio:
    def test_empty(self):
        assert log_likelihood_ratio([], lambda e: 1, lambda e: 1) == 0.0

    def test_equal_probabilities(self):
        assert log_likelihood_ratio([EventRecord((1, 1), (1, 1))], lambda e: 0.3, lambda e: 0.3) == 0.0

    def test_hom_bunching(self, hom_pair):
        Q, P = hom_pair
        assert Q.prob((2, 0)) == pytest.approx(0.5)
        assert P.prob((2, 0)) == pytest.approx(0.25)
        events = [EventRecord((1, 1), (2, 0))] * 10
        assert log_likelihood_ratio(events, _lookup(Q), _lookup(P)) == pytest.approx(10 * math.log(2), abs=1e-12)

    def test_saturation(self, hom_pair):
        Q, P = hom_pair
        events = [EventRecord((1, 1), (1, 1))]  # forbidden for Q
        value, saturated = log_likelihood_ratio(events, _lookup(Q), _lookup(P), full_output=True)
        assert value == -700.0
        assert saturated

    def test_cap_bounds_total(self):
        value = log_likelihood_ratio([0] * 5, lambda e: 1.0, lambda e: 0.0, cap=50)
        assert value == 50.0

    def test_both_zero_rejected(self):
        with pytest.raises(ValidationError):
            log_ratio_terms([0.0], [0.0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(probs, probs), min_size=1, max_size=30))
    def test_sum_matches_product(self, pairs):
        q = np.array([a for a, _ in pairs])
        p = np.array([b for _, b in pairs])
        direct = math.log(math.prod(q / p))
        assert log_ratio_terms(q, p).sum() == pytest.approx(direct, abs=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(min_value=-800, max_value=800))
    def test_posteriors_sum_to_one(self, log_r):
        assert posterior_q(log_r) + (1.0 - posterior_q(log_r)) == 1.0
        assert 0.0 <= posterior_q(log_r) <= 1.0


class TestConfidenceCurve:
    def test_starts_at_half(self, hom_pair):
        curve = confidence_curve(hom_pair, 10, 50, seed=1)
        assert curve.p_conf[0] == 0.5
        assert list(curve.n_events) == list(range(11))

    def test_identical_hypotheses(self):
        d = Distribution([(1, 0), (0, 1)], [0.3, 0.7])
        curve = confidence_curve((d, d), 20, 30, seed=0)
        np.testing.assert_array_equal(curve.p_conf, 0.5)

    def test_sylvester_multi_input(self, s4_family):
        curve = confidence_curve(s4_family, 100, 300, seed=2)
        assert curve.p_conf[100] > 0.99

    def test_non_decreasing(self, s4_family):
        curve = confidence_curve(s4_family, 30, 1000, seed=3)
        # pointwise Monte Carlo error is well below 0.01 at 1000 trials
        assert np.all(np.diff(curve.p_conf) > -0.01)

    def test_threads_invariant(self, s4_family):
        a = confidence_curve(s4_family, 25, 40, seed=4, threads=1)
        b = confidence_curve(s4_family, 25, 40, seed=4, threads=3)
        np.testing.assert_array_equal(a.p_conf, b.p_conf)

    def test_noise_lowers_confidence_only_mildly(self, s4_family):
        clean = confidence_curve(s4_family, 40, 400, seed=5)
        noisy = confidence_curve(s4_family, 40, 400, seed=5, data_noise=0.05)
        assert noisy.p_conf[40] > 0.9
        assert noisy.p_conf[0] == clean.p_conf[0] == 0.5


class TestInferX:
    def test_empty_prior_moments(self):
        post = infer_x_arrays([], [])
        assert post.x_est == pytest.approx(0.5, abs=1e-4)
        assert post.sigma_est == pytest.approx(1 / math.sqrt(12), abs=1e-4)

    def test_normalized(self):
        post = infer_x_arrays([0.5, 0.1, 0.0], [0.25, 0.3, 0.2])
        assert np.trapezoid(post.weights, post.grid) == pytest.approx(1.0, abs=1e-9)
        assert np.all(post.weights >= 0)
        assert 0 <= post.x_est <= 1 and post.sigma_est >= 0

    def test_impossible_events(self):
        with pytest.raises(ValidationError):
            infer_x_arrays([0.0, 0.5], [0.0, 0.5])

    def test_grid_size(self):
        with pytest.raises(ValidationError):
            infer_x_arrays([0.5], [0.5], grid_size=1)

    def test_pure_q_stream(self):
        cfg = ScattershotConfig(sylvester(2), 2, x_true=1.0, seed=11)
        fam = cfg.family()
        q, p = fam.lookup(sample_events(cfg, 10_000, fam))
        assert infer_x_arrays(q, p).x_est > 0.99

    def test_event_callables(self, hom_pair):
        Q, P = hom_pair
        events = [EventRecord((1, 1), (2, 0)), EventRecord((1, 1), (0, 2))]
        a = infer_x(events, _lookup(Q), _lookup(P))
        b = infer_x_arrays([0.5, 0.5], [0.25, 0.25])
        assert a.x_est == pytest.approx(b.x_est, rel=1e-14)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(probs, probs), min_size=1, max_size=40), st.randoms(use_true_random=False))
    def test_order_invariance(self, pairs, rnd):
        shuffled = list(pairs)
        rnd.shuffle(shuffled)
        a = infer_x_arrays(*zip(*pairs), grid_size=201)
        b = infer_x_arrays(*zip(*shuffled), grid_size=201)
        np.testing.assert_array_equal(a.weights, b.weights)


class TestConvex:
    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(probs, probs), min_size=1, max_size=30))
    def test_trivial_roots(self, pairs):
        q, p = map(np.array, zip(*pairs))
        assert convex_log_ratio(1.0, q, p, "Q") == 0.0
        assert convex_log_ratio(0.0, q, p, "P") == 0.0

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(probs, probs), min_size=2, max_size=30))
    def test_log_convexity(self, pairs):
        q, p = map(np.array, zip(*pairs))
        xs = np.linspace(0.01, 0.99, 41)
        for fav in "QP":
            f = np.array([convex_log_ratio(x, q, p, fav) for x in xs])
            # Q form is convex, P form is concave
            second = np.diff(f, 2) * (1 if fav == "Q" else -1)
            assert np.all(second > -1e-9 * (1 + np.abs(f).max()))

    def test_stage_a(self, stream):
        _, (q, p) = stream
        assert binary_favored(q, p) is Favored.P
        x_th = convex_lr_stage_a_arrays(q, p)
        assert 0.96 <= x_th < 1.0
        assert abs(convex_log_ratio(x_th, q, p, "P")) < 1e-6

    def test_stage_a_events(self, hom_pair):
        Q, P = hom_pair
        events = [EventRecord((1, 1), (1, 1))] * 3 + [EventRecord((1, 1), (2, 0))] * 7
        x = convex_lr_stage_a(events, _lookup(Q), _lookup(P), "P")
        assert 0 < x < 1

    def test_stage_a_no_root(self):
        with pytest.raises(ConvergenceError):
            convex_lr_stage_a_arrays([0.5, 0.5], [0.25, 0.25], "P")

    def test_stage_b(self, stream):
        fam, (q, p) = stream
        x_th = convex_lr_stage_a_arrays(q, p)
        res = convex_lr_stage_b(x_th, fam, "P", n_sim=20_000, n_repeats=10, seed=1)
        lo, hi = res.interval
        assert lo <= hi < x_th
        assert min(abs(lo - 0.738), abs(hi - 0.738)) < 0.02 or lo <= 0.738 <= hi

    def test_stage_b_kl_nonnegative(self, s4_family):
        x_th = 0.9
        res = convex_lr_stage_b(x_th, s4_family, "P", n_sim=2000, n_repeats=40, seed=2, y_grid=np.array([0.0, x_th, 1.0]))
        assert res.log_r[:, 1].mean() > 0

    def test_stage_b_threads(self, s4_family):
        a = convex_lr_stage_b(0.95, s4_family, "P", n_sim=500, n_repeats=6, seed=3, threads=1)
        b = convex_lr_stage_b(0.95, s4_family, "P", n_sim=500, n_repeats=6, seed=3, threads=4)
        np.testing.assert_array_equal(a.y_primes, b.y_primes)


class TestThreshold:
    def test_endpoints(self, s4_family):
        res = threshold_scan(s4_family, 200, 50, seed=0, x_grid=np.linspace(0, 1, 11))
        assert res.p_conf[-1] > 0.5
        assert res.p_conf[0] < 0.5
        assert 0 < res.crossing < 1

    def test_no_crossing(self):
        d = Distribution([(1, 0), (0, 1)], [0.3, 0.7])
        with pytest.raises(ConvergenceError):
            threshold_scan((d, d), 10, 5, seed=0)

    @pytest.mark.parametrize("policy", ["col", "binned"])
    def test_four_mode_device(self, policy):
        fam = HypothesisFamily.from_unitary(reference_device(4).unitary, 2, policy)
        res = threshold_scan(fam, 1000, 200, seed=0)
        assert 0.70 <= res.crossing <= 0.85

    def test_deterministic(self, s4_family):
        a = threshold_scan(s4_family, 100, 30, seed=9)
        b = threshold_scan(s4_family, 100, 30, seed=9)
        assert a.crossing == b.crossing
