import numpy as np
import pytest

from indist.errors import ValidationError
from indist.matrices import is_unitary, sylvester
from indist.search import (
    EnsembleHistogram,
    Setting,
    as_setting,
    compass_search,
    dumps_histogram,
    haar_screen,
    loads_histogram,
    local_optimize,
    phase_noise_ensemble,
    phase_noise_sample,
    tvd_statistic,
    unitary_from_params,
)


class TestStatistic:
    def test_settings(self):
        assert tvd_statistic(sylvester(2), 2, setting="best") == pytest.approx(0.5)
        assert tvd_statistic(sylvester(2), 2, setting="average") == pytest.approx(0.5)
        assert tvd_statistic(sylvester(2), 2, setting="fixed", input_config=(1, 1, 0, 0)) == pytest.approx(0.5)

    def test_fixed_needs_input(self):
        with pytest.raises(ValidationError):
            tvd_statistic(sylvester(2), 2, setting=Setting.FIXED)

    def test_aliases(self):
        assert as_setting("avg") is Setting.AVERAGE
        with pytest.raises(ValidationError):
            as_setting("median")


class TestHistogram:
    def test_counts_and_clipping(self):
        h = EnsembleHistogram.from_values([0.0, 0.25, 1.0 + 1e-15, 0.999])
        assert h.counts.sum() == 4
        assert h.counts[-1] == 2
        assert h.minimum == 0.0

    def test_round_trip(self):
        h = EnsembleHistogram.from_values(np.linspace(0.1, 0.6, 37), {"sylvester": 0.5})
        back = loads_histogram(dumps_histogram(h))
        np.testing.assert_array_equal(back.counts, h.counts)
        np.testing.assert_allclose(back.bin_edges, h.bin_edges)
        assert back.markers == h.markers
        assert back.sample_count == 37


class TestEnsembles:
    def test_haar_screen_threads_invariant(self):
        a = haar_screen(4, 2, num_samples=40, seed=5, threads=1)
        b = haar_screen(4, 2, num_samples=40, seed=5, threads=4)
        np.testing.assert_array_equal(a.histogram.values, b.histogram.values)
        np.testing.assert_array_equal(a.best_matrix, b.best_matrix)

    def test_haar_screen_best_matches_values(self):
        r = haar_screen(3, 2, num_samples=30, seed=1)
        assert r.best_value == pytest.approx(tvd_statistic(r.best_matrix, 2))
        assert r.best_value == r.histogram.maximum

    def test_markers(self):
        r = haar_screen(4, 2, num_samples=5, seed=0)
        assert r.histogram.markers["sylvester"] == pytest.approx(0.5)
        assert r.histogram.markers["fourier"] == pytest.approx(1 / 3)
        assert "sylvester" not in haar_screen(3, 2, num_samples=2, seed=0).histogram.markers

    def test_phase_noise_cyclic_fixed_input(self):
        h = phase_noise_ensemble(2, 2, "fixed", 200, seed=3, input_config=(1, 0, 1, 0))
        assert np.all(np.abs(h.values - 0.5) < 1e-9)

    def test_phase_noise_four_mode_bounds(self):
        # for 4 modes Sylvester and Fourier bound the ensemble from above and below
        h = phase_noise_ensemble(2, 2, "average", 300, seed=2)
        assert h.maximum <= 0.5 + 1e-12
        assert h.minimum >= 1 / 3 - 1e-12

    def test_phase_noise_sample_reproduces(self):
        h = phase_noise_ensemble(2, 2, "average", 10, seed=4)
        assert tvd_statistic(phase_noise_sample(2, 4, 7), 2) == pytest.approx(h.values[7])


class TestOptimization:
    def test_parametrization_unitary(self):
        rng = np.random.default_rng(0)
        for m in (2, 3, 5):
            assert is_unitary(unitary_from_params(rng.uniform(0, 7, m * m), m))
        with pytest.raises(ValidationError):
            unitary_from_params(np.zeros(3), 2)

    def test_compass_monotone(self):
        f = lambda x: -np.sum((x - 1.3) ** 2)
        x, fx, trace = compass_search(f, np.zeros(3))
        assert np.all(np.diff(trace) > 0)
        np.testing.assert_allclose(x, 1.3, atol=1e-6)

    def test_local_optimize_hom(self):
        # the best two-photon single-input TVD over U(2) is the HOM value
        res = local_optimize(2, 2, setting="best", seed=0, restarts=4, max_evals=3000)
        assert res.value == pytest.approx(0.5, abs=1e-6)
        assert all(np.all(np.diff(t) > 0) for t in res.traces)

    def test_local_optimize_deterministic(self):
        a = local_optimize(3, 2, seed=2, restarts=2, max_evals=500, threads=1)
        b = local_optimize(3, 2, seed=2, restarts=2, max_evals=500, threads=2)
        assert a.restart_values == b.restart_values
