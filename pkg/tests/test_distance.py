import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import classical_routing, fock_amplitudes, tvd_dicts
from indist.distance import (
    cyclic_inputs,
    cyclic_inputs_for,
    dumps_report,
    input_tvds,
    loads_report,
    tvd,
    tvd_report,
)
from indist.errors import ParseError, ValidationError
from indist.interference import Distribution, distribution_pair
from indist.matrices import fourier, haar_random, notable, sylvester


class TestTvd:
    def test_hom(self):
        assert tvd(*distribution_pair(sylvester(1), (1, 1))) == pytest.approx(0.5)

    def test_identical(self):
        Q, _ = distribution_pair(haar_random(3, 0), (1, 1, 0))
        assert tvd(Q, Q) == 0.0

    def test_label_mismatch(self):
        with pytest.raises(ValidationError):
            tvd(Distribution([(1, 0)], [1.0]), Distribution([(0, 1)], [1.0]))

    @given(st.integers(0, 2**31))
    @settings(max_examples=25, deadline=None)
    def test_bounds_and_symmetry(self, seed):
        Q, P = distribution_pair(haar_random(4, seed), (1, 0, 1, 0))
        t = tvd(Q, P)
        assert 0.0 <= t <= 1.0
        assert t == tvd(P, Q)

    @pytest.mark.parametrize("m", [3, 4])
    def test_matches_oracle(self, m):
        U = haar_random(m, m)
        rep = tvd_report(U, 2)
        for cfg, value in rep.per_input.items():
            modes = [j for j, s in enumerate(cfg) if s]
            assert value == pytest.approx(tvd_dicts(fock_amplitudes(U, modes), classical_routing(U, modes)), abs=1e-12)


class TestReport:
    def test_u4_average(self):
        rep = tvd_report(notable("U4main"), 3)
        assert rep.avg_tvd == pytest.approx(0.53125, abs=1e-12)
        assert rep.max_tvd == pytest.approx(0.5625, abs=1e-12)

    def test_best_input_tie_break(self):
        # every input of Sylvester(2) ties at 0.5; the first in lexicographic order wins
        rep = tvd_report(sylvester(2), 2)
        assert rep.best_input == (1, 1, 0, 0)

    def test_explicit_inputs(self):
        rep = tvd_report(fourier(4), 2, inputs=[(1, 0, 1, 0)])
        assert list(rep.per_input) == [(1, 0, 1, 0)]
        assert rep.max_tvd == pytest.approx(0.5)

    def test_input_tvds_matches_report(self):
        U = haar_random(5, 1)
        np.testing.assert_allclose(input_tvds(U, 2, "binned"), list(tvd_report(U, 2, "binned").per_input.values()))

    def test_round_trip(self):
        rep = tvd_report(haar_random(4, 3), 2, "binned")
        back = loads_report(dumps_report(rep))
        assert back == rep

    def test_malformed(self):
        with pytest.raises(ParseError, match="line 2"):
            loads_report("input\ttvd\n1-1\t0.5\textra\n")


class TestCyclic:
    def test_pattern(self):
        assert cyclic_inputs(2, 2) == [(1, 0, 1, 0), (0, 1, 0, 1)]
        assert cyclic_inputs(3, 1) == [(1, 1, 1)]

    @pytest.mark.parametrize("n,p", [(2, 1), (2, 2), (2, 3), (3, 2)])
    def test_fourier_cyclic_tvd(self, n, p):
        # Fourier reaches the two-photon maximum on cyclic inputs; for n=3 only checks it runs
        rep = tvd_report(fourier(n**p), n, inputs=cyclic_inputs(n, p))
        if n == 2:
            assert all(abs(v - 0.5) < 1e-9 for v in rep.per_input.values())
        assert len(rep.per_input) == n ** (p - 1)

    def test_for_mode_count(self):
        assert cyclic_inputs_for(2, 8) == cyclic_inputs(2, 3)
        for n, m in [(2, 6), (1, 4), (3, 2)]:
            with pytest.raises(ValidationError):
                cyclic_inputs_for(n, m)
