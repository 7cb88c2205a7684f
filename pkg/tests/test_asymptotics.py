import math

import numpy as np
import pytest

from fracwave.asymptotics import (
    Cancelled,
    CancelToken,
    clt_rate,
    cumulant_kernel,
    high_normalizer_closed_form,
    limiting_cumulant,
    limiting_cumulant_integral,
    limiting_cumulant_integral_naive,
    limiting_variance_high,
    sigma2,
    sigma2_partial,
    sigma2_psi_partial,
    temporal_second_moment,
    three_sum_display,
)
from fracwave.sampler import build_temporal_model, quadratic_form_cumulant, wick_second_moment


class TestSigma2:
    def test_white(self):
        val = sigma2(0.5)
        assert val.value == 1 / 6
        assert val.tail_bound == 0.0

    def test_white_drift_constant(self):
        assert 16 * sigma2(0.5).value == pytest.approx(8 / 3, rel=1e-15)

    def test_tolerance_met(self):
        val = sigma2(0.65, tol=1e-10)
        assert 0 <= val.tail_bound < 1e-10
        assert val.value > sigma2_partial(0.65, val.truncation)

    @pytest.mark.parametrize("h,ref", [(0.6, 0.180355137), (0.65, 0.211541993), (0.7, 0.321438306)])
    def test_reference_values(self, h, ref):
        assert sigma2(h).value == pytest.approx(ref, abs=2e-9)

    def test_tail_against_long_partial_sum(self):
        # Independent check: a long partial sum plus a crude integral tail.
        h, K = 0.65, 2 * 10 ** 6
        part = sigma2_partial(h, K)
        c = h * (2 * h - 1)
        crude_tail = 2 * c * c * K ** (4 * h - 3) / (3 - 4 * h) / 6
        assert sigma2(h).value == pytest.approx(part + crude_tail, rel=1e-8)

    @pytest.mark.parametrize("h", [0.55, 0.6, 0.65, 0.7, 0.74])
    @pytest.mark.parametrize("K", [0, 1, 5, 100, 1000])
    def test_psi_form_identity(self, h, K):
        assert sigma2_psi_partial(h, K) == pytest.approx(sigma2_partial(h, K), rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            sigma2(0.8)
        with pytest.raises(ValueError):
            sigma2(0.75)
        with pytest.raises(ValueError):
            sigma2(0.6, tol=0)
        with pytest.raises(ValueError):
            sigma2(0.74, tol=1e-15, max_terms=512)

    def test_cancel(self):
        token = CancelToken()
        token.cancel()
        with pytest.raises(Cancelled):
            sigma2(0.6, cancel=token)


class TestSecondMoment:
    @pytest.mark.parametrize("h", [0.5, 0.6, 0.7, 0.85, 0.95])
    @pytest.mark.parametrize("n", [1, 2, 7, 64, 512])
    def test_matches_wick(self, h, n):
        m = build_temporal_model(h, n)
        assert temporal_second_moment(h, n) == pytest.approx(wick_second_moment(m, n), rel=1e-10)

    @pytest.mark.parametrize("h", [0.5, 0.6, 0.7])
    def test_monotone_approach(self, h):
        target = sigma2(h).value
        gaps = [abs(n ** (4 * h + 1) * temporal_second_moment(h, n) - target) for n in (2 ** 8, 2 ** 10, 2 ** 12, 2 ** 14)]
        assert gaps == sorted(gaps, reverse=True)


class TestHighNormalizer:
    def test_closed_form_value(self):
        assert high_normalizer_closed_form(0.85) == pytest.approx(0.85 * 0.7 / (4 * 2.4 * 0.4), rel=1e-14)
        assert high_normalizer_closed_form(0.85) == pytest.approx(0.15495, abs=5e-6)

    def test_extrapolation(self):
        res = limiting_variance_high(0.85)
        assert res.converged
        assert res.grid[0] == 2 ** 8 and res.grid[-1] == 2 ** 13
        assert res.value == pytest.approx(res.closed_form, rel=1e-3)
        assert abs(res.relative_gap) < 1e-3

    def test_three_sum_corrected_tracks_sequence(self):
        gaps = []
        for n in (2 ** 8, 2 ** 10, 2 ** 13):
            direct = n ** 4 * temporal_second_moment(0.85, n)
            gaps.append(abs(three_sum_display(0.85, n) - direct) / direct)
        assert gaps == sorted(gaps, reverse=True) and gaps[-1] < 1e-3
        # With psi2 unsquared in the last sum the display does not track the sequence.
        assert abs(three_sum_display(0.85, n, literal=True) - direct) > 0.5 * direct

    def test_distinct_parameters(self):
        a = limiting_variance_high(0.85, n_max=2 ** 11)
        b = limiting_variance_high(0.9, n_max=2 ** 11)
        assert a.value != pytest.approx(b.value, rel=1e-3)

    def test_errors(self):
        with pytest.raises(ValueError):
            limiting_variance_high(0.7)
        with pytest.raises(ValueError):
            limiting_variance_high(0.85, n_max=2 ** 8)

    def test_cancel(self):
        token = CancelToken()
        token.cancel()
        with pytest.raises(Cancelled):
            limiting_variance_high(0.85, cancel=token)


class TestLimitingCumulant:
    def test_positive(self):
        for m in (3, 4, 5):
            assert limiting_cumulant(0.85, m, mesh=32) > 0

    def test_transfer_matches_naive(self):
        assert limiting_cumulant_integral(0.85, 3, mesh=16) == pytest.approx(
            limiting_cumulant_integral_naive(0.85, 3, 16), rel=1e-12
        )

    def test_mesh_self_convergence(self):
        a = limiting_cumulant_integral(0.85, 3, mesh=64)
        b = limiting_cumulant_integral(0.85, 3, mesh=128)
        assert abs(a - b) < 0.02 * b

    def test_kernel_shape(self):
        k = cumulant_kernel(0.8, 8)
        assert k.shape == (8, 8)
        assert np.allclose(k, k.T)

    def test_against_finite_n_oracle(self):
        n = 512
        m = build_temporal_model(0.85, n)
        exact = quadratic_form_cumulant(m, 3) / quadratic_form_cumulant(m, 2) ** 1.5
        limit = limiting_cumulant(0.85, 3, mesh=128, k_norm=limiting_variance_high(0.85).value)
        assert limit == pytest.approx(exact, rel=0.1)

    def test_errors(self):
        with pytest.raises(ValueError):
            limiting_cumulant(0.7, 3)
        with pytest.raises(ValueError):
            limiting_cumulant(0.85, 2)
        with pytest.raises(ValueError):
            cumulant_kernel(0.85, 4)
        with pytest.raises(MemoryError):
            cumulant_kernel(0.85, 10 ** 5)
        with pytest.raises(ValueError):
            limiting_cumulant(0.85, 3, k_norm=-1.0)


class TestCltRate:
    def test_table(self):
        assert (clt_rate(0.55).exponent, clt_rate(0.55).log_power) == (-0.5, 0.0)
        r = clt_rate(0.625)
        assert (r.exponent, r.log_power) == (-0.5, 1.5)
        assert r.label == "N^{-1/2} log^{3/2} N"
        assert clt_rate(0.7).exponent == pytest.approx(-0.2)
        assert clt_rate(0.7).log_power == 0.0

    @pytest.mark.parametrize("h", np.linspace(0.5, 0.74, 25))
    def test_rate_decays(self, h):
        r = clt_rate(h)
        assert r(10 ** 8) < r(10 ** 4)
        assert r.exponent <= -0.04 or h > 0.7

    def test_continuity_of_exponent(self):
        assert clt_rate(0.6250001).exponent == pytest.approx(-0.5, abs=1e-6)

    def test_out_of_range(self):
        for h in (0.8, 0.75):
            with pytest.raises(ValueError):
                clt_rate(h)

    def test_callable(self):
        assert clt_rate(0.625)(math.e ** 2) == pytest.approx(math.e ** -1 * 2 ** 1.5)
