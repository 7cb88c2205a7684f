import numpy as np
import pytest

from fracwave import sampler
from fracwave.kernels import GridConstraintError, PhysicalParams, RectGrid, rect_increment_cov_expanded
from fracwave.sampler import (
    CovarianceModel,
    NotPositiveDefiniteError,
    SeedSpec,
    build_model,
    build_rect_model,
    build_temporal_model,
    dump_model,
    load_model,
    quadratic_form_cumulant,
    rect_covariance_matrix,
    rect_difference_operator,
    sample_increments,
    trace_power,
    wick_second_moment,
)


def empirical_var_check(model, reps, seed):
    x = sample_increments(model, reps, seed)
    v = np.sum(x * x, axis=1) - model.trace
    k2 = quadratic_form_cumulant(model, 2)
    k4 = quadratic_form_cumulant(model, 4)
    se = np.sqrt(k4 / reps + 2 * k2 ** 2 / (reps - 1))
    return np.var(v, ddof=1), k2, se


class TestBuild:
    def test_white_two_point(self):
        m = build_temporal_model(0.5, 2)
        assert np.allclose(m.matrix, np.diag([1 / 16, 3 / 16]), rtol=0, atol=1e-17)

    def test_scaling_by_c(self):
        a = build_temporal_model(0.5, 2)
        b = build_temporal_model(0.5, 2, PhysicalParams(4.0, 1.0))
        assert np.allclose(b.matrix, a.matrix / 4, rtol=1e-15, atol=0)

    def test_positive_definite_high_h(self):
        m = build_temporal_model(0.7, 64)
        assert np.all(np.diag(m.factor) > 0)
        err = np.linalg.norm(m.factor @ m.factor.T - m.matrix) / np.linalg.norm(m.matrix)
        assert err <= 1e-8

    def test_meta(self):
        m = build_temporal_model(0.6, 8, PhysicalParams(2.0, 3.0))
        assert m.meta["kind"] == "temporal"
        assert (m.meta["h"], m.meta["n"], m.meta["c"], m.meta["sigma_vol"]) == (0.6, 8, 2.0, 3.0)
        assert m.meta["jitter"] == 0.0
        with pytest.raises(TypeError):
            m.meta["h"] = 0.7

    def test_immutable(self):
        m = build_temporal_model(0.6, 4)
        with pytest.raises(ValueError):
            m.matrix[0, 0] = 1.0

    def test_bad_n(self):
        with pytest.raises(ValueError):
            build_temporal_model(0.6, 0)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            build_model([[1.0, 0.1], [0.0, 1.0]])

    def test_rejects_bad_diagonal(self):
        with pytest.raises(NotPositiveDefiniteError):
            build_model([[0.0, 0.0], [0.0, 1.0]])

    def test_jitter_recorded(self, caplog):
        m = build_model(np.ones((3, 3)))
        assert m.meta["jitter"] > 0
        assert m.meta["jitter"] <= 1e-10
        assert "jitter" in caplog.text

    def test_indefinite_fails(self):
        with pytest.raises(NotPositiveDefiniteError):
            build_model([[1.0, 2.0], [2.0, 1.0]])


class TestRect:
    def test_matches_expanded_and_structure(self):
        g = RectGrid(3, 4, 2.5)
        m = build_rect_model(g)
        ref = np.array([
            [rect_increment_cov_expanded(g, a // g.m, b // g.m, a % g.m, b % g.m) for b in range(g.size)]
            for a in range(g.size)
        ])
        assert np.allclose(m.matrix, ref, rtol=1e-10, atol=1e-18)
        # Tridiagonal in space, diagonal in time.
        i, j = np.divmod(np.arange(g.size), g.m)
        far = (np.abs(i[:, None] - i[None, :]) > 1) | (j[:, None] != j[None, :])
        assert np.max(np.abs(m.matrix[far])) < 1e-18

    def test_psd(self):
        m = build_rect_model(RectGrid(4, 5, 2.0), PhysicalParams(0.5, 2.0))
        assert np.allclose(m.matrix, m.matrix.T)
        assert np.linalg.eigvalsh(m.matrix).min() > 0

    def test_inadmissible(self):
        with pytest.raises(GridConstraintError):
            build_rect_model(RectGrid(3, 4, 1.0))

    def test_inadmissible_for_large_c(self):
        with pytest.raises(GridConstraintError):
            build_rect_model(RectGrid(3, 4, 2.5), PhysicalParams(300.0, 1.0))

    def test_difference_operator_route(self):
        g = RectGrid(2, 3, 2.0)
        from fracwave.kernels import _field_cov_white

        a, b = np.divmod(np.arange((g.n + 1) * (g.m + 1)), g.m + 1)
        x, t = a * g.dx, b * g.dt
        levels = _field_cov_white(t[:, None], x[:, None], t[None, :], x[None, :])
        ops = rect_difference_operator(g)
        assert np.allclose(ops @ levels @ ops.T, rect_covariance_matrix(g), rtol=1e-12, atol=1e-20)


class TestSampling:
    def test_deterministic(self):
        m = build_temporal_model(0.65, 16)
        a = sample_increments(m, 5, SeedSpec(42))
        b = sample_increments(m, 5, SeedSpec(42))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, sample_increments(m, 5, SeedSpec(43)))

    def test_block_invariance(self):
        m = build_temporal_model(0.65, 16)
        full = sample_increments(m, 10, SeedSpec(7))
        part = sample_increments(m, 4, SeedSpec(7, 3))
        assert np.array_equal(full[3:7], part)

    def test_int_seed(self):
        m = build_temporal_model(0.65, 4)
        assert np.array_equal(sample_increments(m, 3, 9), sample_increments(m, 3, SeedSpec(9)))

    def test_seed_validation(self):
        with pytest.raises(ValueError):
            SeedSpec(-1)
        with pytest.raises(ValueError):
            SeedSpec(2 ** 64)
        with pytest.raises(ValueError):
            SeedSpec(0, -1)

    def test_standard_normal(self):
        m = build_model([[1.0]])
        x = sample_increments(m, 10 ** 5, SeedSpec(1))[:, 0]
        assert abs(x.mean()) < 4 / np.sqrt(1e5)
        assert abs(x.var() - 1) < 0.05

    def test_white_two_point_covariance(self):
        m = build_temporal_model(0.5, 2)
        reps = 10 ** 5
        x = sample_increments(m, reps, SeedSpec(2))
        emp = np.cov(x.T)
        c = m.matrix
        # Var of a sample covariance entry for Gaussians: (C_ii C_jj + C_ij^2) / reps.
        se = np.sqrt((np.outer(np.diag(c), np.diag(c)) + c ** 2) / reps)
        assert np.all(np.abs(emp - c) < 3 * se)

    def test_single_factorization(self):
        before = sampler.factorization_count()
        m = build_temporal_model(0.6, 8)
        sample_increments(m, 10 ** 4, SeedSpec(3))
        assert sampler.factorization_count() - before == 1

    @pytest.mark.parametrize("h,n", [(0.5, 8), (0.65, 32), (0.85, 64)])
    def test_oracle_vs_monte_carlo(self, h, n):
        m = build_temporal_model(h, n)
        var, k2, se = empirical_var_check(m, 2 * 10 ** 5, SeedSpec(11))
        assert abs(var - k2) < 4 * se

    def test_oracle_vs_monte_carlo_rect(self):
        m = build_rect_model(RectGrid(4, 8, 2.5))
        var, k2, se = empirical_var_check(m, 2 * 10 ** 5, SeedSpec(12))
        assert abs(var - k2) < 4 * se

    def test_standardized_cumulants(self):
        from fracwave.montecarlo import empirical_cumulants, kstat_variance

        m = build_temporal_model(0.85, 32)
        reps = 2 * 10 ** 5
        x = sample_increments(m, reps, SeedSpec(5))
        v = np.sum(x * x, axis=1) - m.trace
        kappa = {r: quadratic_form_cumulant(m, r) for r in range(2, 9)}
        k2, k3, k4 = empirical_cumulants(v, 4)
        for order, est in ((3, k3), (4, k4)):
            se = np.sqrt(kstat_variance(kappa, order, reps))
            assert abs(est - kappa[order]) < 4 * se


class TestOracles:
    def test_wick_examples(self):
        assert wick_second_moment(build_temporal_model(0.5, 1), 1) == pytest.approx(1 / 8, rel=1e-14)
        assert wick_second_moment(build_temporal_model(0.5, 2), 2) == pytest.approx(5 / 256, rel=1e-14)
        assert wick_second_moment(np.zeros((3, 3))) == 0.0

    def test_cumulant_examples(self):
        m = build_temporal_model(0.5, 2)
        assert quadratic_form_cumulant(m, 2, 2) == pytest.approx(5 / 256, rel=1e-14)
        assert quadratic_form_cumulant(m, 3, 2) == pytest.approx(7 / 1024, rel=1e-14)

    def test_cumulant_order(self):
        with pytest.raises(ValueError):
            quadratic_form_cumulant(build_temporal_model(0.5, 2), 1)

    @pytest.mark.parametrize("h", [0.55, 0.7, 0.9])
    def test_second_cumulant_nonnegative_and_consistent(self, h):
        m = build_temporal_model(h, 20)
        assert quadratic_form_cumulant(m, 2, 20) == pytest.approx(wick_second_moment(m, 20), rel=1e-14)
        assert quadratic_form_cumulant(m, 2) >= 0

    @pytest.mark.parametrize("power", [1, 2, 3, 4, 5, 6])
    def test_trace_power_vs_eigen(self, power):
        m = build_temporal_model(0.8, 40)
        lam = np.linalg.eigvalsh(m.matrix)
        assert trace_power(m, power) == pytest.approx(np.sum(lam ** power), rel=1e-9)

    def test_trace_power_rational(self):
        from fractions import Fraction

        c = [[Fraction(1, 16), Fraction(1, 32)], [Fraction(1, 32), Fraction(3, 16)]]

        def mul(a, b):
            return [[sum(a[i][k] * b[k][j] for k in range(2)) for j in range(2)] for i in range(2)]

        p = c
        for m in range(2, 7):
            p = mul(p, c)
            assert trace_power(np.array(c, dtype=float), m) == pytest.approx(float(p[0][0] + p[1][1]), rel=1e-12)

    def test_scaling_equivariance(self):
        a = build_temporal_model(0.65, 16, PhysicalParams(1.0, 1.0))
        b = build_temporal_model(0.65, 16, PhysicalParams(2.0, 1.0))
        assert np.array_equal(b.matrix, a.matrix * 0.5)
        for m in (2, 3, 4):
            assert quadratic_form_cumulant(b, m) == pytest.approx(quadratic_form_cumulant(a, m) / 2 ** m, rel=1e-14)


class TestIO:
    def test_round_trip(self, tmp_path):
        m = build_temporal_model(0.7, 10, PhysicalParams(2.0, 0.5))
        path = tmp_path / "model.bin"
        dump_model(m, path)
        back = load_model(path)
        assert isinstance(back, CovarianceModel)
        assert np.array_equal(back.matrix, m.matrix)
        assert np.array_equal(back.factor, m.factor)
        assert dict(back.meta) == dict(m.meta)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.bin"
        path.write_bytes(b"nope" + bytes(40))
        with pytest.raises(ValueError):
            load_model(path)
