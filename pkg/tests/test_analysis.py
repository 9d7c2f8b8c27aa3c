import numpy as np
import pytest
from scipy import stats
from synthetic import planted_bound_trial

from bispectral import analysis as an
from bispectral.pce.basis import build_basis
from bispectral.pce.surrogate import BispectralSurrogate
from bispectral.random_input import trapezoid_weights


def _surrogate(seed=0, n_qoi=3, n_p=3, n_ord=2, m=40, coef=None):
    rng = np.random.default_rng(seed)
    s = np.linspace(0, 1, m)
    w = trapezoid_weights(s)
    q, _ = np.linalg.qr(np.sqrt(w)[:, None] * rng.standard_normal((m, n_qoi)))
    phi = q / np.sqrt(w)[:, None]
    b = build_basis(n_p, n_ord)
    if coef is None:
        coef = rng.standard_normal((n_qoi, b.size)) / np.sqrt(b.norms_sq)
    lam = np.sort(rng.uniform(0.1, 1, n_qoi))[::-1]
    return BispectralSurrogate(s, np.cos(2 * s), w, lam, phi, coef, b, np.arange(n_p), n_p)


def _probe_values(sur, xi, idx):
    """Surrogate values at grid indices ``idx`` for draws ``xi``; shape (N, len(idx))."""
    scaled = sur.eigenfunctions[idx] * np.sqrt(sur.eigenvalues)
    return sur.mean[idx] + sur.modes(xi) @ scaled.T


PAIRS = [(0, 0), (3, 17), (10, 30), (25, 25), (39, 5)]


class TestSecondMoments:
    def test_deterministic_surrogate(self):
        b = build_basis(3, 2)
        coef = np.zeros((3, b.size))
        coef[:, 0] = 1.0
        sur = _surrogate(coef=coef)
        assert np.all(an.covariance_matrix(sur) == 0)
        with pytest.raises(an.CorrelationUndefined):
            an.correlation_function(sur, 0.5, 0.5)
        with pytest.raises(an.CorrelationUndefined):
            an.correlation_matrix(sur, mask_zero=False)
        assert np.all(np.isnan(an.correlation_matrix(sur)))

    def test_covariance_against_monte_carlo(self):
        sur = _surrogate()
        xi = np.random.default_rng(1).standard_normal((200_000, 3))
        vals = _probe_values(sur, xi, np.arange(40))
        for i, j in PAIRS:
            a = vals[:, i] - vals[:, i].mean()
            b = vals[:, j] - vals[:, j].mean()
            prod = a * b
            se = prod.std(ddof=1) / np.sqrt(prod.size)
            assert abs(prod.mean() - an.covariance_function(sur, sur.abscissae[i], sur.abscissae[j])) < 3 * se

    def test_matrix_and_function_agree(self):
        sur = _surrogate()
        c = an.covariance_matrix(sur)
        assert np.allclose(c, c.T)
        assert np.allclose(an.covariance_function(sur, sur.abscissae, sur.abscissae), c)
        assert np.allclose(an.variance(sur), np.diag(c))
        assert np.all(np.linalg.eigvalsh(c) > -1e-12 * np.abs(c).max())

    def test_unit_diagonal(self):
        sur = _surrogate()
        s = sur.abscissae
        for x in (s[0], 0.37, s[-1]):
            assert abs(an.correlation_function(sur, x, x) - 1.0) < 1e-12
        rho = an.correlation_matrix(sur)
        assert np.all(np.abs(np.diag(rho) - 1.0) < 1e-12)
        assert np.all(np.abs(rho) <= 1 + 1e-10)

    def test_single_mode_signs(self):
        sur = _surrogate(n_qoi=1)
        phi = sur.eigenfunctions[:, 0]
        rho = an.correlation_matrix(sur)
        ok = np.abs(phi) > 1e-8
        assert np.allclose(rho[np.ix_(ok, ok)], np.sign(np.outer(phi[ok], phi[ok])), atol=1e-12)


class TestCrossCorrelation:
    def test_self_cross_is_auto(self):
        sur = _surrogate()
        assert np.allclose(an.cross_correlation_matrix(sur, sur), an.correlation_matrix(sur), atol=1e-12)
        assert an.cross_correlation(sur, sur, 0.2, 0.7) == pytest.approx(an.correlation_function(sur, 0.2, 0.7))

    def test_disjoint_supports_uncorrelated(self):
        b = build_basis(3, 2)
        cf = np.zeros((2, b.size))
        cg = np.zeros((2, b.size))
        cf[:, [0, 1, 4]] = [[1.0, 0.5, 0.2], [0.0, -0.3, 0.4]]
        cg[:, [0, 2, 9]] = [[2.0, 0.1, 0.7], [1.0, 0.6, -0.2]]
        f = _surrogate(seed=1, n_qoi=2, coef=cf)
        g = _surrogate(seed=2, n_qoi=2, coef=cg)
        assert np.all(an.cross_correlation_matrix(f, g) == 0)

    def test_against_joint_monte_carlo(self):
        f = _surrogate(seed=3)
        g = _surrogate(seed=4)
        xi = np.random.default_rng(5).standard_normal((200_000, 3))
        vf = _probe_values(f, xi, np.arange(40))
        vg = _probe_values(g, xi, np.arange(40))
        for i, j in PAIRS:
            a = vf[:, i] - vf[:, i].mean()
            b = vg[:, j] - vg[:, j].mean()
            prod = a * b
            se = prod.std(ddof=1) / np.sqrt(prod.size)
            assert abs(prod.mean() - an.cross_covariance(f, g, f.abscissae[i], g.abscissae[j])) < 3 * se
            r = np.corrcoef(vf[:, i], vg[:, j])[0, 1]
            rho = an.cross_correlation(f, g, f.abscissae[i], g.abscissae[j])
            assert abs(r - rho) < 3 * (1 - rho**2) / np.sqrt(xi.shape[0]) + 1e-12

    def test_basis_mismatch(self):
        f = _surrogate()
        g = _surrogate(n_ord=3)
        with pytest.raises(an.BasisMismatch):
            an.cross_correlation_matrix(f, g)
        with pytest.raises(an.BasisMismatch):
            an.cross_covariance(f, g, 0.1, 0.2)


class TestSobol:
    @staticmethod
    def additive(x):
        return x[:, 0] + 2 * x[:, 1] + x[:, 2] ** 2

    def test_additive_model(self):
        rep = an.total_sobol(self.additive, 4, 50_000, seed=11)
        want = np.array([1, 4, 2, 0]) / 7
        assert np.all(np.abs(rep.indices - want) <= 3 * rep.std_errors + 1e-12)
        assert 0.95 <= rep.indices.sum() <= 1.05
        assert rep.indices[3] == 0.0 and not rep.functional

    def test_interaction_model(self):
        # f = x0 * x1: both totals equal one
        rep = an.total_sobol(lambda x: x[:, 0] * x[:, 1], 2, 50_000, seed=2)
        assert np.all(np.abs(rep.indices - 1.0) <= 3 * rep.std_errors)

    def test_functional_weighting(self):
        s = np.linspace(0, 1, 21)
        w = trapezoid_weights(s)
        rep = an.total_sobol(lambda x: np.outer(s, x[:, 0]) + np.outer(1 - s, 2 * x[:, 1]), 2, 20_000,
                             weights=w, seed=3)
        # integrated variances: int s^2 = 1/3, int 4 (1-s)^2 = 4/3 (trapezoid close)
        v0, v1 = w @ s**2, 4 * w @ (1 - s) ** 2
        assert rep.functional
        assert np.allclose(rep.indices, [v0 / (v0 + v1), v1 / (v0 + v1)], atol=4 * rep.std_errors.max())

    def test_deterministic_seed(self):
        a = an.total_sobol(self.additive, 3, 2000, seed=5)
        b = an.total_sobol(self.additive, 3, 2000, seed=5)
        assert np.array_equal(a.indices, b.indices)

    def test_errors(self):
        with pytest.raises(an.ZeroVariance):
            an.total_sobol(lambda x: np.zeros(x.shape[0]), 2, 1000)
        with pytest.raises(ValueError):
            an.total_sobol(self.additive, 3, 10)

    def test_report_text(self):
        txt = an.total_sobol(self.additive, 3, 1000).to_text()
        assert np.loadtxt(txt.splitlines(), comments="#").shape == (3, 3)

    def test_spearman(self):
        assert an.spearman([1, 2, 3, 4], [10, 20, 25, 100]) == pytest.approx(1.0)


class TestRelativeError:
    def test_identities(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal((30, 8))
        w = trapezoid_weights(np.linspace(0, 1, 30))
        assert an.relative_l2_error(y, y, w) == 0.0
        assert an.relative_l2_error(np.zeros_like(y), y, w) == pytest.approx(1.0)
        p = y + 0.1 * rng.standard_normal(y.shape)
        assert an.relative_l2_error(7.5 * p, 7.5 * y, w) == pytest.approx(an.relative_l2_error(p, y, w))

    def test_errors(self):
        with pytest.raises(an.ZeroVariance):
            an.relative_l2_error(np.ones((3, 2)), np.zeros((3, 2)), np.ones(3))
        with pytest.raises(ValueError):
            an.relative_l2_error(np.ones((3, 2)), np.ones((3, 3)), np.ones(3))

    def test_surrogate_on_its_own_output(self):
        sur = _surrogate()
        xi = np.random.default_rng(2).standard_normal((10, 3))
        assert an.relative_error(sur, xi, sur.evaluate(xi)) == 0.0


class TestErrorBound:
    def test_exact_everything_is_zero(self):
        b = build_basis(2, 3)
        c = np.random.default_rng(0).standard_normal((2, b.size))
        t = an.error_bound_terms(np.array([1.0, 0.5]), 2, c, c, b.norms_sq)
        assert (t.kle_tail, t.coeff_error, t.pce_tail, t.total) == (0.0, 0.0, 0.0, 0.0)

    def test_only_kle_tail(self):
        measured, terms, lam, n_qoi = planted_bound_trial(0, only_tail=True)
        assert terms.coeff_error == 0 and terms.pce_tail == 0
        assert terms.kle_tail == pytest.approx(lam[n_qoi:].sum())
        assert measured == pytest.approx(terms.total, rel=1e-2)

    @pytest.mark.parametrize("seed", range(20))
    def test_bound_holds(self, seed):
        measured, terms, _, _ = planted_bound_trial(seed)
        assert min(terms.kle_tail, terms.coeff_error, terms.pce_tail) >= 0
        assert measured <= 1.05 * terms.total

    def test_perturbation_identity(self):
        b = build_basis(3, 2)
        rng = np.random.default_rng(1)
        c = rng.standard_normal((2, b.size))
        lam = np.array([0.9, 0.4, 0.1])
        base = an.error_bound_terms(lam, 2, c, c[:, :4] + 0.01, b.norms_sq)
        chat = c[:, :4] + 0.01
        chat[1, 2] += 0.3
        bumped = an.error_bound_terms(lam, 2, c, chat, b.norms_sq)
        # (0.01 + 0.3)^2 - 0.01^2 on one term
        grow = lam[1] * ((0.31**2) - 0.01**2) * b.norms_sq[2]
        assert bumped.coeff_error - base.coeff_error == pytest.approx(grow, rel=1e-12)
        assert bumped.pce_tail == base.pce_tail

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            an.error_bound_terms(np.ones(3), 2, np.ones((2, 4)), np.ones((2, 5)), np.ones(4))


class TestDensity:
    def test_normal_samples(self):
        x = np.random.default_rng(0).standard_normal(100_000)
        est = an.estimate_pdf(x)
        assert est.grid.size == 512
        assert np.max(np.abs(est.density - stats.norm.pdf(est.grid))) < 0.05
        assert est.grid[0] < x.min() and est.grid[-1] > x.max()

    def test_constant_samples(self):
        with pytest.raises(an.ZeroVariance):
            an.estimate_pdf(np.ones(500))
        with pytest.raises(ValueError):
            an.estimate_pdf(np.arange(10.0))

    def test_text(self):
        txt = an.estimate_pdf(np.random.default_rng(1).standard_normal(200)).to_text()
        assert np.loadtxt(txt.splitlines(), comments="#").shape == (512, 2)


class TestObservables:
    def test_single_trajectory(self):
        t = np.linspace(0, 10, 11)
        s = np.clip(t - 3, 0, None)
        q = np.sin(t)
        ob = an.observables(t, s, q)
        assert ob.s_max == 7.0 and ob.q_max == pytest.approx(np.sin(t).max())
        # 20 % of 7 is reached at t = 4.4
        assert ob.t_rise == pytest.approx(4.4)

    def test_columns_and_zero(self):
        t = np.linspace(0, 1, 5)
        s = np.stack([np.zeros(5), t], axis=1)
        s_max, q_max, t_rise = an.observables(t, s, s)
        assert np.isnan(t_rise[0]) and t_rise[1] == pytest.approx(0.2)
        assert np.array_equal(s_max, [0.0, 1.0])

    def test_first_crossing(self):
        assert an.first_crossing([0, 1, 2], [0, 1, 2], 1.5) == pytest.approx(1.5)
        assert an.first_crossing([0, 1], [5, 6], 1.0) == 0.0
        assert np.isnan(an.first_crossing([0, 1], [0, 0], 1.0))
