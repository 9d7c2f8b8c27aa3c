import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bispectral import output_kle as ok
from bispectral.random_input import trapezoid_weights


def _ensemble(m=60, n_s=80, n_modes=4, seed=0):
    rng = np.random.default_rng(seed)
    s = np.linspace(0.0, 1.0, m)
    basis = np.stack([np.sin((k + 1) * np.pi * s) / (k + 1) for k in range(n_modes)], axis=1)
    y = 1.0 + s[:, None] + basis @ rng.standard_normal((n_modes, n_s))
    return s, trapezoid_weights(s), y


def _dense_spectrum(y, w):
    fc = y - y.mean(axis=1, keepdims=True)
    c = fc @ fc.T / (y.shape[1] - 1)
    sw = np.sqrt(w)
    return np.sort(np.linalg.eigvalsh(sw[:, None] * c * sw[None, :]))[::-1]


class TestSpectrum:
    def test_rank_one_ensemble(self):
        s = np.linspace(0, 1, 30)
        w = trapezoid_weights(s)
        y = np.outer(np.cos(s), np.random.default_rng(1).standard_normal(20))
        kle = ok.compute_output_kle(y, w)
        assert kle.n_qoi == 1
        assert np.all(kle.eigenvalues[1:] < 1e-12 * kle.eigenvalues[0])

    @settings(max_examples=15, deadline=None)
    @given(m=st.integers(5, 80), n_s=st.integers(3, 60), seed=st.integers(0, 1000))
    def test_dense_oracle(self, m, n_s, seed):
        rng = np.random.default_rng(seed)
        s = np.sort(rng.uniform(0, 1, m)) + np.arange(m) * 1e-3
        w = trapezoid_weights(s)
        y = rng.standard_normal((m, n_s)) * (1 + s[:, None])
        kle = ok.compute_output_kle(y, w)
        ref = _dense_spectrum(y, w)
        big = ref > 1e-8 * ref[0]
        assert np.max(np.abs(kle.eigenvalues[big] - ref[big]) / ref[big]) < 1e-10

    def test_parseval(self):
        _, w, y = _ensemble()
        kle = ok.compute_output_kle(y, w)
        fc = y - y.mean(axis=1, keepdims=True)
        total = np.sum(w[:, None] * fc**2) / (y.shape[1] - 1)
        assert kle.eigenvalues.sum() == pytest.approx(total, rel=1e-12)

    def test_mean_and_descending(self):
        _, w, y = _ensemble()
        kle = ok.compute_output_kle(y, w)
        assert np.allclose(kle.mean, y.mean(axis=1))
        assert np.all(np.diff(kle.eigenvalues) <= 0) and np.all(kle.eigenvalues >= 0)


class TestModes:
    def test_weighted_orthonormality(self):
        _, w, y = _ensemble()
        kle = ok.compute_output_kle(y, w, n_qoi=4)
        g = kle.eigenfunctions.T @ (w[:, None] * kle.eigenfunctions)
        assert np.allclose(g, np.eye(4), atol=1e-12)

    def test_mode_sample_statistics(self):
        _, w, y = _ensemble()
        kle = ok.compute_output_kle(y, w, n_qoi=4)
        assert np.allclose(kle.modes.mean(axis=1), 0.0, atol=1e-12)
        assert np.allclose(kle.modes @ kle.modes.T / (y.shape[1] - 1), np.eye(4), atol=1e-10)

    def test_full_reconstruction_exact(self):
        _, w, y = _ensemble(n_modes=4)
        kle = ok.compute_output_kle(y, w, n_qoi=4)
        assert np.allclose(ok.reconstruct(kle), y, atol=1e-10)
        assert np.allclose(ok.reconstruct(kle, 3), y[:, 3], atol=1e-10)
        assert np.allclose(kle.project(y), kle.modes, atol=1e-9)

    def test_truncation_error_equals_tail(self):
        _, w, y = _ensemble(n_modes=6)
        kle = ok.compute_output_kle(y, w, n_qoi=2)
        resid = y - ok.reconstruct(kle)
        err = np.sum(w[:, None] * resid**2) / (y.shape[1] - 1)
        assert err == pytest.approx(kle.tail, rel=1e-9)

    def test_sign_convention(self):
        _, w, y = _ensemble()
        kle = ok.compute_output_kle(y, w, n_qoi=3)
        e = kle.eigenfunctions
        assert np.all(e[np.argmax(np.abs(e), axis=0), np.arange(3)] > 0)

    def test_deterministic(self):
        _, w, y = _ensemble()
        a = ok.compute_output_kle(y, w)
        b = ok.compute_output_kle(y.copy(), w.copy())
        assert np.array_equal(a.eigenfunctions, b.eigenfunctions)
        assert np.array_equal(a.modes, b.modes)


class TestTruncation:
    def test_tol_rule(self):
        _, w, y = _ensemble(n_modes=6)
        kle = ok.compute_output_kle(y, w, 0.9)
        r = kle.rank_fractions
        assert r[kle.n_qoi - 1] > 0.9 and (kle.n_qoi == 1 or r[kle.n_qoi - 2] <= 0.9)

    def test_rank_fraction(self):
        lam = np.array([3.0, 1.0, 0.0])
        assert ok.rank_fraction(lam, 1) == 0.75
        assert ok.rank_fraction(lam, 3) == 1.0
        with pytest.raises(ValueError):
            ok.rank_fraction(lam, 0)

    def test_forced_n_qoi_clipped_to_rank(self):
        _, w, y = _ensemble(n_modes=2)
        assert ok.compute_output_kle(y, w, n_qoi=10).n_qoi == 2

    def test_degenerate(self):
        w = np.ones(5)
        with pytest.raises(ok.DegenerateEnsemble):
            ok.compute_output_kle(np.ones((5, 10)), w)
        with pytest.raises(ok.DegenerateEnsemble):
            ok.rank_fraction(np.zeros(3), 1)

    @pytest.mark.parametrize("kw", [{"tol": 1.0}, {"tol": 0.0}])
    def test_bad_tol(self, kw):
        _, w, y = _ensemble()
        with pytest.raises(ValueError):
            ok.compute_output_kle(y, w, **kw)

    def test_bad_weights(self):
        _, w, y = _ensemble()
        with pytest.raises(ValueError):
            ok.compute_output_kle(y, -w)

    def test_spectrum_text(self):
        _, w, y = _ensemble()
        txt = ok.compute_output_kle(y, w).spectrum_text()
        data = np.loadtxt(txt.splitlines(), comments="#")
        assert data.shape == (60, 3) and data[-1, 2] == pytest.approx(1.0)
