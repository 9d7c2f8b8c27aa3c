"""Statistics of bispectral surrogates.

Covariance, correlation and cross-correlation follow in closed form from
orthogonality of the PCE basis: with eta_i^k = sqrt(lambda_i) c_{i,k} and
p(s) the eigenfunction values at ``s``,

    c_f(s1, s2) = p(s1)^T B p(s2),   B_ij = sum_{k>=1} eta_i^k eta_j^k |Psi_k|^2.

Sensitivity indices, error metrics and densities are computed by sampling.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-30


class CorrelationUndefined(ValueError):
    """Correlation requested where the surrogate variance vanishes."""


class BasisMismatch(ValueError):
    """Two surrogates do not share their basis or reduced index set."""


class ZeroVariance(ValueError):
    """The quantity being analysed does not vary."""


# closed-form second moments


def _eigvals_at(sur, s):
    """Eigenfunction values at abscissae ``s``; shape (len(s), N_qoi)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    phi = sur.eigenfunctions
    return np.column_stack([np.interp(s, sur.abscissae, phi[:, i]) for i in range(phi.shape[1])])


def coupling_matrix(sur_f, sur_g=None):
    """B (or B~ for two surrogates) summed over the nonconstant basis terms."""
    sur_g = sur_f if sur_g is None else sur_g
    norms = sur_f.basis.norms_sq[1:]
    return (sur_f.eta[:, 1:] * norms) @ sur_g.eta[:, 1:].T


def covariance_function(sur, s1, s2):
    """c_f(s1, s2); scalars give a scalar, vectors an outer table."""
    b = coupling_matrix(sur)
    out = _eigvals_at(sur, s1) @ b @ _eigvals_at(sur, s2).T
    return out[0, 0] if np.ndim(s1) == 0 and np.ndim(s2) == 0 else out


def covariance_matrix(sur):
    """c_f on the surrogate's own abscissa grid, shape (m, m)."""
    p = sur.eigenfunctions
    return p @ coupling_matrix(sur) @ p.T


def variance(sur):
    p = sur.eigenfunctions
    return np.einsum("ki,ij,kj->k", p, coupling_matrix(sur), p)


def correlation_function(sur, s1, s2):
    """rho_f(s1, s2) = c_f(s1, s2) / sqrt(c_f(s1, s1) c_f(s2, s2))."""
    b = coupling_matrix(sur)
    p1, p2 = _eigvals_at(sur, s1), _eigvals_at(sur, s2)
    v1 = np.einsum("ki,ij,kj->k", p1, b, p1)
    v2 = np.einsum("ki,ij,kj->k", p2, b, p2)
    if np.any(v1 <= VAR_FLOOR) or np.any(v2 <= VAR_FLOOR):
        raise CorrelationUndefined("surrogate variance vanishes at a requested abscissa")
    out = (p1 @ b @ p2.T) / np.sqrt(np.outer(v1, v2))
    return out[0, 0] if np.ndim(s1) == 0 and np.ndim(s2) == 0 else out


def correlation_matrix(sur, *, mask_zero=True):
    """rho_f on the grid; rows/cols with zero variance are NaN when masked."""
    cov = covariance_matrix(sur)
    v = np.diag(cov).copy()
    ok = v > VAR_FLOOR
    if not mask_zero and not np.all(ok):
        raise CorrelationUndefined("surrogate variance vanishes on part of the grid")
    sd = np.sqrt(np.where(ok, v, np.nan))
    rho = cov / np.outer(sd, sd)
    np.fill_diagonal(rho, np.where(ok, 1.0, np.nan))
    return rho


def _check_compatible(f, g):
    if not f.basis.same_as(g.basis) or not np.array_equal(f.reduced_set, g.reduced_set):
        raise BasisMismatch("surrogates must share the PCE basis and reduced index set")


def cross_covariance(sur_f, sur_g, s1, s2):
    _check_compatible(sur_f, sur_g)
    out = _eigvals_at(sur_f, s1) @ coupling_matrix(sur_f, sur_g) @ _eigvals_at(sur_g, s2).T
    return out[0, 0] if np.ndim(s1) == 0 and np.ndim(s2) == 0 else out


def cross_correlation(sur_f, sur_g, s1, s2):
    """rho_fg(s1, s2) normalized by the auto-variances of f at s1 and g at s2."""
    _check_compatible(sur_f, sur_g)
    p, q = _eigvals_at(sur_f, s1), _eigvals_at(sur_g, s2)
    vf = np.einsum("ki,ij,kj->k", p, coupling_matrix(sur_f), p)
    vg = np.einsum("ki,ij,kj->k", q, coupling_matrix(sur_g), q)
    if np.any(vf <= VAR_FLOOR) or np.any(vg <= VAR_FLOOR):
        raise CorrelationUndefined("surrogate variance vanishes at a requested abscissa")
    out = (p @ coupling_matrix(sur_f, sur_g) @ q.T) / np.sqrt(np.outer(vf, vg))
    return out[0, 0] if np.ndim(s1) == 0 and np.ndim(s2) == 0 else out


def cross_correlation_matrix(sur_f, sur_g):
    _check_compatible(sur_f, sur_g)
    c = sur_f.eigenfunctions @ coupling_matrix(sur_f, sur_g) @ sur_g.eigenfunctions.T
    vf, vg = variance(sur_f), variance(sur_g)
    with np.errstate(invalid="ignore", divide="ignore"):
        sf = np.sqrt(np.where(vf > VAR_FLOOR, vf, np.nan))
        sg = np.sqrt(np.where(vg > VAR_FLOOR, vg, np.nan))
    return c / np.outer(sf, sg)


# sensitivity


@dataclass(frozen=True, eq=False)
class SobolReport:
    """Total Sobol' indices with delta-method standard errors."""

    indices: np.ndarray
    std_errors: np.ndarray
    n_samples: int
    estimator: str = "jansen"
    functional: bool = False

    def to_text(self):
        lines = [f"# estimator = {self.estimator}", f"# n_samples = {self.n_samples}",
                 f"# functional = {int(self.functional)}", "# j total_index std_error"]
        lines += [f"{j} {t:.10e} {e:.10e}" for j, (t, e) in enumerate(zip(self.indices, self.std_errors))]
        return "\n".join(lines) + "\n"


def total_sobol(model, n_params, n_samples, *, weights=None, seed=0):
    """Jansen pick-freeze total indices for every parameter.

    Parameters
    ----------
    model : callable
        Maps an (N, n_params) array to outputs of shape (N,) for a scalar
        quantity or (m, N) for a function-valued one.
    weights : array_like, optional
        Quadrature weights over the m abscissae; functional indices are
        the ratio of weighted integrals of the conditional and total
        variances.
    """
    if n_samples < 1000:
        raise ValueError("need at least 1000 base samples")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n_samples, n_params))
    b = rng.standard_normal((n_samples, n_params))

    def run(x):
        y = np.asarray(model(x), dtype=float)
        return y[None, :] if y.ndim == 1 else y

    fa, fb = run(a), run(b)
    functional = fa.shape[0] > 1
    w = np.ones(fa.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (fa.shape[0],):
        raise ValueError("weights must match the output length")
    mu = 0.5 * (fa.mean(axis=1) + fb.mean(axis=1))
    v_i = w @ (0.5 * ((fa - mu[:, None]) ** 2 + (fb - mu[:, None]) ** 2))
    v = v_i.mean()
    if not v > VAR_FLOOR:
        raise ZeroVariance("model output does not vary")
    t = np.empty(n_params)
    se = np.empty(n_params)
    for j in range(n_params):
        abj = a.copy()
        abj[:, j] = b[:, j]
        u_i = 0.5 * (w @ (fa - run(abj)) ** 2)
        t[j] = u_i.mean() / v
        se[j] = np.std(u_i - t[j] * v_i, ddof=1) / (v * np.sqrt(n_samples))
    return SobolReport(t, se, int(n_samples), "jansen", functional)


def spearman(x, y):
    return float(stats.spearmanr(x, y).statistic)


# accuracy


def relative_l2_error(predicted, exact, weights):
    """sqrt( sum_j int (f - g)^2 ds / sum_j int f^2 ds ) for (m, N) arrays."""
    p = np.asarray(predicted, dtype=float)
    e = np.asarray(exact, dtype=float)
    if p.shape != e.shape or p.size == 0:
        raise ValueError("predicted and exact must be nonempty arrays of equal shape")
    w = np.asarray(weights, dtype=float)
    num = w @ ((p - e) ** 2)
    den = w @ (e**2)
    if not den.sum() > 0:
        raise ZeroVariance("reference trajectories are identically zero")
    return float(np.sqrt(num.sum() / den.sum()))


def relative_error(surrogate, xi, exact, weights=None):
    """Ensemble-averaged relative L2 error of a surrogate on a validation set.

    ``xi`` holds full-dimension parameters of shape (N, n_full); ``exact``
    holds the matching trajectories of shape (m, N).
    """
    w = surrogate.weights if weights is None else weights
    return relative_l2_error(surrogate.evaluate_full(xi), exact, w)


@dataclass(frozen=True)
class ErrorBoundTerms:
    kle_tail: float
    coeff_error: float
    pce_tail: float

    @property
    def total(self):
        return self.kle_tail + self.coeff_error + self.pce_tail


def error_bound_terms(eigenvalues, n_qoi, true_coefficients, estimated_coefficients, norms_sq):
    """Three-term bound on the mean-square surrogate error.

    Parameters
    ----------
    eigenvalues : array_like
        Full output-KLE spectrum.
    n_qoi : int
        Number of retained modes.
    true_coefficients : array_like, shape (n_qoi, P_full)
        Exact PCE coefficients of the retained modes in a nested basis.
    estimated_coefficients : array_like, shape (n_qoi, P)
        Surrogate coefficients on the first P basis terms, P <= P_full.
    norms_sq : array_like, shape (P_full,)
    """
    lam = np.asarray(eigenvalues, dtype=float)
    c = np.atleast_2d(np.asarray(true_coefficients, dtype=float))
    chat = np.atleast_2d(np.asarray(estimated_coefficients, dtype=float))
    nrm = np.asarray(norms_sq, dtype=float)
    p = chat.shape[1]
    if c.shape[0] != n_qoi or chat.shape[0] != n_qoi or p > c.shape[1] or nrm.size != c.shape[1]:
        raise ValueError("coefficient arrays inconsistent with n_qoi and basis size")
    lam_r = lam[:n_qoi]
    tail = float(np.sum(lam[n_qoi:]))
    coeff = float(lam_r @ (((c[:, :p] - chat) ** 2) @ nrm[:p]))
    pce_tail = float(lam_r @ ((c[:, p:] ** 2) @ nrm[p:]))
    return ErrorBoundTerms(tail, coeff, pce_tail)


# densities and observables


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def to_text(self):
        lines = [f"# bandwidth = {self.bandwidth:.10e}", "# x density"]
        lines += [f"{x:.10e} {d:.10e}" for x, d in zip(self.grid, self.density)]
        return "\n".join(lines) + "\n"


def estimate_pdf(samples, *, n_points=512, pad=0.1):
    """Gaussian KDE with Silverman's bandwidth on a padded uniform grid."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise ValueError("need at least 100 samples")
    lo, hi = x.min(), x.max()
    if not hi > lo:
        raise ZeroVariance("samples are constant")
    kde = stats.gaussian_kde(x, bw_method="silverman")
    span = hi - lo
    grid = np.linspace(lo - pad * span, hi + pad * span, n_points)
    return DensityEstimate(grid, kde(grid), float(np.sqrt(kde.covariance[0, 0])))


@dataclass(frozen=True)
class Observables:
    s_max: float
    q_max: float
    t_rise: float


def first_crossing(times, values, level):
    """First abscissa where ``values`` exceeds ``level`` (linear interpolation)."""
    v = np.asarray(values, dtype=float)
    t = np.asarray(times, dtype=float)
    above = np.flatnonzero(v > level)
    if above.size == 0:
        return np.nan
    k = above[0]
    if k == 0:
        return float(t[0])
    return float(t[k - 1] + (level - v[k - 1]) * (t[k] - t[k - 1]) / (v[k] - v[k - 1]))


def observables(times, saturation, flux, *, fraction=0.2):
    """Peak saturation, peak flux and first time S rises above fraction*S_max.

    ``saturation`` and ``flux`` are (m,) or (m, N); results are per column.
    """
    s = np.asarray(saturation, dtype=float)
    q = np.asarray(flux, dtype=float)
    if s.ndim == 1:
        s, q = s[:, None], q[:, None]
    s_max = s.max(axis=0)
    q_max = q.max(axis=0)
    t_rise = np.array([first_crossing(times, s[:, j], fraction * s_max[j]) if s_max[j] > 0 else np.nan
                       for j in range(s.shape[1])])
    if np.ndim(saturation) == 1:
        return Observables(float(s_max[0]), float(q_max[0]), float(t_rise[0]))
    return s_max, q_max, t_rise
