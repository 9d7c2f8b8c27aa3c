"""Gradient-free parameter screening for function-valued outputs.

A global linear model y(s, xi) ~ b_0(s) + b(s)^T xi is fitted at every
output abscissa with one shared QR factorization. The squared slopes,
integrated over s, approximate the functional derivative-based sensitivity
measures; normalized, they become screening indices used to pick the
reduced parameter set.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10
DEFAULT_TOL = {"saturation": 0.002, "flux": 0.02}


class RankDeficient(np.linalg.LinAlgError):
    """The design matrix [1 | xi] is numerically rank deficient."""


class AllZeroSensitivity(ValueError):
    """Every approximate DGSM is zero, so the indices are undefined."""


class EmptyReduction(ValueError):
    """No screening index exceeds the tolerance."""


@dataclass(frozen=True, eq=False)
class GlobalLinearModel:
    """Per-abscissa linear fit.

    Attributes
    ----------
    intercepts : ndarray, shape (m,)
    slopes : ndarray, shape (m, N_p)
    r_squared : ndarray, shape (m,)
        Coefficient of determination per abscissa (NaN where the output
        has zero spread).
    underdetermined : bool
        True when the minimum-norm fallback was used.
    """

    intercepts: np.ndarray
    slopes: np.ndarray
    r_squared: np.ndarray
    underdetermined: bool = False

    def __post_init__(self):
        if self.slopes.ndim != 2 or self.slopes.shape[0] != self.intercepts.size:
            raise ValueError("slopes must have shape (m, N_p)")
        if not (np.all(np.isfinite(self.slopes)) and np.all(np.isfinite(self.intercepts))):
            raise ValueError("non-finite coefficients")

    @property
    def n_params(self):
        return self.slopes.shape[1]

    def predict(self, xi):
        """Model outputs, shape (m, N) for ``xi`` of shape (N, N_p)."""
        xi = np.atleast_2d(xi)
        return self.intercepts[:, None] + self.slopes @ xi.T

    def activity(self):
        """Eigenpair of the rank-one matrix b b^T per abscissa: (|b|^2, b/|b|)."""
        lam = np.sum(self.slopes**2, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            u = self.slopes / np.sqrt(lam)[:, None]
        return lam, np.nan_to_num(u)


def fit_global_linear_model(samples, evaluations, *, allow_underdetermined=True):
    """Least-squares linear fit of every output abscissa.

    Parameters
    ----------
    samples : array_like, shape (N_s, N_p)
        Parameter samples.
    evaluations : array_like, shape (m, N_s)
        Outputs; column ``j`` is the trajectory for sample ``j``.
    allow_underdetermined : bool
        When N_s <= N_p + 1 return the minimum-norm solution instead of
        raising.

    Raises
    ------
    RankDeficient
        If the design matrix fails the R-diagonal rank test.
    """
    xi = np.asarray(samples, dtype=float)
    y = np.asarray(evaluations, dtype=float)
    if xi.ndim != 2:
        raise ValueError("samples must be (N_s, N_p)")
    n_s, n_p = xi.shape
    if y.ndim != 2 or y.shape[1] != n_s:
        raise ValueError("evaluations must be (m, N_s)")
    a = np.hstack([np.ones((n_s, 1)), xi])

    if n_s <= n_p + 1:
        if not allow_underdetermined:
            raise RankDeficient(f"N_s={n_s} does not exceed N_p+1={n_p + 1}")
        logger.warning("underdetermined linear fit (N_s=%d, N_p=%d), using minimum norm", n_s, n_p)
        coef, *_ = linalg.lstsq(a, y.T, lapack_driver="gelsy")
        underdetermined = True
    else:
        q, r = linalg.qr(a, mode="economic")
        diag = np.abs(np.diag(r))
        if diag.min() < RANK_TOL * diag.max():
            raise RankDeficient("design matrix [1 | xi] is rank deficient")
        coef = linalg.solve_triangular(r, q.T @ y.T)
        underdetermined = False

    fitted = a @ coef
    ss_res = np.sum((y.T - fitted) ** 2, axis=0)
    ss_tot = np.sum((y.T - y.mean(axis=1)) ** 2, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = np.where(ss_tot > 0, 1.0 - ss_res / ss_tot, np.nan)
    return GlobalLinearModel(coef[0].copy(), coef[1:].T.copy(), r2, underdetermined)


def approx_functional_dgsm(model, weights):
    """Quadrature of the squared slopes: N_j = sum_k w_k b_j(s_k)^2."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (model.slopes.shape[0],):
        raise ValueError("weights must match the abscissa count")
    return w @ model.slopes**2


def screening_indices(dgsm):
    """Normalize approximate DGSMs to screening indices summing to one."""
    d = np.asarray(dgsm, dtype=float)
    if np.any(d < 0):
        raise ValueError("DGSM values must be nonnegative")
    total = d.sum()
    if not total > 0:
        raise AllZeroSensitivity("all approximate DGSMs vanish")
    s = d / total
    # absorb round-off into the largest index; the correctly rounded sum is then one
    k = np.argmax(s)
    s[k] = 0.0
    s[k] = 1.0 - math.fsum(s)
    for _ in range(16):
        total = math.fsum(s)
        if total == 1.0:
            break
        s[k] = np.nextafter(s[k], np.inf if total < 1.0 else -np.inf)
    return s


@dataclass(frozen=True, eq=False)
class Reduction:
    """Ordered reduced index set (0-based) with a projector."""

    indices: np.ndarray
    n_full: int

    @property
    def n_reduced(self):
        return self.indices.size

    def project(self, xi):
        """Extract the retained coordinates from full parameter vectors."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.n_full:
            raise ValueError(f"expected {self.n_full} parameters, got {xi.shape[-1]}")
        return xi[..., self.indices]


def reduce_parameters(indices, tol):
    """Keep every parameter whose screening index exceeds ``tol``."""
    s = np.asarray(indices, dtype=float)
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    keep = np.flatnonzero(s > tol)
    if keep.size == 0:
        raise EmptyReduction(f"no screening index exceeds {tol}")
    return Reduction(keep, s.size)


@dataclass(frozen=True, eq=False)
class ScreeningReport:
    dgsm: np.ndarray
    indices: np.ndarray
    reduced_set: np.ndarray
    tol: float
    r_squared: np.ndarray = field(default_factory=lambda: np.empty(0))
    underdetermined: bool = False

    @property
    def n_reduced(self):
        return self.reduced_set.size

    def reduction(self):
        return Reduction(self.reduced_set, self.indices.size)

    def to_text(self):
        lines = [
            f"# tol = {self.tol:.17g}",
            f"# underdetermined = {int(self.underdetermined)}",
            f"# reduced_set = {' '.join(str(int(k)) for k in self.reduced_set)}",
            "# j dgsm index selected",
        ]
        chosen = set(int(k) for k in self.reduced_set)
        for j, (d, s) in enumerate(zip(self.dgsm, self.indices)):
            lines.append(f"{j} {d:.17e} {s:.17e} {int(j in chosen)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        tol, under, kr = None, False, np.empty(0, dtype=int)
        rows = []
        for line in text.splitlines():
            if line.startswith("# tol ="):
                tol = float(line.split("=", 1)[1])
            elif line.startswith("# underdetermined ="):
                under = bool(int(line.split("=", 1)[1]))
            elif line.startswith("# reduced_set ="):
                kr = np.array([int(t) for t in line.split("=", 1)[1].split()], dtype=int)
            elif line.strip() and not line.startswith("#"):
                rows.append(line.split())
        arr = np.array(rows, dtype=float).reshape(-1, 4)
        return cls(arr[:, 1], arr[:, 2], kr, float(tol), underdetermined=under)


def screen(samples, evaluations, weights, tol):
    """Full screening pass: fit, integrate, normalize and reduce."""
    model = fit_global_linear_model(samples, evaluations)
    dgsm = approx_functional_dgsm(model, weights)
    idx = screening_indices(dgsm)
    red = reduce_parameters(idx, tol)
    logger.info("screening kept %d of %d parameters at tol=%g", red.n_reduced, idx.size, tol)
    return ScreeningReport(dgsm, idx, red.indices, float(tol), model.r_squared, model.underdetermined)
