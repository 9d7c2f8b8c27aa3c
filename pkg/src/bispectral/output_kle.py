"""Sample-based KL expansion of a function-valued output ensemble.

The ensemble mean and sample covariance are formed on a shared abscissa
grid, the weighted covariance operator is diagonalized with the Nystrom
method, and each sample is projected onto the retained eigenfunctions to
obtain unit-variance KL modes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

EIG_FLOOR = 1e-14


class DegenerateEnsemble(ValueError):
    """The ensemble has zero variance everywhere."""


@dataclass(frozen=True, eq=False)
class OutputKLE:
    """Truncated output KLE.

    Attributes
    ----------
    abscissae : ndarray, shape (m,)
    mean : ndarray, shape (m,)
    weights : ndarray, shape (m,)
    eigenvalues : ndarray, shape (m,)
        Full spectrum, descending, clipped at zero.
    eigenfunctions : ndarray, shape (m, N_qoi)
        Retained eigenfunctions, orthonormal under ``weights``.
    modes : ndarray, shape (N_qoi, N_s)
        KL-mode values f_i(xi_j) for the input ensemble.
    n_qoi : int
    """

    abscissae: np.ndarray
    mean: np.ndarray
    weights: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    modes: np.ndarray
    n_qoi: int

    @property
    def retained_eigenvalues(self):
        return self.eigenvalues[: self.n_qoi]

    @property
    def rank_fractions(self):
        return np.cumsum(self.eigenvalues) / np.sum(self.eigenvalues)

    @property
    def tail(self):
        """Sum of the discarded eigenvalues."""
        return float(np.sum(self.eigenvalues[self.n_qoi:]))

    def project(self, evaluations):
        """KL modes of new trajectories, shape (N_qoi, N)."""
        y = np.asarray(evaluations, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        fc = y - self.mean[:, None]
        lam = self.retained_eigenvalues
        return (self.eigenfunctions.T @ (self.weights[:, None] * fc)) / np.sqrt(lam)[:, None]

    def spectrum_text(self):
        lines = ["# k lambda_k r_k"]
        for k, (lam, r) in enumerate(zip(self.eigenvalues, self.rank_fractions), start=1):
            lines.append(f"{k} {lam:.17e} {r:.17e}")
        return "\n".join(lines) + "\n"


def rank_fraction(eigenvalues, k):
    """Fraction of total variance carried by the first ``k`` eigenvalues."""
    lam = np.asarray(eigenvalues, dtype=float)
    if not 1 <= k <= lam.size:
        raise ValueError(f"k must lie in [1, {lam.size}]")
    total = lam.sum()
    if not total > 0:
        raise DegenerateEnsemble("zero total variance")
    return float(lam[:k].sum() / total)


def compute_output_kle(evaluations, weights, tol=0.99, *, n_qoi=None, abscissae=None):
    """Truncated KLE of an ensemble of trajectories.

    Parameters
    ----------
    evaluations : array_like, shape (m, N_s)
        Column ``j`` holds the trajectory of sample ``j``.
    weights : array_like, shape (m,)
        Positive quadrature weights on the abscissae.
    tol : float
        Target variance fraction; the smallest N_qoi with r_N > tol is kept.
    n_qoi : int, optional
        Force the truncation instead of using ``tol``.

    Raises
    ------
    DegenerateEnsemble
        If every sample equals the mean.
    """
    y = np.asarray(evaluations, dtype=float)
    w = np.asarray(weights, dtype=float)
    if y.ndim != 2 or y.shape[1] < 2:
        raise ValueError("need an (m, N_s) ensemble with N_s >= 2")
    m, n_s = y.shape
    if w.shape != (m,) or np.any(w <= 0):
        raise ValueError("weights must be positive with one entry per abscissa")
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")

    mean = y.sum(axis=1) / n_s
    fc = y - mean[:, None]
    cov = fc @ fc.T / (n_s - 1)
    sw = np.sqrt(w)
    lam, v = linalg.eigh(sw[:, None] * cov * sw[None, :])
    lam, v = lam[::-1], v[:, ::-1]
    lam = np.maximum(lam, 0.0)
    if not lam[0] > 0:
        raise DegenerateEnsemble("ensemble has zero variance")

    usable = int(np.sum(lam > EIG_FLOOR * lam[0]))
    if n_qoi is None:
        r = np.cumsum(lam) / lam.sum()
        n_qoi = int(np.argmax(r > tol)) + 1 if np.any(r > tol) else m
    if n_qoi < 1:
        raise ValueError("n_qoi must be positive")
    if n_qoi > usable:
        logger.warning("n_qoi=%d exceeds the %d resolvable modes; truncating", n_qoi, usable)
        n_qoi = usable

    phi = v[:, :n_qoi] / sw[:, None]
    # deterministic sign: largest-magnitude entry positive
    flip = np.sign(phi[np.argmax(np.abs(phi), axis=0), np.arange(n_qoi)])
    phi = phi * flip
    modes = (phi.T @ (w[:, None] * fc)) / np.sqrt(lam[:n_qoi])[:, None]
    if abscissae is None:
        abscissae = np.arange(m, dtype=float)
    return OutputKLE(np.asarray(abscissae, dtype=float), mean, w, lam, phi, modes, int(n_qoi))


def reconstruct(kle, j=None):
    """Truncated reconstruction of sample ``j`` (all samples when None)."""
    modes = kle.modes if j is None else kle.modes[:, j : j + 1]
    out = kle.mean[:, None] + kle.eigenfunctions @ (np.sqrt(kle.retained_eigenvalues)[:, None] * modes)
    return out[:, 0] if j is not None else out
