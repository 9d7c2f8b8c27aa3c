"""k-fold cross-validation over polynomial degree and L1 budget."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..analysis import relative_l2_error
from ..output_kle import compute_output_kle
from .basis import build_basis, n_terms
from .sparse import SparseNonConvergence, SparseRegressionConfig, sparse_regress

logger = logging.getLogger(__name__)

DEFAULT_ORDERS = (1, 2, 3, 4)
DEFAULT_TAUS = tuple(np.round(np.arange(1.0, 4.0 + 1e-9, 0.1), 10))


@dataclass(frozen=True, eq=False)
class CVResult:
    """Outcome of the sweep.

    ``errors`` has shape (len(orders), len(taus)) and holds the fold-averaged
    relative error; ``folds`` lists the validation indices of every fold.
    """

    n_ord: int
    tau: float
    orders: tuple
    taus: tuple
    errors: np.ndarray
    folds: tuple

    def to_text(self):
        lines = ["# n_ord tau mean_e_rel"]
        for a, o in enumerate(self.orders):
            for b, t in enumerate(self.taus):
                lines.append(f"{o} {t:.4f} {self.errors[a, b]:.10e}")
        lines.append(f"# selected n_ord = {self.n_ord} tau = {self.tau:.4f}")
        return "\n".join(lines) + "\n"


def make_folds(n, k_folds, seed):
    """Contiguous folds of a seeded permutation of range(n)."""
    if not 2 <= k_folds <= n:
        raise ValueError("need 2 <= k_folds <= number of samples")
    perm = np.random.default_rng(seed).permutation(n)
    return tuple(np.sort(part) for part in np.array_split(perm, k_folds))


def _tau_path(design, data, taus, tol, max_iter):
    """Warm-started solutions along an increasing tau grid."""
    out = np.empty((len(taus), design.shape[1]))
    x = None
    for b, tau in enumerate(taus):
        cfg = SparseRegressionConfig(tau=float(tau), tolerance=tol, max_iterations=max_iter)
        try:
            x = sparse_regress(design, data, cfg, x0=x)
        except SparseNonConvergence as exc:
            x = exc.solution
        out[b] = x
    return out


def kfold_select(xi_r, trajectories, weights, n_qoi, *, orders=DEFAULT_ORDERS, taus=DEFAULT_TAUS,
                 k_folds=10, seed=0, tol=1e-8, max_iter=4000, max_basis=None):
    """Choose (N_ord, tau) minimizing the fold-averaged full-trajectory error.

    For every fold the output KLE is recomputed from the training
    trajectories, mode PCEs are fitted on the reduced training samples, and
    the resulting surrogate is compared with the held-out trajectories.

    Parameters
    ----------
    xi_r : ndarray, shape (N, n_p)
        Reduced parameter samples.
    trajectories : ndarray, shape (m, N)
        Exact model outputs for the same samples.
    weights : ndarray, shape (m,)
    n_qoi : int
        Number of KL modes kept in every fold.
    max_basis : int, optional
        Degrees whose basis exceeds this many terms are left out of the
        sweep.
    """
    xi_r = np.atleast_2d(np.asarray(xi_r, dtype=float))
    y = np.asarray(trajectories, dtype=float)
    if len(orders) == 0 or len(taus) == 0:
        raise ValueError("empty CV grid")
    orders = tuple(int(o) for o in orders)
    if max_basis is not None:
        kept = tuple(o for o in orders if n_terms(xi_r.shape[1], o) <= max_basis)
        if len(kept) < len(orders):
            logger.warning("skipping degrees %s: basis larger than %d terms",
                           sorted(set(orders) - set(kept)), max_basis)
        if not kept:
            raise ValueError("every degree in the grid exceeds the basis-size limit")
        orders = kept
    taus = tuple(float(t) for t in sorted(taus))
    n = xi_r.shape[0]
    if y.shape[1] != n:
        raise ValueError("trajectories must have one column per sample")
    folds = make_folds(n, k_folds, seed)
    errors = np.zeros((len(orders), len(taus)))
    bases = {o: build_basis(xi_r.shape[1], o) for o in orders}

    for f, val in enumerate(folds):
        train = np.setdiff1d(np.arange(n), val)
        kle = compute_output_kle(y[:, train], weights, n_qoi=n_qoi)
        sq = np.sqrt(kle.retained_eigenvalues)
        for a, o in enumerate(orders):
            basis = bases[o]
            d_train = basis.evaluate(xi_r[train])
            d_val = basis.evaluate(xi_r[val])
            paths = np.stack([_tau_path(d_train, mode, taus, tol, max_iter) for mode in kle.modes])
            for b in range(len(taus)):
                pred_modes = d_val @ paths[:, b, :].T  # (n_val, N_qoi)
                pred = kle.mean[:, None] + kle.eigenfunctions @ (sq[:, None] * pred_modes.T)
                errors[a, b] += relative_l2_error(pred, y[:, val], weights)
        logger.debug("fold %d/%d done", f + 1, len(folds))
    errors /= len(folds)
    a, b = np.unravel_index(np.argmin(errors), errors.shape)
    logger.info("cross-validation picked n_ord=%d tau=%.2f (e_rel=%.3e)", orders[a], taus[b], errors[a, b])
    return CVResult(orders[a], taus[b], orders, taus, errors, folds)
