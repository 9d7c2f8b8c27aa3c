"""L1-constrained least squares by spectral projected gradient.

Solves ``min ||A c - d||_2^2  s.t.  ||c||_1 <= tau`` with Barzilai-Borwein
steps, a nonmonotone Armijo line search and Euclidean projection onto the
L1 ball. Optimality is certified by the duality gap. A small active-set
polish on the final support removes the slow tail of first-order
convergence.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)


class SparseNonConvergence(RuntimeError):
    """Iteration budget exhausted; ``solution`` holds the best iterate."""

    def __init__(self, iterations, gap, solution):
        super().__init__(f"no convergence after {iterations} iterations (gap {gap:.3e})")
        self.iterations = iterations
        self.gap = gap
        self.solution = solution


@dataclass(frozen=True)
class SparseRegressionConfig:
    """Solver settings.

    ``tolerance`` bounds the duality gap of ``||A c - d||^2`` relative to
    ``||d||^2``.
    """

    tau: float
    max_iterations: int = 20000
    tolerance: float = 1e-10
    memory: int = 10

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.max_iterations < 1 or not self.tolerance > 0:
            raise ValueError("invalid iteration settings")


def project_l1_ball(v, tau):
    """Euclidean projection onto ``{x : ||x||_1 <= tau}`` (sort-and-threshold)."""
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    if a.sum() <= tau:
        return v.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u) - tau
    k = np.arange(1, u.size + 1)
    rho = np.flatnonzero(u * k > css)[-1]
    theta = css[rho] / (rho + 1)
    return np.sign(v) * np.maximum(a - theta, 0.0)


class _Quadratic:
    """f(c) = 0.5 ||A c - d||^2 using whichever of A or A^T A is cheaper."""

    def __init__(self, a, d):
        self.a = a
        self.d = d
        self.dd = float(d @ d)
        self.atd = a.T @ d
        n, p = a.shape
        self.gram = a.T @ a if p <= n else None

    def value_grad(self, c):
        if self.gram is not None:
            gc = self.gram @ c
            f = 0.5 * (c @ gc) - self.atd @ c + 0.5 * self.dd
            return max(f, 0.0), gc - self.atd
        r = self.a @ c - self.d
        return 0.5 * float(r @ r), self.a.T @ r

    def gap(self, c, f, g, tau):
        """Duality gap of 0.5||Ac - d||^2 at c (g is the gradient at c)."""
        # with r = d - A c: gap = r.r - d.r + tau ||A^T r||_inf
        return 2.0 * f - self.dd + self.atd @ c + tau * np.max(np.abs(g), initial=0.0)


def _polish(q, c, tau):
    """Re-solve on the support of ``c`` with the active L1 constraint."""
    supp = np.flatnonzero(np.abs(c) > 1e-12 * max(np.max(np.abs(c), initial=0.0), 1e-300))
    if supp.size == 0 or supp.size > q.a.shape[0]:
        return None
    a_s = q.a[:, supp]
    z = np.sign(c[supp])
    sol, *_ = linalg.lstsq(a_s, q.d)
    if np.sum(np.abs(sol)) > tau:
        g = a_s.T @ a_s
        k = np.zeros((supp.size + 1, supp.size + 1))
        k[:-1, :-1] = g
        k[:-1, -1] = z
        k[-1, :-1] = z
        rhs = np.concatenate([q.atd[supp], [tau]])
        try:
            sol = linalg.solve(k, rhs, assume_a="sym")[:-1]
        except (linalg.LinAlgError, ValueError):
            return None
        if np.any(np.sign(sol) != z):
            return None
    out = np.zeros_like(c)
    out[supp] = sol
    return project_l1_ball(out, tau)


def sparse_regress(design, data, cfg, x0=None):
    """Solve the L1-constrained least-squares problem.

    Parameters
    ----------
    design : array_like, shape (N, P)
    data : array_like, shape (N,)
    cfg : SparseRegressionConfig
    x0 : array_like, optional
        Warm start; projected onto the feasible set first.

    Returns
    -------
    ndarray, shape (P,)

    Raises
    ------
    SparseNonConvergence
        When the duality gap stays above tolerance after the budget.
    """
    a = np.asarray(design, dtype=float)
    d = np.asarray(data, dtype=float)
    if a.ndim != 2 or d.shape != (a.shape[0],):
        raise ValueError("design must be (N, P) and data (N,)")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(d))):
        raise ValueError("non-finite regression inputs")
    tau = float(cfg.tau)
    q = _Quadratic(a, d)
    target = 0.5 * cfg.tolerance * max(q.dd, 1e-300)

    c = np.zeros(a.shape[1]) if x0 is None else project_l1_ball(x0, tau)
    f, g = q.value_grad(c)
    gap = q.gap(c, f, g, tau)
    best = (gap, c, f, g)
    hist = [f]
    gnorm = np.max(np.abs(g), initial=0.0)
    step = 1.0 / gnorm if gnorm > 0 else 1.0
    it = 0
    while gap > target and it < cfg.max_iterations:
        it += 1
        direction = project_l1_ball(c - step * g, tau) - c
        gtd = g @ direction
        if gtd >= 0:
            break
        f_ref = max(hist[-cfg.memory:])
        lam = 1.0
        while True:
            c_new = c + lam * direction
            f_new, g_new = q.value_grad(c_new)
            if f_new <= f_ref + 1e-4 * lam * gtd or lam < 1e-12:
                break
            lam *= 0.5
        s = c_new - c
        y = g_new - g
        sty = s @ y
        step = (s @ s) / sty if sty > 0 else 1e10
        step = min(max(step, 1e-10), 1e10)
        c, f, g = c_new, f_new, g_new
        hist.append(f)
        gap = q.gap(c, f, g, tau)
        if gap < best[0]:
            best = (gap, c, f, g)
        if it % 50 == 0 and gap > target:
            cand = _polish(q, c, tau)
            if cand is not None:
                fc, gc = q.value_grad(cand)
                gp = q.gap(cand, fc, gc, tau)
                if gp < best[0]:
                    best = (gp, cand, fc, gc)
                    c, f, g, gap = cand, fc, gc, gp

    gap, c, f, g = best
    if gap > target:
        cand = _polish(q, c, tau)
        if cand is not None:
            fc, gc = q.value_grad(cand)
            gp = q.gap(cand, fc, gc, tau)
            if gp < gap:
                gap, c = gp, cand
    if gap > target:
        raise SparseNonConvergence(it, 2.0 * gap / max(q.dd, 1e-300), c)
    return c


def objective(design, data, coef):
    r = np.asarray(design) @ coef - np.asarray(data)
    return float(r @ r)
