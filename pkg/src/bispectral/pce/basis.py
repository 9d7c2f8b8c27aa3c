"""Total-order probabilists' Hermite basis."""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial

import numpy as np

MAX_TERMS = 1_000_000


def n_terms(n_p, n_ord):
    """Number of multi-indices with |alpha| <= n_ord in n_p variables."""
    return comb(n_ord + n_p, n_p)


def _compositions(total, parts):
    """All alpha in N^parts with |alpha| = total, first coordinate descending."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total, -1, -1):
        for tail in _compositions(total - head, parts - 1):
            yield (head,) + tail


def total_order_indices(n_p, n_ord):
    """Graded-lexicographic multi-indices, shape (count, n_p)."""
    rows = [a for d in range(n_ord + 1) for a in _compositions(d, n_p)]
    return np.array(rows, dtype=np.int64).reshape(-1, n_p)


def hermite_table(x, n_ord):
    """He_0..He_{n_ord} at ``x``; output shape (n_ord + 1,) + x.shape."""
    x = np.asarray(x, dtype=float)
    out = np.empty((n_ord + 1,) + x.shape)
    out[0] = 1.0
    if n_ord >= 1:
        out[1] = x
    for n in range(1, n_ord):
        out[n + 1] = x * out[n] - n * out[n - 1]
    return out


@dataclass(frozen=True, eq=False)
class TotalOrderBasis:
    """Tensor Hermite polynomials Psi_alpha(xi) = prod_i He_{alpha_i}(xi_i).

    Attributes
    ----------
    n_p : int
        Number of variables.
    n_ord : int
        Maximum total degree.
    indices : ndarray, shape (P, n_p)
        Multi-indices in graded-lexicographic order; row 0 is the constant.
    norms_sq : ndarray, shape (P,)
        Squared norms prod_i alpha_i! under the standard Gaussian measure.
    """

    n_p: int
    n_ord: int
    indices: np.ndarray
    norms_sq: np.ndarray

    @property
    def size(self):
        return self.indices.shape[0]

    def evaluate(self, xi):
        """Design matrix of shape (N, P) for points ``xi`` of shape (N, n_p)."""
        xi = np.asarray(xi, dtype=float)
        single = xi.ndim == 1
        xi = np.atleast_2d(xi)
        if xi.shape[1] != self.n_p:
            raise ValueError(f"expected {self.n_p} variables, got {xi.shape[1]}")
        h = hermite_table(xi.T, self.n_ord)  # (n_ord+1, n_p, N)
        out = np.ones((xi.shape[0], self.size))
        for i in range(self.n_p):
            col = self.indices[:, i]
            nz = np.flatnonzero(col)
            if nz.size:
                out[:, nz] *= h[col[nz], i, :].T
        return out[0] if single else out

    def same_as(self, other):
        return (
            self.n_p == other.n_p
            and self.n_ord == other.n_ord
            and np.array_equal(self.indices, other.indices)
        )


def build_basis(n_p, n_ord):
    if n_p < 1 or n_ord < 0:
        raise ValueError("need n_p >= 1 and n_ord >= 0")
    count = n_terms(n_p, n_ord)
    if count > MAX_TERMS:
        raise ValueError(f"basis with {count} terms exceeds the {MAX_TERMS} limit")
    idx = total_order_indices(n_p, n_ord)
    fact = np.array([factorial(k) for k in range(n_ord + 1)], dtype=float)
    norms = np.prod(fact[idx], axis=1)
    return TotalOrderBasis(int(n_p), int(n_ord), idx, norms)


def evaluate_basis(basis, xi_r):
    return basis.evaluate(xi_r)
