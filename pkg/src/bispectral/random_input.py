"""Random porosity/permeability fields from a truncated KL expansion.

A stationary Gaussian process with exponential covariance is expanded with
the Nystrom method on a node grid; samples are pushed through the standard
normal CDF and an inverse Beta CDF to get porosity, then through a
Kozeny-Carman law to get permeability.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special


class KLEError(RuntimeError):
    """Raised when the discretized covariance cannot be decomposed."""


@dataclass(frozen=True)
class ExponentialKernel:
    correlation_length: float
    domain_length: float

    def __post_init__(self):
        if not self.correlation_length > 0:
            raise ValueError("correlation_length must be positive")
        if not self.domain_length > 0:
            raise ValueError("domain_length must be positive")

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if np.isinf(self.correlation_length):
            return np.ones(np.broadcast(x, y).shape)
        return np.exp(-np.abs(x - y) / self.correlation_length)

    def matrix(self, nodes):
        nodes = np.asarray(nodes, dtype=float)
        return self(nodes[:, None], nodes[None, :])


@dataclass(frozen=True, eq=False)
class InputKLE:
    """Truncated KLE of the Gaussian driver.

    ``eigenfunctions`` has shape (n_nodes, n_params); column ``i`` holds
    e_i at the grid nodes.
    """

    nodes: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    quadrature_weights: np.ndarray
    n_params: int
    captured_variance_fraction: float

    def interpolate(self, x):
        """Eigenfunctions at arbitrary points by piecewise-linear interpolation."""
        x = np.asarray(x, dtype=float)
        out = np.empty((x.size, self.n_params))
        for i in range(self.n_params):
            out[:, i] = np.interp(x, self.nodes, self.eigenfunctions[:, i])
        return out


def trapezoid_weights(nodes):
    """Composite trapezoid weights for a (possibly non-uniform) node grid."""
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.size < 2:
        raise ValueError("need at least two nodes")
    dx = np.diff(nodes)
    if np.any(dx <= 0):
        raise ValueError("nodes must be strictly increasing")
    w = np.zeros_like(nodes)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


def uniform_nodes(domain_length, n_nodes):
    return np.linspace(0.0, domain_length, n_nodes)


def build_input_kle(kernel, mesh_nodes, quadrature_weights, n_params):
    """Dominant eigenpairs of the covariance operator by the Nystrom method.

    Solves ``W^{1/2} C W^{1/2} v = lam v`` and recovers the eigenfunctions
    as ``W^{-1/2} v`` so that they are orthonormal under the quadrature
    rule.
    """
    nodes = np.asarray(mesh_nodes, dtype=float)
    w = np.asarray(quadrature_weights, dtype=float)
    if w.shape != nodes.shape:
        raise ValueError("weights and nodes must have the same shape")
    if np.any(w <= 0):
        raise ValueError("quadrature weights must be positive")
    n_params = int(n_params)
    if not 1 <= n_params <= nodes.size:
        raise ValueError("n_params must lie in [1, number of nodes]")

    sw = np.sqrt(w)
    a = sw[:, None] * kernel.matrix(nodes) * sw[None, :]
    try:
        lam, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise KLEError(f"eigen-solve failed: {exc}") from exc
    order = np.argsort(lam)[::-1]
    lam = lam[order][:n_params]
    v = v[:, order][:, :n_params]
    if np.any(lam < -1e-12):
        raise KLEError(f"negative eigenvalue {lam.min():.3e}; kernel discretization is broken")
    lam = np.clip(lam, 0.0, None)

    # fix the sign so the largest-magnitude entry of each mode is positive
    idx = np.argmax(np.abs(v), axis=0)
    v = v * np.sign(v[idx, np.arange(v.shape[1])])

    efun = v / sw[:, None]
    trace = float(np.sum(w * np.diag(kernel.matrix(nodes))))
    return InputKLE(
        nodes=nodes,
        eigenvalues=lam,
        eigenfunctions=efun,
        quadrature_weights=w,
        n_params=n_params,
        captured_variance_fraction=float(lam.sum() / trace),
    )


def sample_gaussian_field(kle, xi, eigenfunctions=None):
    """Z(x_k) = sum_i sqrt(lam_i) xi_i e_i(x_k).

    ``xi`` may be a vector (one field) or an (n_samples, n_params) array.
    Pass ``eigenfunctions`` to evaluate on points other than the KLE nodes
    (e.g. the result of :meth:`InputKLE.interpolate`).
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != kle.n_params:
        raise ValueError(f"expected {kle.n_params} coefficients, got {xi.shape[-1]}")
    e = kle.eigenfunctions if eigenfunctions is None else eigenfunctions
    return (xi * np.sqrt(kle.eigenvalues)) @ e.T


@dataclass(frozen=True)
class BetaTransform:
    alpha_beta: float
    beta_beta: float

    def __post_init__(self):
        if not (self.alpha_beta > 0 and self.beta_beta > 0):
            raise ValueError("Beta shape parameters must be positive")

    @property
    def mode(self):
        return (self.alpha_beta - 1.0) / (self.alpha_beta + self.beta_beta - 2.0)

    def cdf(self, x):
        return special.betainc(self.alpha_beta, self.beta_beta, x)

    def sf(self, x):
        return special.betaincc(self.alpha_beta, self.beta_beta, x)

    def ppf(self, u, *, upper=False):
        """Inverse CDF.

        With ``upper=True`` the argument is a tail probability and the
        survival function is inverted instead, which keeps resolution for
        probabilities close to one.
        """
        u = np.asarray(u, dtype=float)
        if upper:
            return special.betainccinv(self.alpha_beta, self.beta_beta, u)
        return special.betaincinv(self.alpha_beta, self.beta_beta, u)


def calibrate_beta(phi_bar, alpha_beta):
    """Beta law with shape ``alpha_beta`` whose mode is ``phi_bar``."""
    if not 0.0 < phi_bar < 1.0:
        raise ValueError("phi_bar must lie in (0, 1)")
    if not alpha_beta > 1.0:
        raise ValueError("alpha_beta must exceed 1")
    beta = (alpha_beta - 1.0) / phi_bar - alpha_beta + 2.0
    return BetaTransform(float(alpha_beta), float(beta))


_TINY = np.nextafter(0.0, 1.0)


def gaussian_to_porosity(z, transform):
    """phi = F_B^{-1}(F_G(z)); the pointwise marginal is Beta(alpha, beta)."""
    z = np.asarray(z, dtype=float)
    phi = np.empty_like(z)
    neg = z <= 0
    # invert on whichever tail keeps the probability away from 1
    phi[neg] = transform.ppf(special.ndtr(z[neg]))
    phi[~neg] = transform.ppf(special.ndtr(-z[~neg]), upper=True)
    return np.clip(phi, _TINY, 1.0 - np.finfo(float).epsneg)


def kozeny_carman(phi, phi_bar, k_bar):
    """K(phi) = C phi^3 / (1 - phi)^2 with C chosen so that K(phi_bar) = k_bar."""
    phi = np.asarray(phi, dtype=float)
    if np.any((phi <= 0) | (phi >= 1)):
        raise ValueError("porosity must lie strictly inside (0, 1)")
    scale = k_bar * (1.0 - phi_bar) ** 2 / phi_bar**3
    return scale * phi**3 / (1.0 - phi) ** 2


@dataclass(frozen=True, eq=False)
class MaterialFields:
    porosity: np.ndarray
    permeability: np.ndarray
    xi: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.porosity.shape != self.permeability.shape:
            raise ValueError("porosity and permeability must share a shape")
        if np.any((self.porosity <= 0) | (self.porosity >= 1)):
            raise ValueError("porosity outside (0, 1)")
        if np.any(self.permeability <= 0):
            raise ValueError("permeability must be positive")

    @classmethod
    def homogeneous(cls, n_cells, phi, k):
        return cls(np.full(n_cells, float(phi)), np.full(n_cells, float(k)))


def material_fields(kle, xi, cell_centers, transform, phi_bar, k_bar):
    """Porosity and permeability on the flow cells for one coefficient vector."""
    e = kle.interpolate(cell_centers)
    z = sample_gaussian_field(kle, xi, eigenfunctions=e)
    phi = gaussian_to_porosity(z, transform)
    return MaterialFields(phi, kozeny_carman(phi, phi_bar, k_bar), np.asarray(xi, dtype=float))
