"""Bispectral surrogate: truncated output KLE with PCE-modelled KL modes.

Binary snapshot layout (all little-endian)::

    offset  type        field
    0       8s          magic b"BSPSURR\\0"
    8       u4          format version
    12      u4          n_p (reduced dimension)
    16      u4          N_qoi
    20      u4          N_ord
    24      u4          m (abscissa count)
    28      u4          n_full (parameter count before reduction)
    32      u4          P (basis size)
    36      u4          reserved (0)
    40      i4[n_p]     K_r, 0-based
    ...     f8[m]       abscissae
    ...     f8[m]       mean
    ...     f8[m]       weights
    ...     f8[N_qoi]   eigenvalues
    ...     f8[m*N_qoi] eigenvectors, row-major (m, N_qoi)
    ...     f8[N_qoi*P] coefficients, row-major (N_qoi, P)
    ...     f8          discarded-eigenvalue tail
    end-4   u4          CRC-32 of all preceding bytes
"""
from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..output_kle import OutputKLE
from .basis import TotalOrderBasis, build_basis
from .sparse import SparseNonConvergence, SparseRegressionConfig, sparse_regress

logger = logging.getLogger(__name__)

MAGIC = b"BSPSURR\0"
VERSION = 1
_HEADER = struct.Struct("<8s8I")


class SnapshotError(ValueError):
    """Corrupt or incompatible surrogate snapshot."""


@dataclass(frozen=True, eq=False)
class ModePCE:
    basis: TotalOrderBasis
    coefficients: np.ndarray

    def __call__(self, xi_r):
        return self.basis.evaluate(xi_r) @ self.coefficients


@dataclass(frozen=True, eq=False)
class BispectralSurrogate:
    """f(s, xi) ~ mean(s) + sum_i sqrt(lambda_i) f_i^PC(xi_r) Phi_i(s).

    Attributes
    ----------
    abscissae, mean, weights : ndarray, shape (m,)
    eigenvalues : ndarray, shape (N_qoi,)
    eigenfunctions : ndarray, shape (m, N_qoi)
    coefficients : ndarray, shape (N_qoi, P)
    basis : TotalOrderBasis
    reduced_set : ndarray of int
        0-based indices of the retained input parameters.
    n_full : int
        Input dimension before reduction.
    kle_tail : float
        Sum of the output-KLE eigenvalues that were discarded.
    """

    abscissae: np.ndarray
    mean: np.ndarray
    weights: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    coefficients: np.ndarray
    basis: TotalOrderBasis
    reduced_set: np.ndarray
    n_full: int
    kle_tail: float = 0.0

    def __post_init__(self):
        m = self.mean.size
        nq = self.eigenvalues.size
        if self.eigenfunctions.shape != (m, nq):
            raise ValueError("eigenfunctions must be (m, N_qoi)")
        if self.coefficients.shape != (nq, self.basis.size):
            raise ValueError("coefficients must be (N_qoi, P)")
        if self.reduced_set.size != self.basis.n_p:
            raise ValueError("reduced set size differs from the basis dimension")

    @property
    def n_qoi(self):
        return self.eigenvalues.size

    @property
    def n_reduced(self):
        return self.basis.n_p

    @property
    def eta(self):
        """Scaled coefficients eta_i^k = sqrt(lambda_i) c_{i,k}, shape (N_qoi, P)."""
        return np.sqrt(self.eigenvalues)[:, None] * self.coefficients

    def modes(self, xi_r):
        """PCE values of every KL mode, shape (N, N_qoi)."""
        return self.basis.evaluate(np.atleast_2d(xi_r)) @ self.coefficients.T

    def evaluate(self, xi_r, *, batch=20000):
        """Trajectories on the shared grid: shape (m,) or (m, N)."""
        xi_r = np.asarray(xi_r, dtype=float)
        single = xi_r.ndim == 1
        xi_r = np.atleast_2d(xi_r)
        if xi_r.shape[1] != self.n_reduced:
            raise ValueError(f"expected {self.n_reduced} reduced parameters")
        out = np.empty((self.mean.size, xi_r.shape[0]))
        scaled = self.eigenfunctions * np.sqrt(self.eigenvalues)
        for lo in range(0, xi_r.shape[0], batch):
            hi = lo + batch
            out[:, lo:hi] = self.mean[:, None] + scaled @ self.modes(xi_r[lo:hi]).T
        return out[:, 0] if single else out

    def evaluate_full(self, xi):
        """Evaluate from full-dimension parameter vectors."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.n_full:
            raise ValueError(f"expected {self.n_full} parameters")
        return self.evaluate(xi[..., self.reduced_set])

    # persistence

    def to_bytes(self):
        m, nq, p = self.mean.size, self.n_qoi, self.basis.size
        head = _HEADER.pack(MAGIC, VERSION, self.n_reduced, nq, self.basis.n_ord, m, self.n_full, p, 0)
        parts = [
            head,
            np.asarray(self.reduced_set, dtype="<i4").tobytes(),
            self.abscissae.astype("<f8").tobytes(),
            self.mean.astype("<f8").tobytes(),
            self.weights.astype("<f8").tobytes(),
            self.eigenvalues.astype("<f8").tobytes(),
            np.ascontiguousarray(self.eigenfunctions).astype("<f8").tobytes(),
            np.ascontiguousarray(self.coefficients).astype("<f8").tobytes(),
            struct.pack("<d", self.kle_tail),
        ]
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, raw):
        if len(raw) < _HEADER.size + 4:
            raise SnapshotError("truncated snapshot")
        body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
        if zlib.crc32(body) != crc:
            raise SnapshotError("checksum mismatch")
        magic, version, n_p, nq, n_ord, m, n_full, p, _ = _HEADER.unpack_from(body)
        if magic != MAGIC:
            raise SnapshotError("not a surrogate snapshot")
        if version != VERSION:
            raise SnapshotError(f"unsupported snapshot version {version}")
        off = _HEADER.size

        def take(dtype, count):
            nonlocal off
            arr = np.frombuffer(body, dtype=dtype, count=count, offset=off)
            off += arr.nbytes
            return arr.astype(np.int64 if dtype == "<i4" else float)

        k_r = take("<i4", n_p)
        absc, mean, w = take("<f8", m), take("<f8", m), take("<f8", m)
        lam = take("<f8", nq)
        phi = take("<f8", m * nq).reshape(m, nq)
        coef = take("<f8", nq * p).reshape(nq, p)
        (tail,) = struct.unpack_from("<d", body, off)
        if off + 8 != len(body):
            raise SnapshotError("payload length mismatch")
        basis = build_basis(n_p, n_ord)
        if basis.size != p:
            raise SnapshotError("basis size mismatch")
        return cls(absc, mean, w, lam, phi, coef, basis, k_r, int(n_full), float(tail))

    def manifest(self):
        return "\n".join(
            [
                "[surrogate]",
                f"format_version = {VERSION}",
                f"n_p = {self.n_reduced}",
                f"n_full = {self.n_full}",
                f"n_qoi = {self.n_qoi}",
                f"n_ord = {self.basis.n_ord}",
                f"basis_size = {self.basis.size}",
                f"m = {self.mean.size}",
                f"reduced_set = {' '.join(str(int(k)) for k in self.reduced_set)}",
                f"eigenvalues = {' '.join(f'{v:.10e}' for v in self.eigenvalues)}",
                f"kle_tail = {self.kle_tail:.10e}",
                "",
            ]
        )

    def save(self, path):
        path = Path(path)
        path.write_bytes(self.to_bytes())
        path.with_suffix(path.suffix + ".manifest").write_text(self.manifest())
        return path

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def fit_mode_pces(xi_r, modes, basis, tau, *, cfg=None):
    """Sparse-regression PCE coefficients for each KL mode.

    Parameters
    ----------
    xi_r : ndarray, shape (N, n_p)
        Reduced parameter samples.
    modes : ndarray, shape (N_qoi, N)
        KL-mode values computed from full-parameter runs.
    """
    design = basis.evaluate(xi_r)
    out = np.empty((modes.shape[0], basis.size))
    for i, d in enumerate(modes):
        cfg_i = cfg or SparseRegressionConfig(tau=tau)
        try:
            out[i] = sparse_regress(design, d, cfg_i)
        except SparseNonConvergence as exc:
            logger.warning("mode %d: %s; keeping best iterate", i, exc)
            out[i] = exc.solution
    return out


def assemble_surrogate(kle: OutputKLE, coefficients, basis, reduced_set, n_full):
    """Package an output KLE and per-mode coefficient rows into a surrogate."""
    coefficients = np.atleast_2d(np.asarray(coefficients, dtype=float))
    if coefficients.shape[0] != kle.n_qoi:
        raise ValueError(f"need {kle.n_qoi} coefficient rows, got {coefficients.shape[0]}")
    return BispectralSurrogate(
        abscissae=kle.abscissae.copy(),
        mean=kle.mean.copy(),
        weights=kle.weights.copy(),
        eigenvalues=kle.retained_eigenvalues.copy(),
        eigenfunctions=kle.eigenfunctions.copy(),
        coefficients=coefficients,
        basis=basis,
        reduced_set=np.asarray(reduced_set, dtype=np.int64),
        n_full=int(n_full),
        kle_tail=kle.tail,
    )


def build_surrogate(kle, xi, reduced_set, n_ord, tau, *, cfg=None):
    """Fit mode PCEs on the reduced samples and assemble the surrogate.

    ``xi`` holds the FULL parameter samples matching ``kle.modes`` columns.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    reduced_set = np.asarray(reduced_set, dtype=np.int64)
    basis = build_basis(reduced_set.size, n_ord)
    coef = fit_mode_pces(xi[:, reduced_set], kle.modes, basis, tau, cfg=cfg)
    return assemble_surrogate(kle, coef, basis, reduced_set, xi.shape[1])


def evaluate_surrogate(surrogate, xi_r):
    return surrogate.evaluate(xi_r)
