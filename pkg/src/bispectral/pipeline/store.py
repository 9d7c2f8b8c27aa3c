"""Single-file binary ensemble store with a text sidecar manifest.

Layout (little-endian)::

    8s   magic b"BSPENS\\0\\0"
    u4   format version
    u4   header length H (bytes after this field up to the records)
    H    header: u8 seed, 8s RNG name, u4 N_p, u4 N_s, u4 n_labels,
         then per label: u2 name length, name (utf-8), u4 m, f8[m] grid
    records, one per sample:
         u1 status (0 pending, 1 ok, 2 failed), 7 pad bytes,
         f8[N_p] xi, per label f8[m] values, f8[4] diagnostics
    u4   CRC-32 of every preceding byte

Diagnostics are (accepted steps, rejected steps, fixed-point iterations,
wall time in seconds).
"""
from __future__ import annotations

import logging
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"BSPENS\0\0"
VERSION = 1
RNG_NAME = b"PCG64\0\0\0"
N_DIAG = 4
PENDING, OK, FAILED = 0, 1, 2


class StoreError(ValueError):
    """Corrupt, incompatible or inconsistent ensemble store."""


@dataclass(eq=False)
class EnsembleStore:
    """In-memory view of an ensemble; persisted whole by :meth:`save`.

    Attributes
    ----------
    seed : int
        Seed that generated ``xi``.
    xi : ndarray, shape (N_s, N_p)
    grids : dict
        Label -> abscissae (length m_label).
    values : dict
        Label -> (m_label, N_s) array, NaN for samples not yet simulated.
    status : ndarray of int8, shape (N_s,)
    diagnostics : ndarray, shape (N_s, 4)
    """

    seed: int
    xi: np.ndarray
    grids: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    status: np.ndarray = None
    diagnostics: np.ndarray = None

    def __post_init__(self):
        self.xi = np.ascontiguousarray(self.xi, dtype=float)
        if self.xi.ndim != 2:
            raise StoreError("xi must be (N_s, N_p)")
        n = self.n_samples
        if self.status is None:
            self.status = np.zeros(n, dtype=np.int8)
        if self.diagnostics is None:
            self.diagnostics = np.zeros((n, N_DIAG))
        for label, grid in self.grids.items():
            if label not in self.values:
                self.values[label] = np.full((len(grid), n), np.nan)
        self.validate()

    @property
    def n_samples(self):
        return self.xi.shape[0]

    @property
    def n_params(self):
        return self.xi.shape[1]

    @property
    def labels(self):
        return list(self.grids)

    def validate(self):
        n = self.n_samples
        if self.status.shape != (n,) or self.diagnostics.shape != (n, N_DIAG):
            raise StoreError("record count mismatch")
        if set(self.grids) != set(self.values):
            raise StoreError("grid and value labels differ")
        for label, grid in self.grids.items():
            g = np.asarray(grid, dtype=float)
            if np.any(np.diff(g) <= 0):
                raise StoreError(f"grid for {label!r} is not strictly increasing")
            if self.values[label].shape != (g.size, n):
                raise StoreError(f"values for {label!r} have the wrong shape")

    def add_label(self, label, grid):
        if label in self.grids:
            if not np.array_equal(self.grids[label], grid):
                raise StoreError(f"label {label!r} already present with another grid")
            return
        self.grids[label] = np.asarray(grid, dtype=float)
        self.values[label] = np.full((len(grid), self.n_samples), np.nan)

    def set_record(self, j, trajectories, diagnostics, ok=True):
        if ok:
            for label, v in trajectories.items():
                self.values[label][:, j] = v
        self.status[j] = OK if ok else FAILED
        self.diagnostics[j] = diagnostics

    def completed(self):
        return np.flatnonzero(self.status == OK)

    def failed(self):
        return np.flatnonzero(self.status == FAILED)

    def pending(self):
        return np.flatnonzero(self.status == PENDING)

    def trajectories(self, label, indices=None):
        """(m, N) values of ``label`` for ``indices`` (default: completed)."""
        idx = self.completed() if indices is None else np.asarray(indices)
        if label not in self.values:
            raise StoreError(f"unknown QoI label {label!r}; have {self.labels}")
        return self.values[label][:, idx]

    # serialization

    def to_bytes(self):
        names = [(label, np.asarray(self.grids[label], dtype="<f8")) for label in self.labels]
        head = [struct.pack("<Q8sIII", self.seed & (2**64 - 1), RNG_NAME, self.n_params,
                            self.n_samples, len(names))]
        for label, grid in names:
            raw = label.encode("utf-8")
            head.append(struct.pack("<H", len(raw)) + raw + struct.pack("<I", grid.size))
            head.append(grid.tobytes())
        header = b"".join(head)
        parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
        pad = b"\0" * 7
        for j in range(self.n_samples):
            parts.append(struct.pack("<B", int(self.status[j])) + pad)
            parts.append(self.xi[j].astype("<f8").tobytes())
            for label, _ in names:
                parts.append(self.values[label][:, j].astype("<f8").tobytes())
            parts.append(self.diagnostics[j].astype("<f8").tobytes())
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, raw):
        if len(raw) < 20 or raw[:8] != MAGIC:
            raise StoreError("not an ensemble store")
        body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
        if zlib.crc32(body) != crc:
            raise StoreError("checksum mismatch")
        version, hlen = struct.unpack_from("<II", body, 8)
        if version != VERSION:
            raise StoreError(f"unsupported store version {version}")
        off = 16
        seed, rng, n_p, n_s, n_labels = struct.unpack_from("<Q8sIII", body, off)
        if rng != RNG_NAME:
            raise StoreError(f"unknown RNG {rng!r}")
        off += struct.calcsize("<Q8sIII")
        grids = {}
        for _ in range(n_labels):
            (ln,) = struct.unpack_from("<H", body, off)
            off += 2
            label = body[off : off + ln].decode("utf-8")
            off += ln
            (m,) = struct.unpack_from("<I", body, off)
            off += 4
            grids[label] = np.frombuffer(body, "<f8", m, off).astype(float)
            off += 8 * m
        if off != 16 + hlen:
            raise StoreError("header length mismatch")
        sizes = [grids[label].size for label in grids]
        rec = 8 + 8 * (n_p + sum(sizes) + N_DIAG)
        if len(body) - off != rec * n_s:
            raise StoreError("record section length mismatch")
        status = np.empty(n_s, dtype=np.int8)
        xi = np.empty((n_s, n_p))
        values = {label: np.empty((grids[label].size, n_s)) for label in grids}
        diag = np.empty((n_s, N_DIAG))
        for j in range(n_s):
            status[j] = body[off]
            row = np.frombuffer(body, "<f8", (rec - 8) // 8, off + 8)
            xi[j] = row[:n_p]
            pos = n_p
            for label, m in zip(grids, sizes):
                values[label][:, j] = row[pos : pos + m]
                pos += m
            diag[j] = row[pos:]
            off += rec
        return cls(int(seed), xi, grids, values, status, diag)

    def manifest(self):
        lines = [
            "[store]",
            f"format_version = {VERSION}",
            f"seed = {self.seed}",
            f"rng = {RNG_NAME.rstrip(bytes(1)).decode()}",
            f"n_params = {self.n_params}",
            f"n_samples = {self.n_samples}",
            f"completed = {self.completed().size}",
            f"failed = {' '.join(str(int(j)) for j in self.failed())}",
            f"pending = {self.pending().size}",
        ]
        for label, grid in self.grids.items():
            lines += ["", f"[qoi:{label}]", f"m = {len(grid)}",
                      f"first = {grid[0]:.10g}", f"last = {grid[-1]:.10g}"]
        return "\n".join(lines) + "\n"

    def save(self, path):
        """Atomic write of the binary file and its ``.txt`` manifest."""
        self.validate()
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        os.replace(tmp, path)
        Path(str(path) + ".txt").write_text(self.manifest())
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise StoreError(f"no ensemble store at {path}")
        return cls.from_bytes(path.read_bytes())
