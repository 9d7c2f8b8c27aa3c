"""Downstream stages (screen, KLE, surrogate, validation) and the manifest."""
from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path

import numpy as np

from .. import screening
from ..analysis import relative_error
from ..output_kle import compute_output_kle
from ..pce.cv import kfold_select
from ..pce.surrogate import BispectralSurrogate, build_surrogate
from ..random_input import trapezoid_weights
from .config import STREAM_FOLDS, PipelineConfig, derived_seed
from .runner import split_train_validate
from .store import EnsembleStore, StoreError

logger = logging.getLogger(__name__)

STAGES = ("generate-samples", "simulate", "split", "screen", "kle", "build-surrogate")


def _ints(text):
    return np.array([int(t) for t in text.split()], dtype=np.int64)


def _join(arr):
    return " ".join(str(int(v)) for v in arr)


@dataclass
class PipelineManifest:
    """Stage status, config digest and per-QoI choices, kept as text."""

    config_hash: str = ""
    stages: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    qoi: dict = field(default_factory=dict)

    def mark(self, stage, path, validator):
        """Record ``stage`` complete only if ``validator(path)`` succeeds."""
        validator(path)
        self.stages[stage] = "complete"
        self.paths[stage] = str(path)

    def is_complete(self, stage):
        return self.stages.get(stage) == "complete"

    def to_text(self):
        p = configparser.ConfigParser()
        p["pipeline"] = {"config_hash": self.config_hash}
        p["stages"] = {s: self.stages.get(s, "pending") for s in STAGES}
        p["paths"] = dict(self.paths)
        p["split"] = {k: _join(v) for k, v in self.split.items()}
        for label, d in self.qoi.items():
            p[f"qoi:{label}"] = {k: (_join(v) if isinstance(v, np.ndarray) else str(v)) for k, v in d.items()}
        buf = StringIO()
        p.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text):
        p = configparser.ConfigParser()
        p.read_string(text)
        m = cls(config_hash=p.get("pipeline", "config_hash", fallback=""))
        if p.has_section("stages"):
            m.stages = {k: v for k, v in p.items("stages") if v != "pending"}
        if p.has_section("paths"):
            m.paths = dict(p.items("paths"))
        if p.has_section("split"):
            m.split = {k: _ints(v) for k, v in p.items("split")}
        for sec in p.sections():
            if sec.startswith("qoi:"):
                d = dict(p.items(sec))
                if "reduced_set" in d:
                    d["reduced_set"] = _ints(d["reduced_set"])
                m.qoi[sec[4:]] = d
        return m

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path):
        path = Path(path)
        return cls.from_text(path.read_text()) if path.exists() else cls()


def manifest_path(store_path):
    return Path(str(store_path) + ".pipeline")


def weights_for(store, label):
    return trapezoid_weights(store.grids[label])


def ensure_split(store, cfg: PipelineConfig, manifest=None):
    """Training/validation indices; reuses the persisted split when present."""
    if manifest is not None and "train" in manifest.split:
        return manifest.split["train"], manifest.split["validate"]
    ok = store.completed()
    n_train = min(cfg.ensemble.n_train, ok.size)
    n_val = min(cfg.ensemble.n_validate, ok.size - n_train)
    train, val = split_train_validate(ok, n_train, n_val, cfg.seed)
    if manifest is not None:
        manifest.split = {"train": train, "validate": val}
        manifest.stages["split"] = "complete"
    return train, val


def screen_stage(store: EnsembleStore, label, tol, indices):
    y = store.trajectories(label, indices)
    return screening.screen(store.xi[indices], y, weights_for(store, label), tol)


def kle_stage(store: EnsembleStore, label, indices, tol=0.99, n_qoi=None):
    y = store.trajectories(label, indices)
    return compute_output_kle(y, weights_for(store, label), tol, n_qoi=n_qoi, abscissae=store.grids[label])


@dataclass
class SurrogateBuild:
    surrogate: BispectralSurrogate
    cv: object = None
    validation_error: float = float("nan")


def surrogate_stage(store: EnsembleStore, label, train, reduced_set, cfg: PipelineConfig, *,
                    n_qoi=None, n_ord=None, tau=None, validate=None):
    """Output KLE on the training runs, CV if needed, sparse PCE per mode."""
    a = cfg.analysis
    kle = kle_stage(store, label, train, a.kle_tol, n_qoi)
    cv = None
    if n_ord is None or tau is None:
        orders = a.order_list() if n_ord is None else (int(n_ord),)
        taus = a.taus() if tau is None else (float(tau),)
        y = store.trajectories(label, train)
        cv = kfold_select(store.xi[train][:, reduced_set], y, kle.weights, kle.n_qoi,
                          orders=orders, taus=taus, k_folds=min(a.k_folds, train.size),
                          seed=derived_seed(cfg.seed, STREAM_FOLDS), max_basis=a.max_basis)
        n_ord, tau = cv.n_ord, cv.tau
    sur = build_surrogate(kle, store.xi[train], reduced_set, int(n_ord), float(tau))
    err = float("nan")
    if validate is not None and len(validate):
        err = relative_error(sur, store.xi[validate], store.trajectories(label, validate))
    logger.info("%s: N_qoi=%d N_ord=%d tau=%.2f e_rel=%.3e", label, sur.n_qoi, n_ord, tau, err)
    return SurrogateBuild(sur, cv, err)


def validate_store(path):
    EnsembleStore.load(path).validate()


def validate_surrogate(path):
    BispectralSurrogate.load(path)


def validate_text(path):
    if not Path(path).is_file() or Path(path).stat().st_size == 0:
        raise StoreError(f"missing or empty output {path}")
