"""Ensemble generation and forward-model fan-out."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache

import numpy as np

from .. import random_input as ri
from ..flow.solver import NonConvergence, simulate
from .config import (
    QOI_INFLOW,
    QOI_OUTFLOW,
    STREAM_SAMPLES,
    STREAM_SPLIT,
    PipelineConfig,
    derived_seed,
    spatial_label,
)
from .store import EnsembleStore

logger = logging.getLogger(__name__)


class FailureBudgetExceeded(RuntimeError):
    """More forward runs failed than the configured fraction allows."""


@lru_cache(maxsize=8)
def _kle_cached(length, corr, nodes, n_params):
    x = ri.uniform_nodes(length, nodes)
    return ri.build_input_kle(ri.ExponentialKernel(corr, length), x, ri.trapezoid_weights(x), n_params)


def input_kle(cfg: PipelineConfig):
    r = cfg.random_input
    return _kle_cached(cfg.flow.length, r.correlation_length, r.kle_nodes, r.n_params)


def fields_for(cfg: PipelineConfig, xi):
    kle = input_kle(cfg)
    transform = ri.calibrate_beta(cfg.flow.phi_bar, cfg.random_input.alpha_beta)
    centers = cfg.flow.mesh().cell_centers
    return ri.material_fields(kle, xi, centers, transform, cfg.flow.phi_bar, cfg.flow.k_bar)


def generate_samples(seed, n_samples, n_params):
    """I.i.d. standard normal coefficient vectors, shape (N_s, N_p)."""
    if n_samples < 1 or n_params < 1:
        raise ValueError("need positive sample and parameter counts")
    rng = np.random.default_rng(derived_seed(seed, STREAM_SAMPLES))
    return rng.standard_normal((n_samples, n_params))


def new_store(cfg: PipelineConfig, n_samples=None):
    """Fresh store with samples drawn from the configured seed."""
    n = cfg.ensemble.n_samples if n_samples is None else n_samples
    xi = generate_samples(cfg.seed, n, cfg.random_input.n_params)
    store = EnsembleStore(cfg.seed, xi)
    t = cfg.flow.output_times()
    store.add_label(QOI_INFLOW, t)
    store.add_label(QOI_OUTFLOW, t)
    for t_star in cfg.flow.snapshot_times:
        store.add_label(spatial_label(t_star), cfg.flow.mesh().cell_centers)
    return store


def run_one(cfg: PipelineConfig, xi):
    """Forward run for one coefficient vector; returns (ok, trajectories, diagnostics)."""
    clock = time.perf_counter()
    try:
        res = simulate(fields_for(cfg, xi), cfg.flow)
    except (NonConvergence, ValueError, FloatingPointError) as exc:
        logger.warning("forward run failed: %s", exc)
        return False, {}, np.array([0.0, 0.0, 0.0, time.perf_counter() - clock])
    out = {QOI_INFLOW: res.inflow_saturation.values, QOI_OUTFLOW: res.outflow_flux.values}
    for t_star in cfg.flow.snapshot_times:
        out[spatial_label(t_star)] = res.qoi("spatial_gas_saturation", t_star).values
    d = res.diagnostics
    diag = np.array([d["n_steps"], d["n_failures"], d["n_iterations"], time.perf_counter() - clock], float)
    return True, out, diag


def _run_task(args):
    cfg, j, xi = args
    return j, run_one(cfg, xi)


def run_ensemble(store, cfg: PipelineConfig, *, jobs=None, path=None, checkpoint=16):
    """Simulate every pending sample; completed or failed ones are skipped.

    Failed samples are recorded and excluded downstream. When ``path`` is
    given the store is rewritten after every ``checkpoint`` records.

    Raises
    ------
    FailureBudgetExceeded
        If the failed fraction exceeds ``cfg.ensemble.max_failure_fraction``.
    """
    todo = store.pending()
    jobs = cfg.ensemble.jobs if jobs is None else jobs
    if todo.size:
        logger.info("simulating %d pending samples with %d job(s)", todo.size, jobs)
    tasks = [(cfg, int(j), store.xi[j]) for j in todo]

    def consume(results):
        for count, (j, (ok, traj, diag)) in enumerate(results, start=1):
            store.set_record(j, traj, diag, ok)
            if path is not None and count % checkpoint == 0:
                store.save(path)

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            consume(pool.map(_run_task, tasks))
    else:
        consume(map(_run_task, tasks))
    if path is not None:
        store.save(path)
    frac = store.failed().size / max(store.n_samples, 1)
    if frac > cfg.ensemble.max_failure_fraction:
        raise FailureBudgetExceeded(
            f"{store.failed().size} of {store.n_samples} runs failed "
            f"(budget {cfg.ensemble.max_failure_fraction:.0%})"
        )
    return store


def split_train_validate(candidates, n_train, n_validate, seed):
    """Disjoint sorted training/validation index sets from a seeded shuffle.

    ``candidates`` lists usable sample indices (failed runs excluded).
    """
    cand = np.asarray(candidates, dtype=np.int64)
    if n_train < 1 or n_validate < 0 or n_train + n_validate > cand.size:
        raise ValueError(f"cannot split {cand.size} samples into {n_train} + {n_validate}")
    perm = np.random.default_rng(derived_seed(seed, STREAM_SPLIT)).permutation(cand)
    return np.sort(perm[:n_train]), np.sort(perm[n_train : n_train + n_validate])
