"""Command-line interface.

Exit codes: 0 success, 2 validation failure, 3 solver failure budget
exceeded.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .. import analysis
from ..flow.params import load_config as load_flow_config
from ..flow.solver import NonConvergence, simulate
from ..random_input import MaterialFields
from ..pce.surrogate import BispectralSurrogate, SnapshotError
from . import config as pconfig
from . import stages
from .runner import FailureBudgetExceeded, new_store, run_ensemble
from .store import EnsembleStore, StoreError

logger = logging.getLogger("bispectral")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 2, 3


class ValidationFailure(Exception):
    pass


def _load_cfg(args):
    base = pconfig.PROFILES[args.profile]
    cfg = pconfig.load(args.config, args.profile) if args.config else base
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _store_path(args):
    if not args.store:
        raise ValidationFailure("--store is required for this command")
    return Path(args.store)


def _open(args):
    path = _store_path(args)
    return path, EnsembleStore.load(path), stages.PipelineManifest.load(stages.manifest_path(path))


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def cmd_generate_samples(args, cfg):
    path = _store_path(args)
    if path.exists() and not args.force:
        raise ValidationFailure(f"{path} exists; pass --force to overwrite")
    store = new_store(cfg, args.n_samples)
    store.save(path)
    man = stages.PipelineManifest(config_hash=cfg.digest())
    man.mark("generate-samples", path, stages.validate_store)
    man.save(stages.manifest_path(path))
    if args.config is None:
        pconfig.save(cfg, str(path) + ".cfg")
    print(f"wrote {store.n_samples} samples of dimension {store.n_params} to {path}")


def _read_fields(path):
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] < 3:
        raise ValidationFailure("fields file needs columns: x porosity permeability")
    return data[:, 0], MaterialFields(data[:, 1].copy(), data[:, 2].copy())


def cmd_simulate(args, cfg):
    if args.fields:
        flow = load_flow_config(args.config) if args.config else cfg.flow
        x, fields = _read_fields(args.fields)
        if x.size != flow.n_cells:
            raise ValidationFailure(f"fields have {x.size} cells, config expects {flow.n_cells}")
        res = simulate(fields, flow)
        out = Path(args.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "inflow_gas_saturation.txt", res.inflow_saturation.to_text())
        _write(out / "outflow_gas_flux.txt", res.outflow_flux.to_text())
        for t_star, traj in res.snapshots.items():
            _write(out / f"spatial_gas_saturation_{t_star:g}.txt", traj.to_text())
        print(f"simulated {res.diagnostics['n_steps']} steps; outputs in {out}")
        return
    path, store, man = _open(args)
    try:
        run_ensemble(store, cfg, jobs=args.jobs, path=path)
    finally:
        man.config_hash = man.config_hash or cfg.digest()
        if store.pending().size == 0:
            man.mark("simulate", path, stages.validate_store)
        man.save(stages.manifest_path(path))
    print(f"{store.completed().size} completed, {store.failed().size} failed")


def _label(store, label):
    if label not in store.grids:
        raise ValidationFailure(f"unknown QoI {label!r}; choose from {', '.join(store.labels)}")
    return label


def _ready(store):
    if store.pending().size:
        raise ValidationFailure(f"{store.pending().size} samples not simulated yet")


def cmd_screen(args, cfg):
    path, store, man = _open(args)
    _ready(store)
    label = _label(store, args.qoi)
    train, _ = stages.ensure_split(store, cfg, man)
    tol = args.tol if args.tol is not None else cfg.screening_tol(label)
    rep = stages.screen_stage(store, label, tol, train)
    out = Path(args.out or f"{path}.{label}.screen.txt")
    _write(out, rep.to_text())
    man.qoi.setdefault(label, {}).update(tol=tol, reduced_set=rep.reduced_set, n_p=rep.n_reduced)
    man.mark("screen", out, stages.validate_text)
    man.save(stages.manifest_path(path))
    print(f"{label}: kept {rep.n_reduced} of {rep.indices.size} parameters -> {out}")


def cmd_kle(args, cfg):
    path, store, man = _open(args)
    _ready(store)
    label = _label(store, args.qoi)
    train, _ = stages.ensure_split(store, cfg, man)
    kle = stages.kle_stage(store, label, train, args.tol or cfg.analysis.kle_tol, args.nqoi)
    out = Path(args.out or f"{path}.{label}.spectrum.txt")
    _write(out, kle.spectrum_text())
    man.qoi.setdefault(label, {}).update(n_qoi=kle.n_qoi)
    man.mark("kle", out, stages.validate_text)
    man.save(stages.manifest_path(path))
    print(f"{label}: N_qoi={kle.n_qoi}, r_N={kle.rank_fractions[kle.n_qoi - 1]:.6f} -> {out}")


def _reduced_set(args, man, label):
    if args.kr:
        text = Path(args.kr).read_text()
        if "# reduced_set" in text:
            from ..screening import ScreeningReport

            return ScreeningReport.from_text(text).reduced_set
        return np.array([int(t) for t in text.split()], dtype=np.int64)
    if label in man.qoi and "reduced_set" in man.qoi[label]:
        return man.qoi[label]["reduced_set"]
    raise ValidationFailure("no reduced set: run `screen` first or pass --kr")


def cmd_build_surrogate(args, cfg):
    path, store, man = _open(args)
    _ready(store)
    label = _label(store, args.qoi)
    train, val = stages.ensure_split(store, cfg, man)
    kr = _reduced_set(args, man, label)
    build = stages.surrogate_stage(store, label, train, kr, cfg, n_qoi=args.nqoi,
                                   n_ord=args.nord, tau=args.tau, validate=val)
    out = Path(args.out or f"{path}.{label}.surrogate")
    build.surrogate.save(out)
    if build.cv is not None:
        _write(str(out) + ".cv.txt", build.cv.to_text())
    sur = build.surrogate
    man.qoi.setdefault(label, {}).update(
        reduced_set=sur.reduced_set, n_qoi=sur.n_qoi, n_ord=sur.basis.n_ord,
        tau=args.tau if build.cv is None else build.cv.tau, e_rel=build.validation_error,
        surrogate=str(out),
    )
    man.mark("build-surrogate", out, stages.validate_surrogate)
    man.save(stages.manifest_path(path))
    print(f"{label}: surrogate with N_qoi={sur.n_qoi}, N_ord={sur.basis.n_ord}, "
          f"validation e_rel={build.validation_error:.4e} -> {out}")


def _load_surrogate(path):
    try:
        return BispectralSurrogate.load(path)
    except FileNotFoundError as exc:
        raise ValidationFailure(str(exc)) from exc


def cmd_analyze(args, cfg):
    sur = _load_surrogate(args.surrogate)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    s = sur.abscissae
    wrote = []
    if args.corr or not (args.cross or args.sobol or args.pdf):
        np.savetxt(out / "covariance.txt", analysis.covariance_matrix(sur), header="c_f(s_k, s_l)")
        np.savetxt(out / "correlation.txt", analysis.correlation_matrix(sur), header="rho_f(s_k, s_l)")
        np.savetxt(out / "abscissae.txt", s)
        wrote += ["covariance.txt", "correlation.txt", "abscissae.txt"]
    if args.cross:
        other = _load_surrogate(args.cross)
        np.savetxt(out / "cross_correlation.txt", analysis.cross_correlation_matrix(sur, other),
                   header="rho_fg(s_k, s_l)")
        wrote.append("cross_correlation.txt")
    if args.sobol:
        rep = analysis.total_sobol(sur.evaluate, sur.n_reduced, args.samples or cfg.analysis.sobol_samples,
                                   weights=sur.weights, seed=pconfig.derived_seed(cfg.seed, pconfig.STREAM_SOBOL))
        text = rep.to_text() + "# parameter map: " + " ".join(str(int(k)) for k in sur.reduced_set) + "\n"
        _write(out / "sobol.txt", text)
        wrote.append("sobol.txt")
    if args.pdf:
        rng = np.random.default_rng(pconfig.derived_seed(cfg.seed, pconfig.STREAM_SOBOL))
        y = sur.evaluate(rng.standard_normal((args.samples or 100_000, sur.n_reduced)))
        if args.pdf == "max":
            obs = y.max(axis=0)
        elif args.pdf == "t_rise":
            obs = analysis.observables(s, y, y)[2]
            obs = obs[np.isfinite(obs)]
        else:
            raise ValidationFailure("--pdf takes 'max' or 't_rise'")
        _write(out / f"pdf_{args.pdf}.txt", analysis.estimate_pdf(obs).to_text())
        wrote.append(f"pdf_{args.pdf}.txt")
    print("wrote " + ", ".join(str(out / w) for w in wrote))


def cmd_predict(args, cfg):
    sur = _load_surrogate(args.surrogate)
    xi = np.loadtxt(args.xi, ndmin=2)
    if xi.shape[1] == sur.n_full:
        y = sur.evaluate_full(xi)
    elif xi.shape[1] == sur.n_reduced:
        y = sur.evaluate(xi)
    else:
        raise ValidationFailure(f"xi must have {sur.n_full} or {sur.n_reduced} columns")
    table = np.column_stack([sur.abscissae, y])
    if args.out:
        np.savetxt(args.out, table, header="abscissa " + " ".join(f"y{j}" for j in range(y.shape[1])))
        print(f"wrote {y.shape[1]} predictions to {args.out}")
    else:
        np.savetxt(sys.stdout, table)


def cmd_report(args, cfg):
    path, store, man = _open(args)
    lines = [f"store: {path}", f"samples: {store.n_samples} (dimension {store.n_params})",
             f"completed: {store.completed().size}, failed: {store.failed().size}, "
             f"pending: {store.pending().size}", "stages:"]
    lines += [f"  {s}: {man.stages.get(s, 'pending')}" for s in stages.STAGES]
    for label, d in man.qoi.items():
        items = ", ".join(f"{k}={stages._join(v) if isinstance(v, np.ndarray) else v}" for k, v in d.items())
        lines.append(f"{label}: {items}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(args.out, text)
    print(text, end="")


def build_parser():
    top = argparse.ArgumentParser(prog="bispectral", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--store", help="ensemble store file")
    common.add_argument("--profile", choices=sorted(pconfig.PROFILES), default="desk")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-samples", parents=[common], help="draw parameter samples")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_generate_samples)

    p = sub.add_parser("simulate", parents=[common], help="run the forward model")
    p.add_argument("--fields", help="columns x porosity permeability for a single run")
    p.add_argument("--out", help="output directory for a single run")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("screen", cmd_screen, "parameter screening"),
                                 ("kle", cmd_kle, "output KL expansion")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--ensemble", dest="store", help="alias of --store")
        p.add_argument("--qoi", required=True)
        p.add_argument("--tol", type=float)
        p.add_argument("--out")
        if name == "kle":
            p.add_argument("--nqoi", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("build-surrogate", parents=[common], help="fit a bispectral surrogate")
    p.add_argument("--ensemble", dest="store", help="alias of --store")
    p.add_argument("--qoi", required=True)
    p.add_argument("--kr", help="screening report or whitespace-separated indices")
    p.add_argument("--nord", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--nqoi", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_surrogate)

    p = sub.add_parser("analyze", parents=[common], help="surrogate statistics")
    p.add_argument("--surrogate", required=True)
    p.add_argument("--corr", action="store_true")
    p.add_argument("--cross", help="second surrogate for cross-correlation")
    p.add_argument("--sobol", action="store_true")
    p.add_argument("--pdf", choices=["max", "t_rise"])
    p.add_argument("--samples", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("predict", parents=[common], help="evaluate a surrogate")
    p.add_argument("--surrogate", required=True)
    p.add_argument("--xi", required=True, help="text matrix of parameter vectors, one per row")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", parents=[common], help="summarize pipeline state")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return top


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_cfg(args)
        args.func(args, cfg)
    except FailureBudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except NonConvergence as exc:
        print(f"error: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValidationFailure, StoreError, SnapshotError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
