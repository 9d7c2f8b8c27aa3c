"""Compare the compiled and NumPy flow kernels.

Times one residual/band assembly, one banded solve and one full nominal
simulation per backend, and checks that both produce the same numbers.

    python3 benchmarks/bench_kernels.py [--cells 50] [--repeat 200]
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from bispectral.flow import kernels
from bispectral.flow.params import FlowConfig
from bispectral.flow.solver import FlowProblem
from bispectral.random_input import MaterialFields


def _problem(n_cells):
    cfg = FlowConfig(n_cells=n_cells)
    fields = MaterialFields.homogeneous(n_cells, cfg.phi_bar, cfg.k_bar)
    prob = FlowProblem(fields, cfg)
    rng = np.random.default_rng(0)
    state = prob.initial_state()
    state.rho_h[:] = rng.uniform(0, 1.5 * cfg.fluid.henry_density * cfg.boundary.p_init, n_cells)
    state.p_l[:] += rng.uniform(-1e4, 1e4, n_cells)
    return prob, state


def _args(prob, state, module):
    acc = prob.accumulation(state)
    res = np.zeros(2 * prob.mesh.n_cells)
    ab = np.zeros((kernels.LDAB, 2 * prob.mesh.n_cells), order="F")
    return (state.p_l, state.rho_h, acc[0], acc[1], prob.phi, prob.h, prob.trans, prob.dist,
            prob.trans_r, prob.dist_r, 10.0 * 3.1536e7, 1e-13, prob.config.boundary.p_init,
            prob.consts, res, ab)


def bench_kernels(n_cells, repeat):
    prob, state = _problem(n_cells)
    backends = {"python": kernels.python_backend}
    compiled = kernels.compiled_backend()
    if compiled is not None:
        backends["cython"] = compiled
    results = {}
    for name, mod in backends.items():
        args = _args(prob, state, mod)
        t_asm = min(timeit.repeat(lambda: mod.assemble(*args), number=repeat, repeat=3)) / repeat
        res, ab = args[-2].copy(), args[-1].copy()
        t_sol = min(timeit.repeat(lambda: mod.solve(ab, res), number=repeat, repeat=3)) / repeat
        results[name] = (t_asm, t_sol, res, ab, mod.solve(ab, res))
        print(f"{name:>7}: assemble {t_asm * 1e6:9.1f} us   solve {t_sol * 1e6:9.1f} us")
    if len(results) == 2:
        p, c = results["python"], results["cython"]
        for idx, what in ((2, "residual"), (3, "band"), (4, "solution")):
            scale = max(np.max(np.abs(p[idx])), 1e-300)
            print(f"  max rel. difference in {what}: {np.max(np.abs(p[idx] - c[idx])) / scale:.2e}")
        print(f"  assemble speed-up: {p[0] / c[0]:.1f}x")


def bench_simulation(n_cells):
    code = (
        "import time; from bispectral.flow.params import FlowConfig;"
        "from bispectral.flow.solver import simulate; from bispectral.flow import kernels;"
        "from bispectral.random_input import MaterialFields;"
        f"c = FlowConfig(n_cells={n_cells}); f = MaterialFields.homogeneous({n_cells}, c.phi_bar, c.k_bar);"
        "t = time.perf_counter(); r = simulate(f, c); dt = time.perf_counter() - t;"
        "print(kernels.BACKEND, dt, r.inflow_saturation.values.max())"
    )
    for force in ("1", "0"):
        env = dict(os.environ, BISPECTRAL_PURE_PYTHON=force)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, dt, smax = out.stdout.split()
        print(f"{backend:>7}: nominal simulation {float(dt):7.3f} s   max S = {float(smax):.6e}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    print(f"kernels on {args.cells} cells (active backend: {kernels.BACKEND})")
    bench_kernels(args.cells, args.repeat)
    bench_simulation(args.cells)


if __name__ == "__main__":
    main()
