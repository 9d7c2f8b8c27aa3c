"""Implicit-Euler finite-volume solver for H2 injection into a water-saturated column.

Primary unknowns are the liquid pressure and the dissolved hydrogen density.
Where the dissolved density exceeds the Henry limit at the local liquid
pressure a gas phase exists, with ``p_g = rho / (M H)`` and the liquid
saturation given by inverting the capillary law; elsewhere ``s_g = 0``. No
variable switching is needed.

Each time step is solved by a modified Picard iteration: face mobilities,
upwind densities and diffusion coefficients are lagged, the accumulation
term is linearized about the current iterate.
"""
from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .params import YEAR, FlowConfig

log = logging.getLogger(__name__)

QOI_LABELS = ("inflow_gas_saturation", "outflow_gas_flux", "spatial_gas_saturation")


class NonConvergence(RuntimeError):
    def __init__(self, iterations, residual_norm, message=""):
        self.iterations = iterations
        self.residual_norm = residual_norm
        super().__init__(message or f"no convergence after {iterations} iterations "
                                    f"(residual {residual_norm:.3e})")


class DivergedIterate(NonConvergence):
    pass


@dataclass(eq=False)
class FlowState:
    p_l: np.ndarray
    rho_h: np.ndarray
    t: float = 0.0  # yr

    def copy(self):
        return FlowState(self.p_l.copy(), self.rho_h.copy(), self.t)


@dataclass(frozen=True, eq=False)
class QoITrajectory:
    abscissae: np.ndarray
    values: np.ndarray
    label: str

    def __post_init__(self):
        if self.abscissae.shape != self.values.shape:
            raise ValueError("abscissae and values must have the same shape")
        if np.any(np.diff(self.abscissae) <= 0):
            raise ValueError("abscissae must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trajectory has non-finite values")

    def to_text(self):
        lines = [f"# {self.label}", "# abscissa value"]
        lines += [f"{s:.10e} {v:.10e}" for s, v in zip(self.abscissae, self.values)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        label = text.splitlines()[0].lstrip("# ").strip()
        data = np.loadtxt(text.splitlines(), comments="#", ndmin=2)
        return cls(data[:, 0].copy(), data[:, 1].copy(), label)


class FlowProblem:
    """Geometry, material data and packed constants for one realization."""

    def __init__(self, fields, config=None):
        self.config = config or FlowConfig()
        cfg = self.config
        self.mesh = cfg.mesh()
        if fields.porosity.size != self.mesh.n_cells:
            raise ValueError("fields do not match the mesh")
        self.fields = fields
        self.phi = np.ascontiguousarray(fields.porosity, dtype=float)
        k = np.ascontiguousarray(fields.permeability, dtype=float)
        h = np.ascontiguousarray(self.mesh.cell_widths, dtype=float)
        self.h = h
        self.dist = np.ascontiguousarray(np.diff(self.mesh.cell_centers))
        # harmonic averaging of the intrinsic permeability
        self.trans = np.ascontiguousarray(1.0 / (0.5 * h[:-1] / k[:-1] + 0.5 * h[1:] / k[1:]))
        self.dist_r = 0.5 * h[-1]
        self.trans_r = k[-1] / self.dist_r
        f = cfg.fluid
        self.consts = np.array([
            f.rho_w, f.mu_l, f.mu_g, f.c_v, f.henry_density, f.diffusion,
            f.n_vg, f.p_r, f.s_lr, f.s_gr, cfg.gravity, cfg.source_w, cfg.source_h,
        ])
        self.rho_ref = f.henry_density * cfg.boundary.p_init
        n = self.mesh.n_cells
        self._res = np.zeros(2 * n)
        self._ab = np.zeros((kernels.LDAB, 2 * n), order="F")

    @property
    def n_cells(self):
        return self.mesh.n_cells

    def initial_state(self):
        n = self.n_cells
        return FlowState(np.full(n, self.config.boundary.p_init), np.zeros(n), 0.0)

    def accumulation(self, state):
        return kernels.accumulation(state.p_l, state.rho_h, self.phi, self.h, self.consts)

    def assemble(self, state, acc_old, dt_years, t_new):
        """Residual and band matrix at ``state``; returns right-face fluxes."""
        q = self.config.boundary.injection_rate(t_new)
        return kernels.assemble(
            state.p_l, state.rho_h, acc_old[0], acc_old[1], self.phi, self.h,
            self.trans, self.dist, self.trans_r, self.dist_r, dt_years * YEAR, q,
            self.config.boundary.p_init, self.consts, self._res, self._ab,
        )

    def scaled_residual(self, dt_years):
        """Residual as saturation (water) and Henry-relative density (hydrogen) errors."""
        dt = dt_years * YEAR
        base = self.phi * self.h / dt
        r = self._res
        sw = np.abs(r[0::2]) / (base * self.config.fluid.rho_w)
        sh = np.abs(r[1::2]) / (base * self.rho_ref)
        return max(sw.max(), sh.max())

    def derived(self, state):
        cp = kernels.cell_properties(state.p_l, state.rho_h, self.consts)
        return {"s_g": 1.0 - cp["s_l"], "p_g": cp["pg"], "s_l": cp["s_l"]}

    def hydrogen_mass(self, state):
        return float(np.sum(self.accumulation(state)[1]))

    def water_mass(self, state):
        return float(np.sum(self.accumulation(state)[0]))


def assemble_residual(state, prev_state, dt, fields, config=None):
    """Per-cell discrete balances, shape (n_cells, 2) as (water, hydrogen).

    ``dt`` is in years; the residual is in kg m^-2 s^-1. The boundary flux
    is evaluated at ``prev_state.t + dt``.
    """
    problem = FlowProblem(fields, config)
    acc_old = problem.accumulation(prev_state)
    problem.assemble(state, acc_old[:2], dt, prev_state.t + dt)
    res = problem._res.reshape(-1, 2).copy()
    if not np.all(np.isfinite(res)):
        raise DivergedIterate(0, np.inf, "non-finite residual")
    return res


@dataclass
class StepInfo:
    iterations: int
    residual: float
    flux_right: tuple


def step_implicit_euler(problem, prev_state, dt, acc_old=None):
    """Advance ``prev_state`` by ``dt`` years. Raises NonConvergence."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    s = problem.config.solver
    if acc_old is None:
        acc_old = problem.accumulation(prev_state)[:2]
    t_new = prev_state.t + dt
    state = FlowState(prev_state.p_l.copy(), prev_state.rho_h.copy(), t_new)
    last = np.inf
    omega = 1.0
    for it in range(1, s.max_iter + 1):
        flux = problem.assemble(state, acc_old, dt, t_new)
        norm = problem.scaled_residual(dt)
        if not np.isfinite(norm):
            raise DivergedIterate(it, norm, "non-finite residual")
        if norm < s.tol:
            return state, StepInfo(it, norm, flux)
        if norm > last:
            omega = s.relaxation
        last = norm
        delta = kernels.solve(problem._ab, -problem._res)
        if not np.all(np.isfinite(delta)):
            raise DivergedIterate(it, norm, "singular linearization")
        state.p_l += omega * delta[0::2]
        state.rho_h += omega * delta[1::2]
        np.maximum(state.rho_h, 0.0, out=state.rho_h)
    raise NonConvergence(s.max_iter, last)


@dataclass
class SimulationResult:
    inflow_saturation: QoITrajectory
    outflow_flux: QoITrajectory
    snapshots: dict
    times: np.ndarray
    history: dict
    diagnostics: dict = field(default_factory=dict)

    def qoi(self, label, t_star=None):
        if label == "inflow_gas_saturation":
            return self.inflow_saturation
        if label == "outflow_gas_flux":
            return self.outflow_flux
        if label == "spatial_gas_saturation":
            key = min(self.snapshots, key=lambda t: abs(t - t_star)) if t_star is not None else None
            if key is None or (t_star is not None and abs(key - t_star) > 1e-6 * max(1.0, t_star)):
                raise KeyError(f"no snapshot at t*={t_star}")
            return self.snapshots[key]
        raise KeyError(label)


def simulate(fields, config=None, *, record_states=False):
    """Run from t = 0 to T_f and return the QoIs on the shared output grids.

    Times are in years. The outflow flux is the total hydrogen mass flux
    (both phases plus diffusion) through x = L in kg m^-2 yr^-1; the part
    carried by the gas phase alone is kept in ``history``.
    """
    problem = FlowProblem(fields, config)
    cfg = problem.config
    s = cfg.solver
    bc = cfg.boundary
    t_final = cfg.t_final

    stops = sorted({t for t in (bc.t_inj, *cfg.snapshot_times, t_final) if 0 < t <= t_final})
    state = problem.initial_state()
    acc = problem.accumulation(state)
    h_mass0 = float(acc[1].sum())
    w_mass0 = float(acc[0].sum())

    times = [0.0]
    sg_in = [0.0]
    q_out = [0.0]
    pl_in = [state.p_l[0]]
    pg_in = [state.p_l[0]]
    wf_out = [0.0]
    gf_out = [0.0]
    snapshots = {}
    states = [] if record_states else None
    injected = 0.0
    outflow_h = 0.0
    outflow_w = 0.0
    n_fail = 0
    n_iter = 0
    dt = s.dt_init
    clock = _time.perf_counter()

    next_stop = 0
    while state.t < t_final * (1 - 1e-14):
        while stops[next_stop] <= state.t * (1 + 1e-14):
            next_stop += 1
        target = stops[next_stop]
        dt_try = min(dt, target - state.t)
        hit = dt_try >= target - state.t
        try:
            new, info = step_implicit_euler(problem, state, dt_try, acc[:2])
        except NonConvergence as exc:
            n_fail += 1
            dt = dt_try * 0.5
            log.debug("t=%.4g yr: %s; dt -> %.3g", state.t, exc, dt)
            if dt < s.dt_min:
                raise NonConvergence(exc.iterations, exc.residual_norm,
                                     f"time step underflow at t={state.t:.6g} yr") from exc
            continue
        if hit:
            new.t = target
        q_in = bc.injection_rate(new.t)
        fw, fh, fg = info.flux_right
        injected += q_in * dt_try * YEAR
        outflow_h += fh * dt_try * YEAR
        outflow_w += fw * dt_try * YEAR
        n_iter += info.iterations
        state = new
        acc = problem.accumulation(state)
        der = problem.derived(state)

        times.append(state.t)
        sg_in.append(der["s_g"][0])
        q_out.append(fh * YEAR)
        gf_out.append(fg * YEAR)
        pl_in.append(state.p_l[0])
        pg_in.append(der["p_g"][0])
        wf_out.append(fw * YEAR)
        if record_states:
            states.append(state.copy())
        for t_star in cfg.snapshot_times:
            if abs(state.t - t_star) <= 1e-9 * max(t_star, 1.0):
                snapshots[float(t_star)] = QoITrajectory(
                    problem.mesh.cell_centers.copy(), der["s_g"].copy(), "spatial_gas_saturation"
                )
        if info.iterations <= s.growth_iter and dt_try >= dt * (1 - 1e-12):
            dt = min(dt * s.dt_growth, s.dt_max)

    times = np.array(times)
    out_t = cfg.output_times()
    acc = problem.accumulation(state)
    diagnostics = {
        "n_steps": len(times) - 1,
        "n_failures": n_fail,
        "n_iterations": n_iter,
        "hydrogen_injected": injected,
        "hydrogen_outflow": outflow_h,
        "hydrogen_initial": h_mass0,
        "hydrogen_final": float(acc[1].sum()),
        "water_initial": w_mass0,
        "water_final": float(acc[0].sum()),
        "water_outflow": outflow_w,
        "runtime": _time.perf_counter() - clock,
        "backend": kernels.BACKEND,
    }
    history = {
        "inflow_gas_saturation": np.array(sg_in),
        "outflow_gas_flux": np.array(q_out),
        "inflow_liquid_pressure": np.array(pl_in),
        "inflow_gas_pressure": np.array(pg_in),
        "outflow_water_flux": np.array(wf_out),
        "outflow_gas_phase_flux": np.array(gf_out),
        "final_state": state,
    }
    if record_states:
        history["states"] = states
    return SimulationResult(
        inflow_saturation=QoITrajectory(out_t, np.interp(out_t, times, sg_in), "inflow_gas_saturation"),
        outflow_flux=QoITrajectory(out_t, np.interp(out_t, times, q_out), "outflow_gas_flux"),
        snapshots=snapshots,
        times=times,
        history=history,
        diagnostics=diagnostics,
    )
