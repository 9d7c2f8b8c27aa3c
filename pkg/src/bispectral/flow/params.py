"""Physical parameters, mesh and run configuration for the 1D H2/water model.

Table values follow the MoMaS gas-migration benchmark (test case 1).
Everything is stored in SI units; times at the interface are in years.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

YEAR = 3.1536e7  # s
GAS_CONSTANT = 8.314462618  # J / (mol K)


@dataclass(frozen=True)
class FluidParams:
    mu_l: float = 1e-3  # Pa s
    mu_g: float = 9e-6  # Pa s
    henry: float = 7.65e-6  # mol / (Pa m^3)
    molar_mass: float = 2e-3  # kg / mol
    rho_w: float = 1e3  # kg / m^3
    diffusion: float = 3e-9  # m^2 / s
    n_vg: float = 1.54
    p_r: float = 2e6  # Pa
    s_lr: float = 0.4
    s_gr: float = 0.0
    c_v: float = 52.51
    temperature: float = 299.39  # K, chosen so that 1/(H R T) matches c_v

    def __post_init__(self):
        if not self.n_vg > 1:
            raise ValueError("van Genuchten n must exceed 1")
        if not self.s_lr + self.s_gr < 1:
            raise ValueError("residual saturations must sum below 1")
        implied = 1.0 / (self.henry * GAS_CONSTANT * self.temperature)
        if abs(implied - self.c_v) > 5e-3 * self.c_v:
            raise ValueError(
                f"c_v={self.c_v} inconsistent with 1/(H R T)={implied:.3f} at T={self.temperature}"
            )

    @property
    def upsilon(self):
        return 1.0 - 1.0 / self.n_vg

    @property
    def henry_density(self):
        """M^h H^h: dissolved density per unit gas pressure [kg m^-3 Pa^-1]."""
        return self.molar_mass * self.henry


@dataclass(frozen=True)
class BoundarySpec:
    q_h: float = 5.57e-6  # kg / m^2 / yr, left face
    t_inj: float = 5e5  # yr
    p_init: float = 1e6  # Pa, right Dirichlet and initial pressure

    def __post_init__(self):
        if self.q_h < 0:
            raise ValueError("q_h must be nonnegative")

    def injection_rate(self, t_years):
        """Left-face hydrogen flux in kg m^-2 s^-1 active at time ``t_years``."""
        return self.q_h / YEAR if t_years <= self.t_inj * (1 + 1e-12) else 0.0


@dataclass(frozen=True, eq=False)
class Mesh1D:
    cell_centers: np.ndarray
    cell_widths: np.ndarray
    face_positions: np.ndarray

    @classmethod
    def uniform(cls, length, n_cells):
        faces = np.linspace(0.0, length, n_cells + 1)
        return cls(0.5 * (faces[1:] + faces[:-1]), np.diff(faces), faces)

    def __post_init__(self):
        if np.any(self.cell_widths <= 0):
            raise ValueError("cell widths must be positive")
        if np.any(np.diff(self.cell_centers) <= 0):
            raise ValueError("cell centers must be strictly increasing")

    @property
    def n_cells(self):
        return self.cell_centers.size

    @property
    def length(self):
        return float(self.face_positions[-1] - self.face_positions[0])


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-8
    max_iter: int = 50
    relaxation: float = 0.7
    dt_init: float = 1.0  # yr
    dt_min: float = 1e-2  # yr
    dt_max: float = 5e3  # yr
    dt_growth: float = 1.25
    growth_iter: int = 10


@dataclass(frozen=True)
class FlowConfig:
    """Everything a single forward run needs apart from the material fields."""

    fluid: FluidParams = field(default_factory=FluidParams)
    boundary: BoundarySpec = field(default_factory=BoundarySpec)
    solver: SolverSettings = field(default_factory=SolverSettings)
    length: float = 200.0  # m
    n_cells: int = 50
    t_final: float = 1e6  # yr
    phi_bar: float = 0.15
    k_bar: float = 5e-20  # m^2
    n_output: int = 128
    snapshot_times: tuple = (100_099.0, 300_091.0, 600_043.0)
    gravity: float = 0.0  # m / s^2, along +x
    source_w: float = 0.0  # kg / m^3 / s
    source_h: float = 0.0  # kg / m^3 / s

    def mesh(self):
        return Mesh1D.uniform(self.length, self.n_cells)

    def output_times(self):
        return np.linspace(0.0, self.t_final, self.n_output)

    def replace(self, **changes):
        """Copy with top-level or dotted (``"boundary.q_h"``) overrides."""
        top = {}
        nested = {}
        for key, value in changes.items():
            if "." in key:
                section, name = key.split(".", 1)
                nested.setdefault(section, {})[name] = value
            else:
                top[key] = value
        for section, values in nested.items():
            top[section] = dataclasses.replace(getattr(self, section), **values)
        return dataclasses.replace(self, **top)


_SECTIONS = {"fluid": FluidParams, "boundary": BoundarySpec, "solver": SolverSettings}


def _coerce(value, default):
    if isinstance(default, tuple):
        return tuple(float(v) for v in value.replace(",", " ").split())
    if isinstance(default, bool):
        return value.lower() in {"1", "true", "yes"}
    if isinstance(default, int):
        return int(value)
    return float(value)


def config_to_text(cfg):
    parser = configparser.ConfigParser()
    parser["domain"] = {
        f.name: _fmt(getattr(cfg, f.name))
        for f in dataclasses.fields(cfg)
        if f.name not in _SECTIONS
    }
    for name in _SECTIONS:
        section = getattr(cfg, name)
        parser[name] = {f.name: _fmt(getattr(section, f.name)) for f in dataclasses.fields(section)}
    from io import StringIO

    buf = StringIO()
    parser.write(buf)
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, tuple):
        return " ".join(repr(float(x)) for x in v)
    return repr(v)


def config_from_text(text):
    parser = configparser.ConfigParser()
    parser.read_string(text)
    base = FlowConfig()
    changes = {}
    for name, cls in _SECTIONS.items():
        if parser.has_section(name):
            defaults = cls()
            kw = {}
            for key, value in parser.items(name):
                if not hasattr(defaults, key):
                    raise KeyError(f"unknown key {name}.{key}")
                kw[key] = _coerce(value, getattr(defaults, key))
            changes[name] = cls(**kw)
    if parser.has_section("domain"):
        for key, value in parser.items("domain"):
            if not hasattr(base, key) or key in _SECTIONS:
                raise KeyError(f"unknown key domain.{key}")
            changes[key] = _coerce(value, getattr(base, key))
    return dataclasses.replace(base, **changes)


def load_config(path):
    return config_from_text(Path(path).read_text())


def save_config(cfg, path):
    Path(path).write_text(config_to_text(cfg))
