"""Pipeline configuration, run profiles and seed derivation.

One ``key = value`` file holds the flow sections ([domain], [fluid],
[boundary], [solver]) next to the pipeline sections below; unknown keys
are rejected.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path

import numpy as np

from ..flow.params import FlowConfig, config_from_text, config_to_text

QOI_INFLOW = "inflow_gas_saturation"
QOI_OUTFLOW = "outflow_gas_flux"
QOI_SPATIAL = "spatial_gas_saturation"

# independent RNG streams derived from the master seed
STREAM_SAMPLES, STREAM_SPLIT, STREAM_FOLDS, STREAM_SOBOL = range(4)


def derived_seed(seed, stream):
    """64-bit integer seed for a named stream of the master seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def spatial_label(t_star):
    return f"{QOI_SPATIAL}@{t_star:g}"


def qoi_kind(label):
    """``"flux"`` or ``"saturation"``; picks default screening tolerances."""
    return "flux" if label.startswith(QOI_OUTFLOW) else "saturation"


@dataclass(frozen=True)
class RandomInputSettings:
    correlation_length: float = 10.0  # m
    n_params: int = 40
    kle_nodes: int = 401
    alpha_beta: float = 20.0


@dataclass(frozen=True)
class EnsembleSettings:
    n_samples: int = 128
    n_train: int = 96
    n_validate: int = 32
    max_failure_fraction: float = 0.1
    jobs: int = 1


@dataclass(frozen=True)
class AnalysisSettings:
    tol_saturation: float = 0.002
    tol_flux: float = 0.02
    kle_tol: float = 0.99
    orders: tuple = (1.0, 2.0, 3.0, 4.0)
    tau_min: float = 1.0
    tau_max: float = 4.0
    tau_step: float = 0.1
    k_folds: int = 10
    sobol_samples: int = 10000
    max_basis: int = 2000

    def taus(self):
        n = int(round((self.tau_max - self.tau_min) / self.tau_step)) + 1
        return tuple(np.round(self.tau_min + self.tau_step * np.arange(n), 10))

    def order_list(self):
        return tuple(int(o) for o in self.orders)


@dataclass(frozen=True)
class PipelineConfig:
    flow: FlowConfig = field(default_factory=FlowConfig)
    random_input: RandomInputSettings = field(default_factory=RandomInputSettings)
    ensemble: EnsembleSettings = field(default_factory=EnsembleSettings)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    seed: int = 20240917

    def screening_tol(self, label):
        a = self.analysis
        return a.tol_flux if qoi_kind(label) == "flux" else a.tol_saturation

    def qoi_labels(self):
        return [QOI_INFLOW, QOI_OUTFLOW] + [spatial_label(t) for t in self.flow.snapshot_times]

    def digest(self):
        return hashlib.sha256(to_text(self).encode()).hexdigest()[:16]


PROFILES = {
    # small ensembles leave a regression-noise floor near 0.005 in every index
    "desk": PipelineConfig(analysis=AnalysisSettings(tol_saturation=0.01)),
    "paper": PipelineConfig(
        flow=FlowConfig(n_cells=100),
        random_input=RandomInputSettings(n_params=100),
        ensemble=EnsembleSettings(n_samples=550, n_train=350, n_validate=200),
    ),
}

_PIPE_SECTIONS = {
    "random_input": RandomInputSettings,
    "ensemble": EnsembleSettings,
    "analysis": AnalysisSettings,
}


def _fmt(v):
    if isinstance(v, tuple):
        return " ".join(repr(float(x)) for x in v)
    return repr(v)


def _coerce(value, default):
    if isinstance(default, tuple):
        return tuple(float(v) for v in value.replace(",", " ").split())
    if isinstance(default, int) and not isinstance(default, bool):
        return int(value)
    return float(value)


def to_text(cfg):
    parser = configparser.ConfigParser()
    parser["pipeline"] = {"seed": str(cfg.seed)}
    for name in _PIPE_SECTIONS:
        sec = getattr(cfg, name)
        parser[name] = {f.name: _fmt(getattr(sec, f.name)) for f in dataclasses.fields(sec)}
    buf = StringIO()
    parser.write(buf)
    return config_to_text(cfg.flow) + buf.getvalue()


def from_text(text, base=None):
    """Parse a config file; keys absent from the file keep ``base`` values."""
    base = base or PROFILES["desk"]
    parser = configparser.ConfigParser()
    parser.read_string(text)
    known = set(_PIPE_SECTIONS) | {"pipeline", "domain", "fluid", "boundary", "solver"}
    for section in parser.sections():
        if section not in known:
            raise KeyError(f"unknown config section [{section}]")
    flow_text = StringIO()
    flow_parser = configparser.ConfigParser()
    flow_parser.read_string(config_to_text(base.flow))
    for section in ("domain", "fluid", "boundary", "solver"):
        if parser.has_section(section):
            for key, value in parser.items(section):
                if not flow_parser.has_option(section, key):
                    raise KeyError(f"unknown key {section}.{key}")
                flow_parser[section][key] = value
    flow_parser.write(flow_text)
    changes = {"flow": config_from_text(flow_text.getvalue())}
    for name, cls in _PIPE_SECTIONS.items():
        if parser.has_section(name):
            current = getattr(base, name)
            kw = {}
            for key, value in parser.items(name):
                if not hasattr(current, key):
                    raise KeyError(f"unknown key {name}.{key}")
                kw[key] = _coerce(value, getattr(current, key))
            changes[name] = dataclasses.replace(current, **kw)
    if parser.has_section("pipeline"):
        for key, value in parser.items("pipeline"):
            if key != "seed":
                raise KeyError(f"unknown key pipeline.{key}")
            changes["seed"] = int(value)
    return dataclasses.replace(base, **changes)


def load(path, profile="desk"):
    return from_text(Path(path).read_text(), PROFILES[profile])


def save(cfg, path):
    Path(path).write_text(to_text(cfg))
