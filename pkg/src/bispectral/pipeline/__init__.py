"""Orchestration, persistence and command-line interface."""
from .config import PROFILES, PipelineConfig
from .runner import generate_samples, new_store, run_ensemble, split_train_validate
from .store import EnsembleStore

__all__ = [
    "PROFILES",
    "PipelineConfig",
    "EnsembleStore",
    "generate_samples",
    "new_store",
    "run_ensemble",
    "split_train_validate",
]
