import dataclasses

import pytest

from bispectral.pipeline.config import PROFILES, EnsembleSettings
from bispectral.pipeline.runner import new_store, run_ensemble


@pytest.fixture(scope="session")
def desk_config():
    return PROFILES["desk"]


@pytest.fixture(scope="session")
def desk_store(desk_config, tmp_path_factory):
    """The full desk ensemble (128 flow runs), simulated once per session."""
    store = new_store(desk_config)
    path = tmp_path_factory.mktemp("desk") / "ensemble.bin"
    run_ensemble(store, desk_config, path=path)
    return store


@pytest.fixture(scope="session")
def tiny_config():
    cfg = PROFILES["desk"]
    return dataclasses.replace(cfg, ensemble=EnsembleSettings(n_samples=4, n_train=3, n_validate=1))


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def record_criterion(request):
    """Record a criterion outcome for the end-of-run summary."""
    results = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(key, ok, detail):
        results[key] = (ok, detail)
        print(f"criterion {key}: {'PASS' if ok else 'FAIL'} | {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int(str(k).rstrip("abcdefghijklmnopqrstuvwxyz")), str(k))):
        ok, detail = results[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} | {detail}")
