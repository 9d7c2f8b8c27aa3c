import dataclasses
import subprocess
import sys

import numpy as np
import pytest

from bispectral.pipeline import cli, stages
from bispectral.pipeline import config as pc
from bispectral.pipeline import runner
from bispectral.pipeline.store import FAILED, OK, PENDING, EnsembleStore, StoreError


def _filled_store(n=5, n_p=3, seed=7):
    rng = np.random.default_rng(seed)
    st = EnsembleStore(seed, rng.standard_normal((n, n_p)))
    st.add_label("a", np.linspace(0, 1, 4))
    st.add_label("b@10", np.array([0.5, 1.5]))
    for j in range(n - 1):
        st.set_record(j, {"a": rng.standard_normal(4), "b@10": rng.standard_normal(2)},
                      rng.uniform(size=4), ok=j != 2)
    return st


class TestStore:
    def test_round_trip(self, tmp_path):
        st = _filled_store()
        st.save(tmp_path / "s.bin")
        back = EnsembleStore.load(tmp_path / "s.bin")
        assert back.seed == st.seed and back.labels == st.labels
        assert np.array_equal(back.xi, st.xi) and np.array_equal(back.status, st.status)
        assert np.array_equal(back.diagnostics, st.diagnostics)
        for label in st.labels:
            assert np.array_equal(back.grids[label], st.grids[label])
            assert np.array_equal(back.values[label], st.values[label], equal_nan=True)
        assert back.to_bytes() == st.to_bytes()

    def test_status_sets(self):
        st = _filled_store()
        assert st.completed().tolist() == [0, 1, 3]
        assert st.failed().tolist() == [2] and st.pending().tolist() == [4]
        assert (OK, FAILED, PENDING) == (st.status[0], st.status[2], st.status[4])
        assert st.trajectories("a").shape == (4, 3)

    def test_little_endian_header(self):
        raw = _filled_store().to_bytes()
        assert raw[:8] == b"BSPENS\0\0"
        assert int.from_bytes(raw[8:12], "little") == 1

    @pytest.mark.parametrize("where", [0, 9, 40, 200, -2])
    def test_corruption_detected(self, where):
        raw = bytearray(_filled_store().to_bytes())
        raw[where] ^= 0x5A
        with pytest.raises(StoreError):
            EnsembleStore.from_bytes(bytes(raw))

    def test_truncated(self):
        with pytest.raises(StoreError):
            EnsembleStore.from_bytes(_filled_store().to_bytes()[:-9])

    def test_manifest_text(self, tmp_path):
        _filled_store().save(tmp_path / "s.bin")
        text = (tmp_path / "s.bin.txt").read_text()
        assert "seed = 7" in text and "failed = 2" in text and "[qoi:b@10]" in text

    def test_label_conflicts(self):
        st = _filled_store()
        st.add_label("a", np.linspace(0, 1, 4))
        with pytest.raises(StoreError):
            st.add_label("a", np.linspace(0, 2, 4))
        with pytest.raises(StoreError):
            st.trajectories("missing")
        with pytest.raises(StoreError):
            EnsembleStore.load("/nonexistent/store.bin")


class TestSamplesAndSplit:
    def test_seeded(self):
        a = runner.generate_samples(3, 50, 4)
        assert np.array_equal(a, runner.generate_samples(3, 50, 4))
        assert not np.array_equal(a, runner.generate_samples(4, 50, 4))

    def test_moments(self):
        xi = runner.generate_samples(11, 10_000, 5)
        n = xi.shape[0]
        assert np.all(np.abs(xi.mean(axis=0)) < 3 / np.sqrt(n))
        assert np.all(np.abs(xi.var(axis=0, ddof=1) - 1) < 3 * np.sqrt(2 / (n - 1)))

    def test_streams_independent(self):
        seeds = {pc.derived_seed(5, s) for s in range(4)}
        assert len(seeds) == 4

    def test_split(self):
        cand = np.array([0, 1, 2, 4, 5, 7, 8, 9, 11, 12])
        tr, va = runner.split_train_validate(cand, 6, 4, 1)
        assert not set(tr) & set(va)
        assert sorted(set(tr) | set(va)) == cand.tolist()
        tr2, va2 = runner.split_train_validate(cand, 6, 4, 1)
        assert np.array_equal(tr, tr2) and np.array_equal(va, va2)
        with pytest.raises(ValueError):
            runner.split_train_validate(cand, 8, 4, 1)


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = dataclasses.replace(pc.PROFILES["paper"], seed=99)
        pc.save(cfg, tmp_path / "c.ini")
        assert pc.load(tmp_path / "c.ini", "desk") == cfg

    def test_partial_file_keeps_profile(self):
        cfg = pc.from_text("[ensemble]\nn_samples = 10\n[domain]\nn_cells = 20\n", pc.PROFILES["desk"])
        assert cfg.ensemble.n_samples == 10 and cfg.flow.n_cells == 20
        assert cfg.analysis == pc.PROFILES["desk"].analysis

    @pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[ensemble]\nsize = 3\n", "[fluid]\nfoo = 1\n",
                                      "[pipeline]\nname = x\n"])
    def test_unknown_keys(self, text):
        with pytest.raises(KeyError):
            pc.from_text(text)

    def test_profiles(self):
        paper = pc.PROFILES["paper"]
        assert paper.random_input.n_params == 100 and paper.ensemble.n_samples == 550
        assert pc.PROFILES["desk"].flow.n_cells == 50
        assert pc.PROFILES["desk"].digest() != paper.digest()

    def test_labels(self):
        assert pc.spatial_label(300091.0) == "spatial_gas_saturation@300091"
        assert pc.qoi_kind(pc.QOI_OUTFLOW) == "flux"
        assert pc.PROFILES["desk"].screening_tol(pc.QOI_INFLOW) == 0.01


class TestEnsemble:
    def test_run_is_idempotent(self, tiny_config, tmp_path):
        st = runner.new_store(tiny_config)
        runner.run_ensemble(st, tiny_config, path=tmp_path / "e.bin")
        assert st.completed().size == 4
        before = {k: v.copy() for k, v in st.values.items()}
        diag = st.diagnostics.copy()
        runner.run_ensemble(st, tiny_config)
        assert np.array_equal(st.diagnostics, diag)
        assert all(np.array_equal(st.values[k], before[k]) for k in before)
        loaded = EnsembleStore.load(tmp_path / "e.bin")
        assert all(np.array_equal(loaded.values[k], before[k]) for k in before)

    def test_reproducible_trajectories(self, tiny_config):
        a = runner.new_store(tiny_config, 2)
        b = runner.new_store(tiny_config, 2)
        runner.run_ensemble(a, tiny_config)
        runner.run_ensemble(b, tiny_config)
        for label in a.labels:
            assert np.array_equal(a.values[label], b.values[label])

    def test_zero_injection(self, tiny_config):
        cfg = dataclasses.replace(tiny_config, flow=tiny_config.flow.replace(**{"boundary.q_h": 0.0}))
        st = runner.new_store(cfg, 2)
        runner.run_ensemble(st, cfg)
        assert all(np.all(v == 0.0) for v in st.values.values())

    def test_failure_budget(self, tiny_config, monkeypatch):
        monkeypatch.setattr(runner, "run_one", lambda cfg, xi: (False, {}, np.zeros(4)))
        st = runner.new_store(tiny_config, 3)
        with pytest.raises(runner.FailureBudgetExceeded):
            runner.run_ensemble(st, tiny_config)
        assert st.failed().size == 3

    def test_failed_samples_excluded(self, tiny_config):
        cfg = dataclasses.replace(tiny_config, ensemble=pc.EnsembleSettings(
            n_samples=3, n_train=2, n_validate=1, max_failure_fraction=0.5))
        st = runner.new_store(cfg)
        st.set_record(1, {}, np.zeros(4), ok=False)
        runner.run_ensemble(st, cfg)
        assert st.completed().tolist() == [0, 2]
        tr, va = stages.ensure_split(st, cfg, stages.PipelineManifest())
        assert tr.tolist() == [0, 2] and va.size == 0


class TestManifest:
    def test_round_trip(self):
        man = stages.PipelineManifest(config_hash="abc")
        man.stages["simulate"] = "complete"
        man.split = {"train": np.array([0, 2]), "validate": np.array([1])}
        man.qoi["x"] = {"reduced_set": np.array([3, 5]), "n_ord": "2"}
        back = stages.PipelineManifest.from_text(man.to_text())
        assert back.config_hash == "abc" and back.is_complete("simulate")
        assert np.array_equal(back.split["train"], [0, 2])
        assert np.array_equal(back.qoi["x"]["reduced_set"], [3, 5])

    def test_mark_validates(self, tmp_path):
        man = stages.PipelineManifest()
        with pytest.raises(StoreError):
            man.mark("kle", tmp_path / "missing.txt", stages.validate_text)
        assert not man.is_complete("kle")


def _cli(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A 24-sample ensemble created and simulated through the CLI."""
    d = tmp_path_factory.mktemp("cli")
    cfg = dataclasses.replace(pc.PROFILES["desk"], ensemble=pc.EnsembleSettings(
        n_samples=24, n_train=18, n_validate=6))
    pc.save(cfg, d / "run.ini")
    store = d / "ens.bin"
    assert _cli("generate-samples", "--config", d / "run.ini", "--store", store) == 0
    assert _cli("simulate", "--config", d / "run.ini", "--store", store) == 0
    return d


class TestCLI:
    def _base(self, d):
        return ["--config", d / "run.ini", "--store", d / "ens.bin"]

    def test_refuses_overwrite(self, workdir):
        assert _cli("generate-samples", *self._base(workdir)) == 2

    def test_pipeline_verbs(self, workdir, capsys):
        b = self._base(workdir)
        q = pc.QOI_INFLOW
        assert _cli("screen", *b, "--qoi", q, "--tol", "0.05") == 0
        assert _cli("kle", *b, "--qoi", q) == 0
        sur = workdir / "s.sur"
        assert _cli("build-surrogate", *b, "--qoi", q, "--nord", 1, "--tau", 2.0, "--out", sur) == 0
        assert sur.exists() and (workdir / "s.sur.manifest").exists()
        out = workdir / "an"
        assert _cli("analyze", *b, "--surrogate", sur, "--corr", "--sobol", "--samples", 2000,
                    "--pdf", "max", "--out", out) == 0
        assert {"covariance.txt", "correlation.txt", "sobol.txt", "pdf_max.txt"} <= {
            p.name for p in out.iterdir()}
        xi = np.random.default_rng(0).standard_normal((3, 40))
        np.savetxt(workdir / "xi.txt", xi)
        assert _cli("predict", *b, "--surrogate", sur, "--xi", workdir / "xi.txt",
                    "--out", workdir / "pred.txt") == 0
        assert np.loadtxt(workdir / "pred.txt").shape == (128, 4)
        assert _cli("report", *b) == 0
        text = capsys.readouterr().out
        for stage in ("screen", "kle", "build-surrogate"):
            assert f"{stage}: complete" in text

    def test_validation_errors(self, workdir):
        b = self._base(workdir)
        assert _cli("screen", *b, "--qoi", "no_such_qoi") == 2
        assert _cli("analyze", *b, "--surrogate", workdir / "missing.sur") == 2
        assert _cli("report", "--store", workdir / "nothing.bin") == 2
        (workdir / "bad.ini").write_text("[ensemble]\nwhatever = 1\n")
        assert _cli("report", "--config", workdir / "bad.ini", "--store", workdir / "ens.bin") == 2

    def test_failure_budget_exit_code(self, tmp_path, monkeypatch):
        monkeypatch.setattr(runner, "run_one", lambda cfg, xi: (False, {}, np.zeros(4)))
        store = tmp_path / "f.bin"
        assert _cli("generate-samples", "--store", store, "--n-samples", 3) == 0
        assert _cli("simulate", "--store", store) == 3

    def test_single_run(self, tmp_path):
        from bispectral.flow.params import FlowConfig

        cfg = FlowConfig()
        x = cfg.mesh().cell_centers
        np.savetxt(tmp_path / "f.txt", np.column_stack([x, np.full(50, 0.15), np.full(50, 5e-20)]))
        assert _cli("simulate", "--fields", tmp_path / "f.txt", "--out", tmp_path / "o") == 0
        assert (tmp_path / "o" / "inflow_gas_saturation.txt").exists()

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "bispectral.pipeline.cli", "--help"],
                             capture_output=True, text=True)
        assert out.returncode == 0
        for verb in ("generate-samples", "simulate", "screen", "kle", "build-surrogate", "analyze",
                     "predict", "report"):
            assert verb in out.stdout
