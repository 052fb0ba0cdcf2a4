import json
import os
import subprocess
import sys

import numpy as np
import pytest

from creflow import fileio, simworld
from creflow.cli import main
from creflow.errors import SchemaError
from creflow.objectives import LossConfig


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Spec, clean/violating trace fixtures, and a small experiment config."""
    root = tmp_path_factory.mktemp("cli")
    config = simworld.WorldConfig(template="pick_place", seed=0, demo_noise=0.0)
    spec = simworld.build_task_spec(config)
    spec_path = str(root / "spec.yaml")
    fileio.save_task_spec(spec_path, spec)

    cond = spec.condition
    clean_cfg = simworld.WorldConfig(template="pick_place", seed=0, fail_fraction=0.0, demo_noise=0.0)
    z = simworld.scripted_demo(clean_cfg, cond, np.random.default_rng(1))
    trace = simworld.decode_trace(simworld.latent_from_flat(z, clean_cfg), clean_cfg, cond)
    clean_path = str(root / "clean.yaml")
    fileio.save_trace(clean_path, trace)

    bad_cfg = simworld.WorldConfig(template="pick_place", seed=0, fail_fraction=1.0, demo_noise=0.0)
    z = simworld.scripted_demo(bad_cfg, cond, np.random.default_rng(2))
    trace = simworld.decode_trace(simworld.latent_from_flat(z, bad_cfg), bad_cfg, cond)
    bad_path = str(root / "violating.yaml")
    fileio.save_trace(bad_path, trace)

    exp = fileio.ExperimentConfig(
        world=simworld.WorldConfig(
            template="pick_place", seed=0, iterations=8, demo_count=48,
            pretrain_steps=120, group_size=4, probe_count=2,
        ),
        loss=LossConfig(beta=1.0, lambda_cr=1.0, lambda_kl=0.1),
        out_dir=str(root / "out"),
        spec_path=spec_path,
    )
    exp_path = str(root / "experiment.yaml")
    fileio.save_experiment_config(exp_path, exp)
    return {
        "root": root,
        "spec": spec_path,
        "clean": clean_path,
        "violating": bad_path,
        "experiment": exp_path,
    }


class TestFileIO:
    def test_spec_round_trip(self, workdir):
        spec = fileio.load_task_spec(workdir["spec"])
        reloaded_path = str(workdir["root"] / "spec2.yaml")
        fileio.save_task_spec(reloaded_path, spec)
        again = fileio.load_task_spec(reloaded_path)
        assert [c.source for c in again.clauses] == [c.source for c in spec.clauses]
        assert again.entity_ids() == spec.entity_ids()

    def test_trace_round_trip(self, workdir):
        trace = fileio.load_trace(workdir["clean"])
        path = str(workdir["root"] / "trace2.yaml")
        fileio.save_trace(path, trace)
        again = fileio.load_trace(path)
        assert again.horizon == trace.horizon
        for t in range(trace.horizon):
            for eid, state in trace.frames[t].items():
                assert np.allclose(again.frames[t][eid].position, state.position)

    def test_schema_version_enforced(self, workdir):
        path = str(workdir["root"] / "wrong_version.yaml")
        with open(workdir["spec"]) as fh:
            doc = fh.read().replace("schema_version: 1", "schema_version: 9")
        with open(path, "w") as fh:
            fh.write(doc)
        with pytest.raises(SchemaError):
            fileio.load_task_spec(path)

    def test_wrong_kind_rejected(self, workdir):
        with pytest.raises(SchemaError):
            fileio.load_trace(workdir["spec"])

    def test_experiment_round_trip(self, workdir):
        cfg = fileio.load_experiment_config(workdir["experiment"])
        assert cfg.world.iterations == 8
        assert cfg.loss.lambda_cr == 1.0
        effective = cfg.effective_loss_config()
        assert effective.mask_enabled and effective.lambda_cr == 1.0
        cfg.corrective_enabled = False
        assert cfg.effective_loss_config().lambda_cr == 0.0


class TestCliExitCodes:
    def test_monitor_pass(self, workdir, capsys):
        code = main(["monitor", "--spec", workdir["spec"], "--trace", workdir["clean"]])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["reward"] == 1
        assert all(c["witness"] == [] for c in payload["clauses"])

    def test_monitor_violation(self, workdir, capsys):
        code = main(["monitor", "--spec", workdir["spec"], "--trace", workdir["violating"]])
        assert code == 1
        payload = json.loads(capsys.readouterr().out)
        assert payload["reward"] == 0
        assert any(c["witness"] for c in payload["clauses"])

    def test_monitor_malformed_trace(self, workdir, tmp_path, capsys):
        bad = tmp_path / "broken.yaml"
        bad.write_text("schema_version: 1\nkind: trace\nhorizon: 2\nframes: []\n")
        code = main(["monitor", "--spec", workdir["spec"], "--trace", str(bad)])
        assert code == 2

    def test_mask_command(self, workdir, capsys):
        code = main(
            [
                "mask",
                "--spec", workdir["spec"],
                "--trace", workdir["clean"],
                "--trace", workdir["violating"],
                "--layout", "entity",
            ]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["layout"]["site_kind"] == "entity"
        assert sum(payload["temporal_bits"]) > 0
        assert sum(payload["spatial_bits"]) == 4  # arms, cube, bin

    def test_verify_unknown_suite(self, capsys):
        assert main(["verify", "--suite", "nonsense"]) == 2

    def test_verify_nft(self, tmp_path, capsys):
        out = str(tmp_path / "report.json")
        code = main(["verify", "--suite", "nft", "--seed", "3", "--out", out])
        assert code == 0
        with open(out) as fh:
            payload = json.load(fh)
        assert payload["passed"] and payload["suite"] == "nft"

    def test_train_dry_run(self, workdir):
        assert main(["train", "--config", workdir["experiment"], "--dry-run"]) == 0

    def test_train_missing_config(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.yaml")]) == 2

    def test_train_and_compare(self, workdir, capsys):
        out_a = str(workdir["root"] / "run_a")
        out_b = str(workdir["root"] / "run_b")
        assert main(["train", "--config", workdir["experiment"], "--out-dir", out_a]) == 0
        assert main(["train", "--config", workdir["experiment"], "--out-dir", out_b]) == 0
        capsys.readouterr()
        with open(os.path.join(out_a, "metrics.csv"), "rb") as fh:
            bytes_a = fh.read()
        with open(os.path.join(out_b, "metrics.csv"), "rb") as fh:
            bytes_b = fh.read()
        assert bytes_a == bytes_b  # same seed, same config: identical output
        code = main(
            ["compare", os.path.join(out_a, "summary.json"), os.path.join(out_b, "summary.json")]
        )
        assert code == 0
        table = capsys.readouterr().out
        assert "first" in table and table.count("run_") == 2

    def test_train_nonfinite_dump(self, workdir, capsys):
        cfg = fileio.load_experiment_config(workdir["experiment"])
        cfg.world.learning_rate = 50.0
        cfg.out_dir = str(workdir["root"] / "diverge")
        path = str(workdir["root"] / "diverging.yaml")
        fileio.save_experiment_config(path, cfg)
        assert main(["train", "--config", path]) == 1
        assert os.path.exists(os.path.join(cfg.out_dir, "diagnostic_dump.json"))


class TestConsoleScript:
    def test_entry_point_runs(self):
        proc = subprocess.run(
            [sys.executable, "-m", "creflow.cli", "verify", "--suite", "masked"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "PASS" in proc.stderr
