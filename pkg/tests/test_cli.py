"""End-to-end tests of the command-line tools, run in-process via main()."""

import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from starvol.cli import main
from starvol.precondition import Preconditioner
from starvol.runio import read_jsonl

TRAIN_CONFIG = {
    "dataset": {
        "kind": "blobs",
        "dim": 3,
        "classes": 2,
        "train": 48,
        "val": 48,
        "poison": 0,
        "noise": 0.6,
        "center_scale": 3.0,
    },
    "model": {"hidden": [4], "init": "fan_in"},
    # 3 batches/epoch * 4 epochs = 12 steps, checkpoints at 0,3,6,9,12
    "train": {"epochs": 4, "batch_size": 16, "lr": 0.05, "checkpoint_every": 3},
}


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="session")
def train_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-train")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TRAIN_CONFIG))
    out = root / "run"
    rc = main(["train", "--config", str(cfg), "--out", str(out), "--seed", "11"])
    assert rc == 0
    return {"config": cfg, "out": out, "checkpoints": sorted(out.glob("checkpoint_step*.json"))}


@pytest.fixture(scope="session")
def final_checkpoint(train_run):
    return train_run["checkpoints"][-1]


class TestTrain:
    def test_writes_checkpoints_and_metrics(self, train_run):
        names = [p.name for p in train_run["checkpoints"]]
        assert names == [f"checkpoint_step{s:06d}.json" for s in (0, 3, 6, 9, 12)]
        rows = _read_csv(train_run["out"] / "metrics.csv")
        steps = [int(r["step"]) for r in rows]
        assert steps == sorted(steps) and steps[0] == 0 and steps[-1] == 12
        assert {"train_loss", "val_loss"} <= set(rows[0])
        assert all(math.isfinite(float(r["train_loss"])) for r in rows)

    def test_rerun_is_byte_identical(self, train_run, tmp_path):
        out2 = tmp_path / "again"
        rc = main(["train", "--config", str(train_run["config"]), "--out", str(out2), "--seed", "11"])
        assert rc == 0
        for path in train_run["checkpoints"]:
            assert (out2 / path.name).read_bytes() == path.read_bytes()
        assert (out2 / "metrics.csv").read_bytes() == (train_run["out"] / "metrics.csv").read_bytes()

    def test_poison_split_adds_metric_column(self, tmp_path):
        cfg_data = json.loads(json.dumps(TRAIN_CONFIG))
        cfg_data["dataset"]["poison"] = 16
        cfg_data["train"]["poison_alpha"] = 0.5
        cfg_data["train"]["epochs"] = 2
        cfg = tmp_path / "poison.json"
        cfg.write_text(json.dumps(cfg_data))
        rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "run"), "--seed", "1"])
        assert rc == 0
        rows = _read_csv(tmp_path / "run" / "metrics.csv")
        assert "poison_loss" in rows[0]
        assert all(math.isfinite(float(r["poison_loss"])) for r in rows)


class TestEstimate:
    def test_record_and_samples(self, final_checkpoint, tmp_path):
        out = tmp_path / "runs.jsonl"
        rc = main([
            "estimate", "--checkpoint", str(final_checkpoint),
            "--k", "8", "--cutoff", "1e-2", "--out", str(out), "--seed", "3",
        ])
        assert rc == 0
        (record,) = read_jsonl(out)
        assert record["subcommand"] == "estimate"
        assert record["k"] == 8 and record["n"] == 26
        assert record["measure"] == "gaussian"
        assert math.isfinite(record["log_volume"])
        assert record["log10_volume"] == record["log_volume"] / math.log(10.0)
        assert len(record["log_terms"]) == 8
        samples = _read_csv(out.with_suffix(".samples.csv"))
        assert len(samples) == 8
        assert all(float(r["radius"]) > 0 for r in samples if r["failed"] == "0")

    def test_rerun_appends_identical_record(self, final_checkpoint, tmp_path):
        out = tmp_path / "runs.jsonl"
        argv = [
            "estimate", "--checkpoint", str(final_checkpoint),
            "--k", "6", "--out", str(out), "--seed", "9",
        ]
        assert main(argv) == 0
        assert main(argv) == 0
        first, second = read_jsonl(out)
        assert first["log_volume"] == second["log_volume"]
        assert first["log_terms"] == second["log_terms"]

    def test_thread_count_does_not_change_result(self, final_checkpoint, tmp_path):
        records = []
        for threads in ("1", "4"):
            out = tmp_path / f"t{threads}.jsonl"
            rc = main([
                "estimate", "--checkpoint", str(final_checkpoint),
                "--k", "12", "--threads", threads, "--out", str(out), "--seed", "5",
            ])
            assert rc == 0
            records.append(read_jsonl(out)[0])
        assert records[0]["log_volume"] == records[1]["log_volume"]

    def test_lebesgue_adam_nu_and_saved_preconditioner(self, final_checkpoint, tmp_path):
        out = tmp_path / "runs.jsonl"
        saved = tmp_path / "precond.json"
        rc = main([
            "estimate", "--checkpoint", str(final_checkpoint),
            "--k", "6", "--measure", "lebesgue", "--preconditioner", "adam-nu",
            "--save-precond", str(saved), "--out", str(out), "--seed", "2",
        ])
        assert rc == 0
        (record,) = read_jsonl(out)
        assert record["measure"] == "lebesgue"
        assert record["preconditioner"].startswith("adam-nu[")
        assert Preconditioner.load(saved).describe() == record["preconditioner"]

    def test_loss_cost_works(self, final_checkpoint, tmp_path):
        out = tmp_path / "runs.jsonl"
        rc = main([
            "estimate", "--checkpoint", str(final_checkpoint),
            "--cost", "loss", "--cutoff", "2.0", "--k", "4", "--out", str(out), "--seed", "4",
        ])
        assert rc == 0
        assert math.isfinite(read_jsonl(out)[0]["log_volume"])

    def test_env_seed_is_fallback_only(self, final_checkpoint, tmp_path, monkeypatch):
        monkeypatch.setenv("STARVOL_SEED", "77")
        out_env = tmp_path / "env.jsonl"
        assert main(["estimate", "--checkpoint", str(final_checkpoint), "--k", "2", "--out", str(out_env)]) == 0
        assert read_jsonl(out_env)[0]["seed"] == 77
        out_flag = tmp_path / "flag.jsonl"
        assert main([
            "estimate", "--checkpoint", str(final_checkpoint),
            "--k", "2", "--out", str(out_flag), "--seed", "5",
        ]) == 0
        assert read_jsonl(out_flag)[0]["seed"] == 5

    def test_missing_checkpoint_exits_2(self, tmp_path):
        rc = main(["estimate", "--checkpoint", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o.jsonl")])
        assert rc == 2


class TestSweep:
    def test_cutoff_sweep_recovers_half_dimension_slope(self, tmp_path):
        out = tmp_path / "sweep.csv"
        rc = main([
            "sweep", "--kind", "cutoff", "--target", "quadratic", "--n", "40",
            "--k", "16", "--values", "1e-4,1e-3,1e-2,1e-1",
            "--out", str(out), "--seed", "2",
        ])
        assert rc == 0
        rows = _read_csv(out)
        assert [r["status"] for r in rows] == ["ok"] * 4
        summary = json.loads(out.with_suffix(".summary.json").read_text())
        # n/2 power law for the quadratic cost; same directions per cutoff, so
        # the only noise is the radius search tolerance (1e-4 relative)
        assert summary["log_log_slope"] == pytest.approx(20.0, rel=1e-3)

    def test_checkpoint_sweep_sorts_by_step(self, train_run, tmp_path):
        out = tmp_path / "ckpt.csv"
        paths = ",".join(str(p) for p in reversed(train_run["checkpoints"]))
        rc = main([
            "sweep", "--kind", "checkpoint", "--checkpoints", paths,
            "--k", "6", "--out", str(out), "--seed", "1",
        ])
        assert rc == 0
        rows = _read_csv(out)
        assert [int(r["value"]) for r in rows] == [0, 3, 6, 9, 12]
        assert all(r["status"] == "ok" for r in rows)

    def test_preconditioner_sweep_flags_unknown_name(self, final_checkpoint, tmp_path):
        out = tmp_path / "precond.csv"
        rc = main([
            "sweep", "--kind", "preconditioner", "--values", "none,adam-nu,bogus",
            "--checkpoint", str(final_checkpoint), "--k", "6", "--out", str(out), "--seed", "1",
        ])
        assert rc == 0
        rows = {r["value"]: r for r in _read_csv(out)}
        assert rows["none"]["status"] == "ok"
        assert rows["adam-nu"]["status"] == "ok"
        assert rows["bogus"]["status"].startswith("failed")

    def test_eps_sweep_reports_largest_estimate(self, final_checkpoint, tmp_path):
        out = tmp_path / "eps.csv"
        rc = main([
            "sweep", "--kind", "eps", "--preconditioner", "adam-nu",
            "--values", "0.001,1.0", "--checkpoint", str(final_checkpoint),
            "--k", "6", "--out", str(out), "--seed", "1",
        ])
        assert rc == 0
        rows = _read_csv(out)
        summary = json.loads(out.with_suffix(".summary.json").read_text())
        best = max(rows, key=lambda r: float(r["log_volume"]))
        assert summary["best_eps"] == float(best["value"])
        assert summary["best_log_volume"] == float(best["log_volume"])


class TestValidate:
    def test_suite_passes_and_writes_report(self, tmp_path, capsys):
        report = tmp_path / "report.json"
        rc = main(["validate", "--suite", "gdflow", "--out", str(report)])
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert all(line.startswith("[PASS]") for line in lines[:-1])
        payload = json.loads(report.read_text())
        assert payload and all(entry["passed"] for entry in payload)

    def test_console_script_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "starvol.cli", "validate", "--suite", "ellipsoid"],
            capture_output=True, text=True, timeout=300,
        )
        assert proc.returncode == 0, proc.stderr
        assert "checks passed" in proc.stdout


@pytest.fixture(scope="session")
def lebesgue_record(final_checkpoint, tmp_path_factory):
    out = tmp_path_factory.mktemp("mdl") / "vol.jsonl"
    rc = main([
        "estimate", "--checkpoint", str(final_checkpoint),
        "--k", "8", "--measure", "lebesgue", "--out", str(out), "--seed", "6",
    ])
    assert rc == 0
    return out


class TestMdl:
    def test_description_length_report(self, final_checkpoint, lebesgue_record, tmp_path):
        out = tmp_path / "mdl.json"
        rc = main([
            "mdl", "--checkpoint", str(final_checkpoint),
            "--record", str(lebesgue_record), "--out", str(out),
        ])
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["total"] == payload["kl_term"] + payload["data_term"]
        assert payload["data_term"] > 0
        assert math.isfinite(payload["kl_term"])
        assert payload["n"] == 26

    def test_gaussian_record_is_rejected(self, final_checkpoint, tmp_path):
        rec = tmp_path / "gauss.jsonl"
        assert main([
            "estimate", "--checkpoint", str(final_checkpoint),
            "--k", "4", "--measure", "gaussian", "--out", str(rec), "--seed", "6",
        ]) == 0
        rc = main([
            "mdl", "--checkpoint", str(final_checkpoint),
            "--record", str(rec), "--out", str(tmp_path / "mdl.json"),
        ])
        assert rc == 2
