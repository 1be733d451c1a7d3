import csv
import io
import json
import os
import tempfile
import unittest
from contextlib import redirect_stdout

from experiment_runner import ExperimentRunner, bytes_to_target_sparsity, threads_from_env
from main import main
from models import RoundMetrics
from nn import load_model
from pruning import load_mask
from schedule import prune_events
from settings_manager import ConfigError, SettingsManager

SMALL_CONFIG = """\
method = fedmap
clients = 3
rounds = 6
local_epochs = 1
lr = 0.05
batch_size = 16
schedule.s = 2
schedule.p_g = 0.3
schedule.floor = 0.1
model.hidden = 8
data.classes = 3
data.dim = 4
data.samples = 240
"""


def _write(tmp, name, text):
    path = os.path.join(tmp, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


class TestExperimentRunner(unittest.TestCase):
    def setUp(self):
        self.sm = SettingsManager()
        self.runner = ExperimentRunner(self.sm, threads=1)

    def test_run_writes_all_artifacts(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = self.sm.load_config(_write(tmp, "run.cfg", SMALL_CONFIG + "output.export_partitions = true\n"))
            out = os.path.join(tmp, "out")
            manifest = self.runner.run(cfg, out)

            for name in (
                "metrics.csv", "metrics.jsonl", "masks.log", "final_model.fmap",
                "final_mask.fmsk", "config.resolved.cfg", "manifest.json",
            ):
                self.assertTrue(os.path.exists(os.path.join(out, name)), name)
            self.assertFalse(any(n.endswith(".tmp") for n in os.listdir(out)))
            self.assertEqual(len(os.listdir(os.path.join(out, "partitions"))), 3)

            with open(os.path.join(out, "manifest.json"), encoding="utf-8") as f:
                stored = json.load(f)
            self.assertEqual(stored["status"], "ok")
            self.assertEqual(stored["config_hash"], self.sm.config_hash(cfg))
            self.assertEqual(stored["config_hash"], manifest.config_hash)

            rows = _read_csv(os.path.join(out, "metrics.csv"))
            self.assertEqual(list(rows[0].keys()), [
                "round", "global_test_accuracy", "mean_client_accuracy", "remaining_params",
                "remaining_fraction", "uplink_bytes_per_client", "downlink_bytes",
                "cumulative_bytes", "prune_event",
            ])
            with open(os.path.join(out, "metrics.jsonl"), encoding="utf-8") as f:
                self.assertEqual(len(f.read().splitlines()), len(rows))

            model = load_model(os.path.join(out, "final_model.fmap"))
            mask = load_mask(os.path.join(out, "final_mask.fmsk"), model.shapes)
            self.assertEqual(mask.nonzero, int(rows[-1]["remaining_params"]))

            resolved = self.sm.load_config(os.path.join(out, "config.resolved.cfg"))
            self.assertEqual(self.sm.config_hash(resolved), manifest.config_hash)

    def test_engine_status_is_logged(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = self.sm.load_config(_write(tmp, "run.cfg", SMALL_CONFIG))
            with self.assertLogs("ExperimentRunner", level="INFO") as logs:
                self.runner.run(cfg, os.path.join(tmp, "out"))
        messages = [record.getMessage() for record in logs.records]
        self.assertIn("fedmap: running 6 rounds", messages)
        self.assertIn("fedmap: done", messages)

    def test_identical_configs_give_identical_csv_bytes(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = self.sm.load_config(_write(tmp, "run.cfg", SMALL_CONFIG))
            self.runner.run(cfg, os.path.join(tmp, "a"))
            self.runner.run(cfg, os.path.join(tmp, "b"))
            with open(os.path.join(tmp, "a", "metrics.csv"), "rb") as f:
                a = f.read()
            with open(os.path.join(tmp, "b", "metrics.csv"), "rb") as f:
                b = f.read()
        self.assertEqual(a, b)

    def test_prune_event_rows_follow_schedule(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = self.sm.load_config(_write(tmp, "run.cfg", SMALL_CONFIG))
            out = os.path.join(tmp, "out")
            self.runner.run(cfg, out)
            rows = _read_csv(os.path.join(out, "metrics.csv"))
            with open(os.path.join(out, "masks.log"), encoding="utf-8") as f:
                log_lines = f.read().splitlines()
        flagged = [int(r["round"]) for r in rows if r["prune_event"] == "1"]
        expected = prune_events(cfg.schedule.resolved(cfg.num_weights, cfg.rounds))
        self.assertEqual(flagged, expected)
        self.assertEqual(len(log_lines), len(expected))
        self.assertTrue(all("nested=true" in line for line in log_lines))
        self.assertTrue(log_lines[0].startswith(f"round={expected[0]} K="))

    def test_sweep_runs_every_cell(self):
        with tempfile.TemporaryDirectory() as tmp:
            base = self.sm.load_config(_write(tmp, "run.cfg", SMALL_CONFIG))
            grid = {"schedule.s": ["2", "3"], "seed": ["1", "2"]}
            out = os.path.join(tmp, "sweep")
            manifests = self.runner.sweep(base, grid, out)
            self.assertEqual(len(manifests), 4)
            self.assertTrue(all(m.status == "ok" for m in manifests))
            summary = _read_csv(os.path.join(out, "summary.csv"))
            self.assertEqual(len(summary), 4)
            for row in summary:
                cell_rows = _read_csv(os.path.join(row["out_dir"], "metrics.csv"))
                self.assertEqual(row["final_accuracy"], cell_rows[-1]["global_test_accuracy"])
                self.assertTrue(os.path.exists(os.path.join(row["out_dir"], "manifest.json")))
            self.assertEqual([r["seed"] for r in summary], ["1", "2", "1", "2"])

            # one cell re-run standalone gives the same metrics
            cell = self.sm.with_overrides(base, {"schedule.s": "3", "seed": "2"})
            self.runner.run(cell, os.path.join(tmp, "single"))
            with open(os.path.join(tmp, "single", "metrics.csv"), "rb") as f:
                single = f.read()
            with open(os.path.join(out, "cell_003", "metrics.csv"), "rb") as f:
                from_sweep = f.read()
        self.assertEqual(single, from_sweep)

    def test_failed_cell_does_not_stop_sweep(self):
        with tempfile.TemporaryDirectory() as tmp:
            base = self.sm.load_config(_write(tmp, "run.cfg", SMALL_CONFIG))
            manifests = self.runner.sweep(base, {"schedule.s": ["0", "2"]}, os.path.join(tmp, "sweep"))
            summary = _read_csv(os.path.join(tmp, "sweep", "summary.csv"))
        self.assertEqual([m.status for m in manifests], ["failed", "ok"])
        self.assertEqual(summary[0]["status"], "failed")
        self.assertIn("schedule.s", summary[0]["error"])

    def test_bytes_to_target_sparsity(self):
        metrics = [
            RoundMetrics(t, 0.9, 0.9, k, k / 100, 4 * k, 4 * k, c, False)
            for t, k, c in [(1, 100, 800), (2, 50, 1200), (3, 10, 1280)]
        ]
        self.assertEqual(bytes_to_target_sparsity(metrics, 100, 0.1), 1280)
        self.assertEqual(bytes_to_target_sparsity(metrics, 100, 0.5), 1200)
        self.assertIsNone(bytes_to_target_sparsity(metrics, 100, 0.05))

    def test_thread_count_from_environment(self):
        old = os.environ.get("FEDMAP_THREADS")
        try:
            os.environ["FEDMAP_THREADS"] = "4"
            self.assertEqual(threads_from_env(), 4)
            os.environ["FEDMAP_THREADS"] = "zero"
            with self.assertRaises(ConfigError):
                threads_from_env()
            del os.environ["FEDMAP_THREADS"]
            self.assertEqual(threads_from_env(), 1)
        finally:
            if old is None:
                os.environ.pop("FEDMAP_THREADS", None)
            else:
                os.environ["FEDMAP_THREADS"] = old


class TestCommandLine(unittest.TestCase):
    def test_run_and_seed_override(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "run.cfg", SMALL_CONFIG)
            out = os.path.join(tmp, "out")
            code = main(["--log-file", "", "run", "--config", path, "--out", out, "--seed", "5"])
            self.assertEqual(code, 0)
            with open(os.path.join(out, "manifest.json"), encoding="utf-8") as f:
                self.assertEqual(json.load(f)["seed"], 5)

    def test_config_error_exit_code(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "bad.cfg", "schedule.s = 0\n")
            code = main(["--log-file", "", "run", "--config", path, "--out", os.path.join(tmp, "o")])
        self.assertEqual(code, 2)

    def test_sweep_exit_codes(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "run.cfg", SMALL_CONFIG)
            ok_grid = _write(tmp, "ok.grid", "seed = 1,2\n")
            bad_grid = _write(tmp, "bad.grid", "schedule.s = 0,2\n")
            ok = main(["--log-file", "", "sweep", "--config", path, "--grid", ok_grid,
                       "--out", os.path.join(tmp, "s1"), "--xlsx"])
            self.assertTrue(os.path.exists(os.path.join(tmp, "s1", "summary.xlsx")))
            bad = main(["--log-file", "", "sweep", "--config", path, "--grid", bad_grid,
                        "--out", os.path.join(tmp, "s2")])
        self.assertEqual(ok, 0)
        self.assertEqual(bad, 3)

    def test_schedule_preview(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "run.cfg", SMALL_CONFIG)
            out = os.path.join(tmp, "preview.csv")
            self.assertEqual(main(["--log-file", "", "schedule", "preview", "--config", path, "--out", out]), 0)
            with open(out, newline="", encoding="utf-8") as f:
                rows = list(csv.reader(f))
            buffer = io.StringIO()
            with redirect_stdout(buffer):
                self.assertEqual(main(["--log-file", "", "schedule", "preview", "--config", path]), 0)
        self.assertEqual(rows[0], ["t", "K_t"])
        # d = 4*8 + 8*3 = 56
        self.assertEqual(rows[1:3], [["1", "56"], ["2", "39"]])
        self.assertEqual(len(rows), 7)
        self.assertIn("t,K_t\n1,56\n2,39\n", buffer.getvalue())


if __name__ == "__main__":
    unittest.main()
