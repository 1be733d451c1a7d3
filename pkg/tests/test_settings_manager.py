import json
import os
import tempfile
import unittest

from models import HybridConfig, Method, PartitionMode, ScheduleKind
from settings_manager import ConfigError, SettingsManager


def _write(tmp, name, text):
    path = os.path.join(tmp, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


class TestLoadConfig(unittest.TestCase):
    def setUp(self):
        self.sm = SettingsManager()

    def test_minimal_config_gets_defaults(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "run.cfg", "# tiny run\nmethod = fedmap\nclients = 4\nrounds = 10\n")
            cfg = self.sm.load_config(path)
        self.assertEqual(cfg.method, Method.FEDMAP)
        self.assertEqual((cfg.clients, cfg.rounds), (4, 10))
        self.assertEqual(cfg.schedule.s, 30)
        self.assertEqual(cfg.schedule.kind, ScheduleKind.STEPWISE)
        self.assertEqual(cfg.bits_per_param, 32)
        self.assertEqual(cfg.partition.num_clients, 4)
        self.assertEqual(cfg.model.hidden, (64, 32))

    def test_zero_interval_is_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "bad.cfg", "rounds = 10\nschedule.s = 0\n")
            with self.assertRaises(ConfigError) as ctx:
                self.sm.load_config(path)
        self.assertEqual(ctx.exception.key, "schedule.s")
        self.assertEqual(ctx.exception.line, 2)

    def test_unknown_key_is_rejected(self):
        with self.assertRaises(ConfigError) as ctx:
            self.sm.build_config(self.sm.parse_text("rounds = 5\nschedule.speed = 3\n"))
        self.assertEqual(ctx.exception.key, "schedule.speed")
        self.assertIn("line 2", str(ctx.exception))

    def test_duplicate_and_malformed_lines(self):
        with self.assertRaises(ConfigError) as ctx:
            self.sm.parse_text("rounds = 5\nrounds = 6\n")
        self.assertEqual(ctx.exception.line, 2)
        with self.assertRaises(ConfigError):
            self.sm.parse_text("just some words\n")

    def test_value_validation(self):
        cases = [
            "bits_per_param = 8",
            "schedule.p_g = 1.0",
            "schedule.floor = 0",
            "clients = 0",
            "lr = 0",
            "method = fedprox",
            "model.bias = maybe",
            "model.hidden = 8,x",
            "local_epochs = -1",
        ]
        for line in cases:
            with self.subTest(line=line):
                with self.assertRaises(ConfigError):
                    self.sm.build_config(self.sm.parse_text(line))

    def test_feddr_with_federated_pruning_is_rejected(self):
        raw = self.sm.parse_text("method = federated_pruning\nfeddr.enabled = true\n")
        with self.assertRaises(ConfigError) as ctx:
            self.sm.build_config(raw)
        self.assertEqual(ctx.exception.key, "feddr.enabled")

    def test_sections_are_parsed(self):
        text = (
            "schedule.kind = continuous\n"
            "partition.mode = dirichlet_label_skew\n"
            "partition.beta = 0.3\n"
            "feddr.enabled = yes\n"
            "feddr.config = C2\n"
            "model.hidden = 32, 16, 8\n"
        )
        cfg = self.sm.build_config(self.sm.parse_text(text))
        self.assertEqual(cfg.schedule.kind, ScheduleKind.CONTINUOUS)
        self.assertEqual(cfg.partition.mode, PartitionMode.DIRICHLET_LABEL_SKEW)
        self.assertEqual(cfg.partition.beta, 0.3)
        self.assertTrue(cfg.feddr.enabled)
        self.assertEqual(cfg.feddr.config, HybridConfig.C2)
        self.assertEqual(cfg.model.hidden, (32, 16, 8))
        self.assertEqual(cfg.layer_sizes, (16, 32, 16, 8, 4))

    def test_missing_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigError):
                self.sm.load_config(os.path.join(tmp, "nope.cfg"))


class TestCanonicalDump(unittest.TestCase):
    def setUp(self):
        self.sm = SettingsManager()

    def test_dump_of_load_is_a_fixed_point(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "a.cfg", "rounds=12\n  schedule.p_g = 0.25\nlr = 1e-2\nmodel.hidden=8, 4\n")
            first = self.sm.dump_config(self.sm.load_config(path))
            again = _write(tmp, "b.cfg", first)
            second = self.sm.dump_config(self.sm.load_config(again))
        self.assertEqual(first, second)
        lines = first.splitlines()
        self.assertEqual(lines, sorted(lines))
        self.assertIn("lr = 0.01", lines)
        self.assertIn("model.hidden = 8,4", lines)

    def test_json_matches_key_value(self):
        with tempfile.TemporaryDirectory() as tmp:
            kv = _write(tmp, "a.cfg", "rounds = 12\nschedule.s = 6\nfeddr.enabled = true\n")
            js = _write(
                tmp,
                "a.json",
                json.dumps({"rounds": 12, "schedule": {"s": 6}, "feddr": {"enabled": True}}),
            )
            a = self.sm.load_config(kv)
            b = self.sm.load_config(js)
        self.assertEqual(self.sm.config_hash(a), self.sm.config_hash(b))

    def test_hash_changes_with_content(self):
        a = self.sm.build_config(self.sm.parse_text("rounds = 12"))
        b = self.sm.build_config(self.sm.parse_text("rounds = 13"))
        self.assertNotEqual(self.sm.config_hash(a), self.sm.config_hash(b))
        self.assertEqual(len(self.sm.config_hash(a)), 64)

    def test_overrides_and_seed(self):
        base = self.sm.build_config(self.sm.parse_text("rounds = 12"))
        cfg = self.sm.with_overrides(base, {"schedule.s": "45", "local_epochs": "8"})
        self.assertEqual((cfg.schedule.s, cfg.local_epochs, cfg.rounds), (45, 8, 12))
        seeded = self.sm.with_seed(base, 99)
        self.assertEqual((seeded.seed, seeded.partition.seed), (99, 99))
        with self.assertRaises(ConfigError):
            self.sm.with_overrides(base, {"schedule.s": "0"})
        with self.assertRaises(ConfigError):
            self.sm.with_seed(base, -1)


class TestGrid(unittest.TestCase):
    def test_grid_cells(self):
        sm = SettingsManager()
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "grid.cfg", "schedule.s = 10, 20\nseed = 1,2\nmodel.hidden = 8;16,8\n")
            grid = sm.load_grid(path)
        self.assertEqual(grid["model.hidden"], ["8", "16,8"])
        cells = sm.grid_cells(grid)
        self.assertEqual(len(cells), 8)
        self.assertEqual(cells[0], {"schedule.s": "10", "seed": "1", "model.hidden": "8"})
        self.assertEqual(cells[-1], {"schedule.s": "20", "seed": "2", "model.hidden": "16,8"})

    def test_grid_rejects_unknown_keys(self):
        sm = SettingsManager()
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "grid.cfg", "speed = 1,2\n")
            with self.assertRaises(ConfigError):
                sm.load_grid(path)


if __name__ == "__main__":
    unittest.main()
