import asyncio
import json
import tempfile
import unittest
from fractions import Fraction
from pathlib import Path

import numpy as np

from .cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, run
from .resample import ResizeSpec, read_png, resize, write_png
from .storage import read_json
from .trainer import CHECKPOINT, RUNLOG

TINY = ["--set", "model.channels=4", "--set", "model.n_blocks=0", "--set", "train.lr_patch=6",
        "--steps", "4", "--batch-size", "2", "--eval-every", "2", "--val-count", "1"]


def ecosr(*argv) -> int:
    return asyncio.run(run([str(a) for a in argv]))


class TestUsage(unittest.TestCase):
    def test_unknown_command(self):
        self.assertEqual(ecosr("fly"), EXIT_USAGE)

    def test_unknown_override(self):
        with self.assertLogs("ecosr", level="ERROR") as logs:
            code = ecosr("oracle-check", "--trials", 1, "--set", "train.momentum=0.9")
        self.assertEqual(code, EXIT_USAGE)
        self.assertEqual(len(logs.output), 1)
        self.assertIn("config train.momentum: unknown key", logs.output[0])

    def test_unknown_config_key(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "exp.json"
            path.write_text(json.dumps({"train": {"epochs": 3}}))
            with self.assertLogs("ecosr", level="ERROR") as logs:
                self.assertEqual(ecosr("oracle-check", "--trials", 1, "--config", path), EXIT_USAGE)
            self.assertIn("config train.epochs: unknown key", logs.output[0])
            path.write_text("{")
            with self.assertLogs("ecosr", level="ERROR") as logs:
                self.assertEqual(ecosr("oracle-check", "--trials", 1, "--config", path), EXIT_USAGE)
            self.assertIn("invalid JSON", logs.output[0])


class TestResize(unittest.TestCase):
    def test_unit_scale_reencodes_input(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            write_png(tmp / "in.png", np.random.default_rng(0).uniform(size=(10, 12, 3)))
            write_png(tmp / "expected.png", read_png(tmp / "in.png"))
            self.assertEqual(ecosr("resize", "--in", tmp / "in.png", "--out", tmp / "out.png", "--scale", "1"),
                             EXIT_OK)
            self.assertEqual((tmp / "out.png").read_bytes(), (tmp / "expected.png").read_bytes())

    def test_halving(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            write_png(tmp / "in.png", np.full((10, 12, 3), 0.5))
            self.assertEqual(ecosr("resize", "--in", tmp / "in.png", "--out", tmp / "out.png", "--scale", "1/2"),
                             EXIT_OK)
            self.assertEqual(read_png(tmp / "out.png").shape, (5, 6, 3))
            self.assertEqual(ecosr("resize", "--in", tmp / "in.png", "--out", tmp / "out.png", "--scale", "1/2"),
                             EXIT_RUNTIME)

    def test_antialias_is_opt_in(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            write_png(tmp / "in.png", np.random.default_rng(1).uniform(size=(16, 16, 3)))
            src = read_png(tmp / "in.png")
            for antialias in (False, True):
                write_png(tmp / f"expected{antialias}.png", resize(src, ResizeSpec(Fraction(1, 2), antialias)))
            self.assertEqual(ecosr("resize", "--in", tmp / "in.png", "--out", tmp / "plain.png", "--scale", "1/2"),
                             EXIT_OK)
            self.assertEqual(ecosr("resize", "--in", tmp / "in.png", "--out", tmp / "smooth.png", "--scale", "1/2",
                                   "--antialias"), EXIT_OK)
            self.assertEqual((tmp / "plain.png").read_bytes(), (tmp / "expectedFalse.png").read_bytes())
            self.assertEqual((tmp / "smooth.png").read_bytes(), (tmp / "expectedTrue.png").read_bytes())

    def test_bad_arguments(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            self.assertEqual(ecosr("resize", "--in", tmp / "none.png", "--out", tmp / "o.png", "--scale", "2"),
                             EXIT_RUNTIME)
            write_png(tmp / "in.png", np.zeros((4, 4, 3)))
            self.assertEqual(ecosr("resize", "--in", tmp / "in.png", "--out", tmp / "o.png", "--scale", "0"),
                             EXIT_USAGE)
            self.assertFalse((tmp / "o.png").exists())


class TestOracleCheck(unittest.TestCase):
    def test_runs_with_defaults(self):
        self.assertEqual(ecosr("oracle-check", "--k", 1), EXIT_OK)

    def test_single_sample(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "oracle.json"
            self.assertEqual(ecosr("oracle-check", "--k", 1, "--trials", 20, "--out", out), EXIT_OK)
            report = read_json(out)
            resolved = read_json(Path(tmp) / "oracle.config.json")
        self.assertEqual(report["mean_eps_norm"], 0.0)
        self.assertEqual(report["violations"], 0)
        self.assertEqual(report["k"], 1)
        self.assertEqual(resolved["train"]["total_steps"], 2000)

    def test_fit_steps_stay_out_of_the_training_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "oracle.json"
            self.assertEqual(ecosr("oracle-check", "--k", 2, "--trials", 5, "--steps", 3, "--out", out,
                                   "--set", "model.channels=4", "--set", "model.n_blocks=0"), EXIT_OK)
            self.assertEqual(read_json(out)["training_distance_curve"][-1][0], 3)
            self.assertEqual(read_json(Path(tmp) / "oracle.config.json")["train"]["total_steps"], 2000)


class TestWorkflow(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.tmp = tmp = Path(cls._tmp.name)
        cls.data = ["--data", tmp / "prepared", "--cache", tmp / "centroids"]
        cls.setup_codes = [
            ecosr("synth-data", "--out", tmp / "hr", "--count", 4, "--size", 24),
            ecosr("prepare-data", "--hr-dir", tmp / "hr", *cls.data),
            ecosr("pretrain", *cls.data, *TINY, "--out-dir", tmp / "teacher"),
            ecosr("gen-centroids", *cls.data, "--teacher", tmp / "teacher" / CHECKPOINT),
        ]
        cls.item = read_json(tmp / "prepared" / "manifest.json")["items"][0]["id"]

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def test_setup_records_resolved_configs(self):
        self.assertEqual(self.setup_codes, [EXIT_OK] * 4)
        for rel in ("hr/config.json", "prepared/manifest.json", "prepared/config.json", "teacher/config.json",
                    "centroids/index.json", "centroids/config.json"):
            self.assertTrue((self.tmp / rel).exists(), rel)
        prepared = read_json(self.tmp / "prepared" / "config.json")
        self.assertEqual(prepared["dataset"]["hr_dir"], str(self.tmp / "hr"))
        self.assertTrue(prepared["dataset"]["antialias"])
        self.assertEqual(read_json(self.tmp / "teacher" / "config.json")["objective"]["mode"], "vanilla")

    def test_eco_without_centroids(self):
        out = self.tmp / "uncached"
        with self.assertLogs("ecosr", level="ERROR") as logs:
            code = ecosr("train", "--objective", "eco", "--data", self.tmp / "prepared", "--cache",
                         self.tmp / "nowhere", *TINY, "--out-dir", out)
        self.assertEqual(code, EXIT_RUNTIME)
        self.assertIn("gen-centroids", "\n".join(logs.output))
        self.assertFalse(out.exists())

    def test_train_then_analyse(self):
        tmp, data = self.tmp, self.data
        self.assertEqual(ecosr("train", "--objective", "eco", *data, *TINY, "--out-dir", tmp / "eco"), EXIT_OK)
        self.assertTrue((tmp / "eco" / RUNLOG).exists())
        resolved = read_json(tmp / "eco" / "config.json")
        self.assertEqual(resolved["objective"]["mode"], "eco")
        self.assertEqual(resolved["train"]["total_steps"], 4)
        self.assertEqual(ecosr("train", "--objective", "eco", *data, *TINY, "--out-dir", tmp / "eco"),
                         EXIT_RUNTIME)

        ckpt = tmp / "eco" / CHECKPOINT
        self.assertEqual(ecosr("eval", *data, "--ckpt", ckpt, "--set", f"paths.out_dir={tmp / 'evals'}"),
                         EXIT_OK)
        rows = (tmp / "evals" / "eval.csv").read_text().splitlines()
        self.assertEqual(rows[0], "id,psnr,ssim")
        self.assertTrue(rows[-1].startswith("mean,"))
        self.assertTrue((tmp / "evals" / "eval.config.json").exists())

        self.assertEqual(ecosr("probe", *data, "--ckpt", ckpt, "--alpha", 0.5, "--out", tmp / "probe.csv",
                               "--set", "train.lr_patch=6"), EXIT_OK)
        self.assertEqual(len((tmp / "probe.csv").read_text().splitlines()), 1 + 8)
        self.assertEqual(read_json(tmp / "probe.config.json")["train"]["lr_patch"], 6)

        self.assertEqual(ecosr("spectrum", *data, "--ckpt", ckpt, "--item", self.item, "--alpha", 0.5,
                               "--out", tmp / "spectrum"), EXIT_OK)
        self.assertTrue((tmp / "spectrum" / "magnitude.png").exists())
        self.assertTrue((tmp / "spectrum" / "config.json").exists())
        self.assertEqual(len((tmp / "spectrum" / "profile.csv").read_text().splitlines()), 1 + 12)

        self.assertEqual(ecosr("target-dump", *data, "--item", self.item, "--alphas", "0,1",
                               "--out", tmp / "targets.png"), EXIT_OK)
        self.assertEqual(read_png(tmp / "targets.png").shape, (24, 50, 3))
        self.assertTrue((tmp / "targets.config.json").exists())

    def test_compare(self):
        out = self.tmp / "compare"
        argv = ["compare", "--objectives", "vanilla,eco", "--seeds", "0,1", *self.data, *TINY,
                "--probe-every", 2, "--out-dir", out]
        self.assertEqual(ecosr(*argv), EXIT_OK)
        summary = read_json(out / "summary.json")
        self.assertEqual(len(summary["runs"]), 4)
        self.assertEqual(set(summary["groups"]), {"vanilla", "eco"})
        self.assertEqual(summary["at_step"], 4)
        for entry in summary["runs"]:
            self.assertIsNotNone(entry["psnr_at"])
            self.assertIsNotNone(entry["probe_p95"])
            self.assertTrue((Path(entry["dir"]) / RUNLOG).exists())
        self.assertIsNotNone(summary["groups"]["eco"]["psnr_mean"])
        self.assertTrue((out / "config.json").exists())
        self.assertEqual(ecosr(*argv), EXIT_RUNTIME)

    def test_sweep_batch(self):
        out = self.tmp / "sweep"
        self.assertEqual(ecosr("sweep-batch", "--sizes", "1,2", "--objectives", "eco", "--seeds", 0, *self.data,
                               *TINY, "--out-dir", out), EXIT_OK)
        summary = read_json(out / "summary.json")
        self.assertEqual(set(summary["groups"]), {"bs1/eco", "bs2/eco"})
        for size in (1, 2):
            resolved = read_json(out / f"bs{size}" / "eco" / "seed0" / "config.json")
            self.assertEqual(resolved["train"]["batch_size"], size)
            self.assertEqual(resolved["objective"]["mode"], "eco")


if __name__ == "__main__":
    unittest.main()
