"""
Created on 2026-10-18

@author: wf
"""

import csv
import io
import os
from contextlib import redirect_stderr, redirect_stdout

import orjson

from pidm.basetest import Basetest
from pidm.data import DatasetManifest, read_trajectory
from pidm.pidm_cmd import main
from pidm.train import load_checkpoint

FAST = ["--preset", "tiny", "--epochs", "1"]


class TestCli(Basetest):
    """
    test the pidm command line
    """

    def run_cli(self, *argv: str):
        """
        run pidm with the given arguments

        Returns:
            tuple: exit code, stdout and stderr text
        """
        stdout, stderr = io.StringIO(), io.StringIO()
        with redirect_stdout(stdout), redirect_stderr(stderr):
            exit_code = main(list(argv))
        if self.debug:
            print(stdout.getvalue(), stderr.getvalue())
        return exit_code, stdout.getvalue(), stderr.getvalue()

    def gen_data(self, out: str, *extra: str):
        exit_code, _stdout, stderr = self.run_cli(
            "gen-data",
            "--out",
            out,
            "--tasks",
            "press-button,open-drawer,pick-place",
            "--demos-per-task",
            "2",
            "--play",
            "3",
            "--horizon",
            "20",
            "--preset",
            "tiny",
            *extra,
        )
        self.assertEqual(0, exit_code, stderr)

    def test_no_args(self):
        exit_code, stdout, _stderr = self.run_cli()
        self.assertEqual(1, exit_code)
        self.assertIn("usage", stdout)

    def test_about(self):
        exit_code, stdout, _stderr = self.run_cli("--about")
        self.assertEqual(0, exit_code)
        self.assertIn("pidm", stdout)

    def test_gen_data(self):
        out = os.path.join(self.tmp_dir(), "data")
        self.gen_data(out)
        manifest = DatasetManifest.load(out)
        self.assertEqual(6, len(manifest.paths("finetune")))
        self.assertEqual(3, len(manifest.paths("pretrain")))
        self.assertEqual(8, manifest.image_size)
        demo = read_trajectory(os.path.join(out, "demo_pick-place_0000.traj"))
        self.assertEqual("pick-place", demo.task)
        play = read_trajectory(os.path.join(out, "play_0002.traj"))
        self.assertEqual(20, play.length)

    def test_gen_data_is_deterministic(self):
        first = os.path.join(self.tmp_dir(), "first")
        second = os.path.join(self.tmp_dir(), "second")
        self.gen_data(first)
        self.gen_data(second)
        for name in sorted(os.listdir(first)):
            with open(os.path.join(first, name), "rb") as a, open(os.path.join(second, name), "rb") as b:
                self.assertEqual(a.read(), b.read(), name)

    def test_gen_data_refuses_non_empty(self):
        out = os.path.join(self.tmp_dir(), "data")
        self.gen_data(out)
        exit_code, _stdout, stderr = self.run_cli("gen-data", "--out", out, "--preset", "tiny")
        self.assertEqual(2, exit_code)
        self.assertEqual(1, len(stderr.strip().splitlines()))
        self.assertTrue(stderr.startswith("pidm: FileExistsError:"))
        self.gen_data(out, "--force")

    def test_unknown_task(self):
        exit_code, _stdout, stderr = self.run_cli("gen-data", "--out", self.tmp_dir(), "--tasks", "fly")
        self.assertEqual(2, exit_code)
        self.assertIn("ConfigError", stderr)

    def test_oracle_eval(self):
        report_path = os.path.join(self.tmp_dir(), "report.json")
        frames = os.path.join(self.tmp_dir(), "frames")
        exit_code, stdout, stderr = self.run_cli(
            "eval",
            "--oracle",
            "--tasks",
            "stack,close-drawer",
            "--episodes",
            "3",
            "--chains",
            "2",
            "--image-size",
            "8",
            "--report",
            report_path,
            "--frames",
            frames,
        )
        self.assertEqual(0, exit_code, stderr)
        self.assertIn("stack: SR 1.000", stdout)
        with open(report_path, "rb") as file:
            report = orjson.loads(file.read())
        self.assertEqual("oracle", report["policy"])
        self.assertEqual([1.0, 1.0], [task["success_rate"] for task in report["tasks"]])
        self.assertEqual(5.0, report["sequences"]["avg_len"])
        self.assertTrue(os.listdir(os.path.join(frames, "stack")))

    def test_eval_needs_checkpoint(self):
        exit_code, _stdout, stderr = self.run_cli("eval", "--report", os.path.join(self.tmp_dir(), "r.json"))
        self.assertEqual(2, exit_code)
        self.assertIn("--ckpt", stderr)

    def test_pretrain_finetune_eval(self):
        work = self.tmp_dir()
        data = os.path.join(work, "data")
        self.gen_data(data)
        pretrained = os.path.join(work, "pretrain.ckpt")
        exit_code, _stdout, stderr = self.run_cli("pretrain", "--data", data, "--out", pretrained, *FAST)
        self.assertEqual(0, exit_code, stderr)
        self.assertEqual("pretrain", load_checkpoint(pretrained).model_config.mode)
        self.assertTrue(os.path.isfile(f"{pretrained}.run.yaml"))
        report_path = os.path.join(work, "report.json")
        exit_code, _stdout, stderr = self.run_cli("eval", "--ckpt", pretrained, "--report", report_path)
        self.assertEqual(2, exit_code)
        self.assertIn("PolicyError", stderr)
        self.assertIn("pretrain", stderr)

        finetuned = os.path.join(work, "finetune.ckpt")
        exit_code, _stdout, stderr = self.run_cli(
            "finetune", "--data", data, "--out", finetuned, "--init", pretrained, "--ablate", "detach_frs", *FAST
        )
        self.assertEqual(0, exit_code, stderr)
        ckpt = load_checkpoint(finetuned)
        self.assertTrue(ckpt.train_config.detach_frs)
        with open(f"{finetuned}.log.csv") as file:
            header = file.readline()
            rows = list(csv.reader(file))
        self.assertIn("mode=finetune", header)
        self.assertEqual(2, len(rows))

        exit_code, stdout, stderr = self.run_cli(
            "eval", "--ckpt", finetuned, "--tasks", "press-button", "--episodes", "1", "--cap", "4", "--report", report_path
        )
        self.assertEqual(0, exit_code, stderr)
        self.assertIn("press-button: SR", stdout)
        with open(report_path, "rb") as file:
            report = orjson.loads(file.read())
        self.assertEqual(16, len(report["fingerprint"]))
        self.assertEqual("ensemble", report["policy"])

    def test_image_size_mismatch(self):
        data = os.path.join(self.tmp_dir(), "data")
        self.gen_data(data)
        out = os.path.join(self.tmp_dir(), "toy.ckpt")
        exit_code, _stdout, stderr = self.run_cli("pretrain", "--data", data, "--out", out, "--preset", "toy")
        self.assertEqual(2, exit_code)
        self.assertIn("image size", stderr)

    def test_gradcheck(self):
        exit_code, stdout, stderr = self.run_cli("gradcheck", "--preset", "tiny", "--batch", "1", "--tolerance", "2")
        self.assertEqual(0, exit_code, stderr)
        self.assertIn("max relative error", stdout)

    def test_sweep(self):
        work = self.tmp_dir()
        data = os.path.join(work, "data")
        self.gen_data(data)
        out = os.path.join(work, "sweep.csv")
        exit_code, _stdout, stderr = self.run_cli(
            "sweep",
            "--data",
            data,
            "--fractions",
            "0.5,1.0",
            "--seeds",
            "1",
            "--variants",
            "scratch,pretrained",
            "--tasks",
            "press-button",
            "--episodes",
            "1",
            "--out",
            out,
            *FAST,
        )
        self.assertEqual(0, exit_code, stderr)
        with open(out) as file:
            rows = list(csv.DictReader(file))
        self.assertEqual(4, len(rows))
        self.assertEqual(["0.5", "0.5", "1.0", "1.0"], [row["fraction"] for row in rows])
        self.assertTrue(os.path.isfile(os.path.join(f"{out}.runs", "pretrain_seed0.ckpt")))
