"""
Created on 2026-10-18

@author: wf
"""

import os

from pidm.basetest import Basetest
from pidm.pidm_cmd import RunConfig, parse_list, parse_overrides
from pidm.train import ExperimentConfig, TrainConfig
from pidm.version import Version
from pidm.yamlable import ConfigError


class TestConfig(Basetest):
    """
    test the shipped presets, YAML loading and command line overrides
    """

    def test_presets(self):
        for name in ("tiny", "toy", "paper"):
            experiment = ExperimentConfig.preset(name)
            self.assertEqual(name, experiment.model.preset)
            for mode in ("pretrain", "finetune"):
                model_config, train_config = experiment.for_mode(mode)
                self.assertEqual(mode, model_config.mode)
                self.assertEqual(mode, train_config.mode)
        paper = ExperimentConfig.preset("paper").model
        self.assertEqual((384, 24, 12), (paper.embed_dim, paper.layers, paper.heads))
        toy = ExperimentConfig.preset("toy")
        self.assertEqual((1e-4, 1e-3), (toy.pretrain.lr, toy.finetune.lr))
        with self.assertRaises(ConfigError):
            ExperimentConfig.preset("huge")

    def test_overrides(self):
        experiment = ExperimentConfig.preset("tiny")
        changed = experiment.with_overrides(
            {"model.embed_dim": "32", "finetune.lr": "0.01", "finetune.save_epochs": "1,3", "finetune.no_fore": "yes"}
        )
        self.assertEqual(32, changed.model.embed_dim)
        self.assertEqual(0.01, changed.finetune.lr)
        self.assertEqual([1, 3], changed.finetune.save_epochs)
        self.assertTrue(changed.finetune.no_fore)
        self.assertEqual(16, experiment.model.embed_dim)

    def test_unknown_keys(self):
        experiment = ExperimentConfig.preset("tiny")
        for key in ("model.size", "optimizer.lr", "embed_dim"):
            with self.assertRaises(ConfigError):
                experiment.with_overrides({key: "1"})
        with self.assertRaises(ConfigError):
            experiment.with_overrides({"model.layers": "many"})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_yaml("model:\n  embed_dims: 16\n")

    def test_yaml_round_trip(self):
        experiment = ExperimentConfig.preset("toy").with_overrides({"pretrain.epochs": "3"})
        path = os.path.join(self.tmp_dir(), "experiment.yaml")
        experiment.save_to_yaml_file(path)
        self.assertEqual(experiment, ExperimentConfig.load_from_yaml_file(path))

    def test_validation(self):
        with self.assertRaises(ConfigError):
            TrainConfig(lr=0.0).validate()
        with self.assertRaises(ConfigError):
            TrainConfig(no_fore=True, no_inv=True).validate()
        with self.assertRaises(ConfigError):
            ExperimentConfig.preset("tiny").for_mode("play")

    def test_parse_helpers(self):
        self.assertEqual({"model.layers": "2"}, parse_overrides(["model.layers = 2"]))
        with self.assertRaises(ConfigError):
            parse_overrides(["model.layers"])
        self.assertEqual(["stack", "open-drawer"], parse_list("stack, open-drawer", ("stack", "open-drawer")))
        with self.assertRaises(ConfigError):
            parse_list("stack,fly", ("stack",), "task")

    def test_run_config(self):
        run = RunConfig(command="finetune", data="data", seed=3, ablate=["no_fore"], overrides={"model.layers": "2"})
        path = os.path.join(self.tmp_dir(), "run.yaml")
        run.save_to_yaml_file(path)
        self.assertEqual(run, RunConfig.load_from_yaml_file(path))

    def test_version(self):
        version = Version()
        self.assertEqual("pidm", version.name)
