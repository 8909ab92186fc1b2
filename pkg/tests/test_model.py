"""
Created on 2026-10-18

@author: wf
"""

import dataclasses
import itertools

import numpy as np

from pidm import tensor as T
from pidm.basetest import Basetest
from pidm.data import Batch, sample_window
from pidm.layers import ParamStore, sincos_2d
from pidm.model import (
    FRS,
    GOAL,
    IMG,
    INV,
    STATE,
    Model,
    ModelConfig,
    TokenizeError,
    TokenLayout,
    build_mask,
    encode_instruction,
)
from pidm.sim import INSTRUCTIONS
from pidm.tensor import Tensor, no_grad
from pidm.train import ExperimentConfig
from pidm.yamlable import ConfigError

PICK = INSTRUCTIONS["pick-place"]


def oracle_mask(m: int, k: int, n: int, mode: str, detach_frs: bool = False) -> np.ndarray:
    """
    attendability re-derived position by position from the visibility rules
    """
    groups = [(GOAL, 1), (IMG, 2 * k), (STATE, 1), (FRS, 2), (INV, n)]
    positions = [(t, group, slot) for t in range(m) for group, size in groups for slot in range(size)]

    def step_visible(tq: int, tk: int) -> bool:
        return tk == tq if mode == "pretrain" else tk <= tq

    def allowed(query, key) -> bool:
        tq, gq, sq = query
        tk, gk, sk = key
        if query == key:
            return True
        if gk in (GOAL, IMG, STATE):
            return step_visible(tq, tk)
        if gk == FRS:
            return gq == INV and tk == tq and not detach_frs
        return False

    size = len(positions)
    mask = np.zeros((size, size), dtype=bool)
    for i, j in itertools.product(range(size), range(size)):
        mask[i, j] = allowed(positions[i], positions[j])
    return mask


class TestModel(Basetest):
    """
    test tokenization, the attention mask, the backbone and the readout decoders
    """

    def setUp(self, debug=False, profile=True):
        Basetest.setUp(self, debug=debug, profile=profile)
        self.experiment = ExperimentConfig.preset("tiny")

    def config(self, mode: str = "finetune") -> ModelConfig:
        model_config, _train_config = self.experiment.for_mode(mode)
        return model_config

    def batch(self, config: ModelConfig, size: int = 2, seed: int = 0) -> Batch:
        mode = config.mode
        windows = []
        for i in range(size):
            traj = self.synthetic_trajectory(12, PICK, image_size=config.image_size, seed=seed + i)
            windows.append(sample_window(traj, 3 + i, config.history, config.chunk, mode))
        return Batch.stack(windows)

    def test_layout_counts(self):
        toy = ExperimentConfig.preset("toy").model
        self.assertEqual(15, toy.width)
        self.assertEqual(105, toy.tokens)
        layout = TokenLayout.of(toy)
        self.assertEqual((2, INV, 1), layout.describe(layout.index(2, INV, 1)))
        self.assertEqual(105, build_mask(toy).shape[0])

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            ModelConfig(embed_dim=30, heads=4).validate()
        with self.assertRaises(ConfigError):
            ModelConfig(patch_size=5).validate()
        with self.assertRaises(ConfigError):
            ModelConfig(chunk=0).validate()
        with self.assertRaises(ConfigError):
            ModelConfig(arm_dim=3).validate()

    def test_mask_examples(self):
        config = dataclasses.replace(self.config(), resampler_latents=2, history=4, chunk=3)
        layout = TokenLayout.of(config)
        mask = build_mask(config)
        self.assertTrue(mask[layout.index(1, INV, 0), layout.index(1, FRS, 0)])
        pretrain = build_mask(dataclasses.replace(config, mode="pretrain"))
        self.assertFalse(pretrain[layout.index(3, FRS, 0), layout.index(2, IMG, 0)])
        for each in (mask, pretrain):
            for t, t2 in itertools.product(range(4), range(4)):
                for view, slot in itertools.product(range(2), range(3)):
                    self.assertFalse(each[layout.index(t, FRS, view), layout.index(t2, INV, slot)])

    def test_mask_oracle(self):
        base = self.config()
        for m, k, n in itertools.product(range(1, 4), range(1, 3), range(1, 4)):
            for mode in ("pretrain", "finetune"):
                config = dataclasses.replace(base, history=m, resampler_latents=k, chunk=n, mode=mode)
                for detach in (False, True):
                    expected = oracle_mask(m, k, n, mode, detach)
                    self.assertArrayEqual(build_mask(config, detach), expected, f"m={m} k={k} n={n} {mode}")

    def test_encode_instruction(self):
        ids = encode_instruction("open the drawer")
        self.assertEqual(3, len(ids))
        self.assertTrue(all(i >= 1 for i in ids))
        with self.assertRaises(TokenizeError) as context:
            encode_instruction("open the window")
        self.assertIn("window", str(context.exception))

    def test_forward_shapes(self):
        config = self.config()
        model = Model(config, seed=1)
        frs, inv = model.forward(self.batch(config))
        self.assertEqual((2, config.history, 2, config.embed_dim), frs.shape)
        self.assertEqual((2, config.history, config.chunk, config.embed_dim), inv.shape)
        image = model.decode_image(frs)
        self.assertEqual((2, config.history, 2, config.image_size, config.image_size, 3), image.shape)
        arm, gripper = model.decode_actions(inv)
        self.assertEqual((2, config.history, config.chunk, 2), arm.shape)
        self.assertEqual((2, config.history, config.chunk, 1), gripper.shape)

    def test_targets_are_not_inputs(self):
        config = self.config()
        model = Model(config, seed=1)
        batch = self.batch(config)
        other = dataclasses.replace(
            batch,
            target_images=255 - batch.target_images,
            target_actions=-batch.target_actions,
        )
        self.assertArrayEqual(model.tokenize(batch).data, model.tokenize(other).data)

    def test_pretrain_goal_token(self):
        config = self.config("pretrain")
        model = Model(config, seed=2)
        batch = self.batch(config)
        tokens = model.tokenize(batch).data.reshape(batch.size, config.history, config.width, config.embed_dim)
        goal = model.tokenize_state(batch.goal_states).data
        for t in range(config.history):
            expected = goal + model.timestep_embed.data[t]
            self.assertAllClose(tokens[:, t, 0], expected, rtol=1e-12, atol=1e-12)

    def test_mode_mismatch(self):
        model = Model(self.config("pretrain"))
        with self.assertRaises(TokenizeError):
            model.tokenize(self.batch(self.config("finetune")))

    def perturbed(self, model: Model, batch: Batch, t: int, group: str):
        tokens = model.tokenize(batch)
        data = tokens.data.copy()
        sl = model.layout.group_slice(group)
        start = t * model.config.width
        rows = slice(start + sl.start, start + sl.stop)
        data[:, rows] += self.rng(7).normal(size=data[:, rows].shape)
        return model.encode(tokens), model.encode(Tensor(data, dtype=model.config.dtype))

    def test_causality_probe(self):
        config = dataclasses.replace(self.config(), history=3)
        model = Model(config, seed=3)
        batch = self.batch(config)
        with no_grad():
            (frs, inv), (frs2, inv2) = self.perturbed(model, batch, config.history - 1, IMG)
        self.assertAllClose(frs2.data[:, :-1], frs.data[:, :-1], rtol=1e-12, atol=1e-12)
        self.assertAllClose(inv2.data[:, :-1], inv.data[:, :-1], rtol=1e-12, atol=1e-12)
        self.assertFalse(np.array_equal(inv.data[:, -1], inv2.data[:, -1]))

    def test_action_tokens_hidden_from_foresight(self):
        config = dataclasses.replace(self.config(), history=3)
        model = Model(config, seed=3)
        batch = self.batch(config)
        for t in (0, config.history - 1):
            with no_grad():
                (frs, inv), (frs2, inv2) = self.perturbed(model, batch, t, INV)
            self.assertAllClose(frs2.data, frs.data, rtol=1e-12, atol=1e-12)
            self.assertFalse(np.array_equal(inv.data[:, t], inv2.data[:, t]))

    def test_pretrain_probe(self):
        config = dataclasses.replace(self.config("pretrain"), history=3)
        model = Model(config, seed=3)
        batch = self.batch(config)
        with no_grad():
            (frs, inv), (frs2, inv2) = self.perturbed(model, batch, 0, IMG)
        self.assertAllClose(frs2.data[:, 1:], frs.data[:, 1:], rtol=1e-12, atol=1e-12)
        self.assertAllClose(inv2.data[:, 1:], inv.data[:, 1:], rtol=1e-12, atol=1e-12)

    def test_foresight_feeds_actions(self):
        config = self.config()
        model = Model(config, seed=4)
        batch = self.batch(config)
        t = config.history - 1
        with no_grad():
            (_frs, inv), (_frs2, inv2) = self.perturbed(model, batch, t, FRS)
        self.assertFalse(np.array_equal(inv.data[:, t], inv2.data[:, t]))
        detached = Model(config, seed=4, detach_frs=True)
        with no_grad():
            (_frs, inv), (_frs2, inv2) = self.perturbed(detached, batch, t, FRS)
        self.assertAllClose(inv2.data, inv.data, rtol=1e-12, atol=1e-12)

    def test_resampler(self):
        config = self.config()
        model = Model(config, seed=5)
        rng = self.rng(1)
        images = rng.integers(0, 256, size=(1, 1, 2, config.image_size, config.image_size, 3), dtype=np.uint8)
        with no_grad():
            first = model.tokenize_images(images).data
            again = model.tokenize_images(images).data
            other = model.tokenize_images(255 - images).data
        self.assertEqual((1, 1, 2 * config.resampler_latents, config.embed_dim), first.shape)
        self.assertArrayEqual(first, again)
        self.assertFalse(np.array_equal(first, other))

    def test_zero_heads(self):
        config = self.config()
        model = Model(config, seed=6)
        for name in ("arm", "gripper"):
            for part in ("weight", "bias"):
                model.params[f"action_decoder.{name}.{part}"].data[...] = 0.0
        latents = Tensor(self.rng(2).normal(size=(1, 1, config.chunk, config.embed_dim)), dtype=config.dtype)
        arm, gripper = model.decode_actions(latents)
        self.assertTrue(np.all(arm.data == 0.0))
        self.assertTrue(np.all(gripper.data == 0.5))

    def test_action_bounds(self):
        config = self.config()
        rng = self.rng(3)
        for seed in range(5):
            model = Model(config, seed=seed)
            latents = Tensor(rng.normal(scale=10.0, size=(10, 20, config.chunk, config.embed_dim)), dtype=config.dtype)
            arm, gripper = model.decode_actions(latents)
            self.assertTrue(np.all(np.abs(arm.data) <= 1.0))
            self.assertTrue(np.all((gripper.data >= 0.0) & (gripper.data <= 1.0)))

    def test_image_decoder_per_view(self):
        config = self.config()
        model = Model(config, seed=7)
        latents = Tensor(self.rng(4).normal(size=(1, 2, config.embed_dim)), dtype=config.dtype)
        both = model.decode_image(latents).data
        first = model.decode_image(latents[:, :1]).data
        self.assertAllClose(both[:, :1], first, rtol=1e-10, atol=1e-12)
        self.assertArrayEqual(both, model.decode_image(latents).data)

    def test_param_init_is_order_independent(self):
        a = ParamStore(seed=3, dtype="f64")
        a.normal("x.weight", (4, 4))
        a.normal("y.weight", (2,))
        b = ParamStore(seed=3, dtype="f64")
        b.normal("y.weight", (2,))
        b.normal("x.weight", (4, 4))
        self.assertArrayEqual(a.params["x.weight"].data, b.params["x.weight"].data)
        self.assertTrue(np.all(np.abs(a.params["x.weight"].data) <= 0.04))
        with self.assertRaises(ValueError):
            a.load_arrays({"x.weight": np.zeros((4, 4))})

    def test_frozen_prefixes(self):
        model = Model(self.config(), seed=0)
        trainable = model.trainable(freeze_encoders=True)
        self.assertNotIn("patch_embed.weight", trainable)
        self.assertNotIn("language.embed.table", trainable)
        self.assertIn("language.proj.weight", trainable)
        self.assertLess(len(trainable), len(model.params))

    def test_sincos(self):
        pos = sincos_2d(16, 4)
        self.assertEqual((16, 16), pos.shape)
        self.assertEqual(len({row.tobytes() for row in pos}), 16)
        with self.assertRaises(ValueError):
            sincos_2d(10, 4)

    def test_f32_forward(self):
        config = dataclasses.replace(self.config(), dtype="f32")
        model = Model(config, seed=0)
        frs, _inv = model.forward(self.batch(config))
        self.assertEqual(np.float32, frs.dtype)
        self.assertTrue(np.all(np.isfinite(T.sum(frs).data)))
