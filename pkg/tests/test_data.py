"""
Created on 2026-10-18

@author: wf
"""

import os

import numpy as np

from pidm.basetest import Basetest
from pidm.data import (
    DatasetError,
    DatasetManifest,
    DatasetSplit,
    ManifestEntry,
    Trajectory,
    TrajectoryFormatError,
    WindowError,
    batch_iter,
    focus_range,
    from_bytes,
    read_trajectory,
    sample_window,
    subsample,
    to_bytes,
    window_index,
    write_trajectory,
)
from pidm.sim import INSTRUCTIONS, TaskSpec, gen_demos

PICK = INSTRUCTIONS["pick-place"]


class TestData(Basetest):
    """
    test the trajectory format, windows, splits and batching
    """

    def test_round_trip(self):
        demo = gen_demos(TaskSpec.of("stack"), 1, seed=2, image_size=8)[0]
        path = os.path.join(self.tmp_dir(), "demo.traj")
        write_trajectory(demo, path)
        loaded = read_trajectory(path)
        self.assertTrue(demo.equals(loaded))
        self.assertEqual(to_bytes(demo), to_bytes(loaded))
        self.assertEqual(demo.stages, loaded.stages)

    def test_truncated_images(self):
        raw = to_bytes(self.synthetic_trajectory(5, PICK))
        images_start = len(raw) - 5 * 2 * 4 * 4 * 3 - 5 * 4 * 4 - 5 * 3 * 4
        with self.assertRaises(TrajectoryFormatError) as context:
            from_bytes(raw[: images_start + 10])
        self.assertIn("images", str(context.exception))
        self.assertIn(f"byte offset {images_start}", str(context.exception))

    def test_bad_magic_and_trailing_bytes(self):
        raw = to_bytes(self.synthetic_trajectory(3, PICK))
        with self.assertRaises(TrajectoryFormatError):
            from_bytes(b"XXXX" + raw[4:])
        with self.assertRaises(TrajectoryFormatError) as context:
            from_bytes(raw + b"\x00")
        self.assertIn("trailing", str(context.exception))

    def test_zero_length(self):
        empty = Trajectory("play", None, 0, np.zeros((0, 2, 4, 4, 3), np.uint8), np.zeros((0, 4)), np.zeros((0, 3)))
        with self.assertRaises(TrajectoryFormatError):
            write_trajectory(empty, os.path.join(self.tmp_dir(), "empty.traj"))
        raw = to_bytes(empty)
        with self.assertRaises(TrajectoryFormatError) as context:
            from_bytes(raw)
        self.assertIn("T=0", str(context.exception))

    def test_window_indices(self):
        traj = self.synthetic_trajectory(20, PICK)
        window = sample_window(traj, 5, 7, 3, "finetune")
        self.assertEqual([0, 0, 1, 2, 3, 4, 5], window.indices.tolist())
        self.assertTrue(window.valid.all())
        self.assertArrayEqual(window.target_images[-1], traj.images[8])
        self.assertArrayEqual(window.target_actions[-1], traj.actions[5:8])
        self.assertEqual(PICK, window.instruction)
        self.assertIsNone(window.goal_state)

    def test_window_boundary(self):
        traj = self.synthetic_trajectory(20, PICK)
        t = 20 - 1 - 3
        window = sample_window(traj, t, 7, 3, "finetune")
        self.assertTrue(window.valid[-1])
        self.assertArrayEqual(window.target_images[-1], traj.images[19])
        with self.assertRaises(WindowError):
            sample_window(traj, t + 1, 7, 3, "finetune")

    def test_pretrain_goal(self):
        traj = self.synthetic_trajectory(20, PICK)
        window = sample_window(traj, 4, 7, 3, "pretrain")
        self.assertArrayEqual(window.goal_state, traj.states[8])
        self.assertIsNone(window.instruction)
        self.assertEqual(range(0, 20 - 3 - 1), focus_range(20, 3, "pretrain"))

    def test_finetune_needs_instruction(self):
        play = self.synthetic_trajectory(20)
        with self.assertRaises(WindowError):
            sample_window(play, 3, 7, 3, "finetune")
        with self.assertRaises(DatasetError):
            window_index([play], 3, "finetune")

    def test_loss_last_only(self):
        traj = self.synthetic_trajectory(20, PICK)
        window = sample_window(traj, 10, 4, 3, "finetune", loss_last_only=True)
        self.assertEqual([False, False, False, True], window.valid.tolist())

    def test_window_fuzz(self):
        rng = self.rng(5)
        for _ in range(200):
            length = int(rng.integers(2, 30))
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 8))
            mode = "finetune" if rng.integers(2) else "pretrain"
            traj = self.synthetic_trajectory(length, PICK, image_size=2)
            for t in focus_range(length, n, mode):
                window = sample_window(traj, t, m, n, mode)
                self.assertLessEqual(window.indices.max(), length - 1)
                horizon = n if mode == "finetune" else n + 1
                for i, tau in enumerate(window.indices):
                    self.assertEqual(bool(window.valid[i]), tau + horizon <= length - 1)

    def test_short_trajectories_skipped(self):
        short = self.synthetic_trajectory(4, PICK)
        long = self.synthetic_trajectory(10, PICK, seed=1)
        with self.assertLogs("pidm.data", level="WARNING"):
            pairs = window_index([short, long], 3, "finetune")
        self.assertTrue(all(i == 1 for i, _t in pairs))
        self.assertEqual(10 - 3, len(pairs))

    def test_batch_sizes(self):
        # T=13, n=3 gives 10 finetune windows
        traj = self.synthetic_trajectory(13, PICK)
        sizes = [batch.size for batch in batch_iter([traj], "finetune", 4, seed=0, m=3, n=3)]
        self.assertEqual([4, 4, 2], sizes)

    def test_batch_determinism(self):
        trajs = [self.synthetic_trajectory(12, PICK, seed=s) for s in range(3)]
        first = next(batch_iter(trajs, "finetune", 5, seed=9, m=2, n=2))
        again = next(batch_iter(trajs, "finetune", 5, seed=9, m=2, n=2))
        self.assertEqual(first.sources, again.sources)
        self.assertArrayEqual(first.images, again.images)
        other_epoch = next(batch_iter(trajs, "finetune", 5, seed=9, m=2, n=2, epoch=1))
        self.assertNotEqual(first.sources, other_epoch.sources)

    def test_batch_shapes(self):
        trajs = [self.synthetic_trajectory(12, seed=s) for s in range(2)]
        batch = next(batch_iter(trajs, "pretrain", 3, seed=0, m=4, n=2))
        self.assertEqual((3, 4, 2, 4, 4, 3), batch.images.shape)
        self.assertEqual((3, 4), batch.goal_states.shape)
        self.assertEqual((3, 4, 2, 3), batch.target_actions.shape)
        self.assertIsNone(batch.instructions)

    def test_subsample(self):
        items = list(range(100))
        chosen = subsample(items, 0.1, seed=3)
        self.assertEqual(10, len(chosen))
        self.assertEqual(sorted(chosen), chosen)
        self.assertEqual(chosen, subsample(items, 0.1, seed=3))
        self.assertEqual(70, len(subsample(items, 0.7, seed=3)))
        with self.assertRaises(DatasetError):
            subsample(items[:5], 0.1, seed=0)
        with self.assertRaises(DatasetError):
            subsample(items, 1.5, seed=0)

    def write_dataset(self, directory: str, demos: int = 4, play: int = 2) -> DatasetManifest:
        entries = []
        for i in range(demos):
            path = f"demo_{i}.traj"
            traj = self.synthetic_trajectory(10, PICK, seed=i)
            write_trajectory(traj, os.path.join(directory, path))
            entries.append(ManifestEntry(path, "finetune", traj.task, traj.instruction, traj.length))
        for i in range(play):
            path = f"play_{i}.traj"
            traj = self.synthetic_trajectory(10, seed=100 + i)
            write_trajectory(traj, os.path.join(directory, path))
            entries.append(ManifestEntry(path, "pretrain", traj.task, None, traj.length))
        manifest = DatasetManifest(entries, seed=0, image_size=4)
        manifest.save(directory)
        return manifest

    def test_dataset_split(self):
        directory = self.tmp_dir()
        manifest = self.write_dataset(directory)
        loaded = DatasetManifest.load(directory)
        self.assertEqual(manifest.paths("finetune"), loaded.paths("finetune"))
        split = DatasetSplit.load(directory)
        self.assertEqual(4, len(split.finetune))
        self.assertEqual(2, len(split.pretrain))
        self.assertTrue(all(traj.instruction is None for traj in split.pretrain))
        half = DatasetSplit.load(directory, fraction=0.5, seed=1, mode="finetune")
        self.assertEqual(2, len(half.finetune))
        self.assertEqual([], half.pretrain)

    def test_overlapping_splits(self):
        directory = self.tmp_dir()
        manifest = self.write_dataset(directory, demos=1, play=1)
        manifest.entries.append(ManifestEntry("demo_0.traj", "pretrain", "pick-place"))
        manifest.save(directory)
        with self.assertRaises(DatasetError):
            DatasetSplit.load(directory)

    def test_missing_manifest(self):
        with self.assertRaises(DatasetError):
            DatasetManifest.load(self.tmp_dir())
