"""
Created on 2026-10-18

@author: wf
"""

import getpass
import os
import shutil
import tempfile
import unittest

import numpy as np

from pidm.data import Trajectory
from pidm.profiler import Profiler


class Basetest(unittest.TestCase):
    """
    base test case
    """

    def setUp(self, debug=False, profile=True):
        """
        setUp test environment
        """
        unittest.TestCase.setUp(self)
        self.debug = debug
        self.profile = profile
        msg = f"test {self._testMethodName}, debug={self.debug}"
        self.profiler = Profiler(msg, profile=self.profile)
        self._tmp_dirs = []

    def tearDown(self):
        unittest.TestCase.tearDown(self)
        for tmp_dir in self._tmp_dirs:
            shutil.rmtree(tmp_dir, ignore_errors=True)
        self.profiler.time()

    def tmp_dir(self) -> str:
        """
        get a scratch directory that is removed after the test
        """
        tmp_dir = tempfile.mkdtemp(prefix="pidm_test_")
        self._tmp_dirs.append(tmp_dir)
        return tmp_dir

    def rng(self, seed: int = 0) -> np.random.Generator:
        """
        get a seeded random generator for property tests
        """
        return np.random.default_rng(seed)

    def assertAllClose(self, actual, expected, rtol=1e-7, atol=0.0, msg=None):
        """
        assert two arrays agree elementwise within tolerance
        """
        np.testing.assert_allclose(actual, expected, rtol=rtol, atol=atol, err_msg=msg or "")

    def assertArrayEqual(self, actual, expected, msg=None):
        """
        assert two arrays are bit-identical
        """
        np.testing.assert_array_equal(actual, expected, err_msg=msg or "")

    def synthetic_trajectory(
        self,
        length: int,
        instruction: str = None,
        image_size: int = 4,
        seed: int = 0,
        task: str = "pick-place",
    ) -> Trajectory:
        """
        a random trajectory with binary gripper actions for data and loss tests
        """
        rng = self.rng(seed)
        actions = rng.uniform(-1.0, 1.0, size=(length, 3)).astype(np.float32)
        actions[:, 2] = rng.integers(0, 2, size=length)
        return Trajectory(
            task=task if instruction is not None else "play",
            instruction=instruction,
            seed=seed,
            images=rng.integers(0, 256, size=(length, 2, image_size, image_size, 3), dtype=np.uint8),
            states=rng.uniform(0.0, 1.0, size=(length, 4)).astype(np.float32),
            actions=actions,
        )

    @staticmethod
    def inPublicCI():
        """
        are we running in a public Continuous Integration Environment?
        """
        publicCI = getpass.getuser() in ["travis", "runner"]
        jenkins = "JENKINS_HOME" in os.environ
        return publicCI or jenkins


if __name__ == "__main__":
    unittest.main()
