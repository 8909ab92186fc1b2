"""
Created on 2026-10-18

@author: wf
"""

import logging
import time

logger = logging.getLogger(__name__)


class Profiler:
    """
    simple profiler reporting elapsed wall clock time via logging
    """

    def __init__(self, msg: str, profile: bool = True, with_start: bool = True):
        """
        construct me with the given msg and profile active flag

        Args:
            msg(str): the message to show if profiling is active
            profile(bool): True if messages should be logged
            with_start(bool): start timing immediately
        """
        self.msg = msg
        self.profile = profile
        if with_start:
            self.start()

    def start(self):
        """
        start profiling
        """
        self.starttime = time.perf_counter()
        if self.profile:
            logger.info(f"Starting {self.msg} ...")

    def time(self, extraMsg: str = "") -> float:
        """
        time the action and log if profile is active

        Returns:
            float: elapsed seconds since start
        """
        elapsed = time.perf_counter() - self.starttime
        if self.profile:
            logger.info(f"{self.msg}{extraMsg} took {elapsed:5.1f} s")
        return elapsed
