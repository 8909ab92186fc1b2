"""
Created on 2026-10-18

@author: wf
"""

from dataclasses import dataclass

from tqdm import tqdm


@dataclass
class Progressbar:
    """
    Generic progress bar
    """

    total: int
    value: int
    desc: str
    unit: str

    def update(self, step: int = 1):
        self.value += step

    def set_postfix(self, **kwargs):
        pass

    def close(self):
        pass


class TqdmProgressbar(Progressbar):
    """
    Tqdm progress bar wrapper for training steps, episodes and sweep runs
    """

    def __init__(self, total: int, desc: str, unit: str, disable: bool = False):
        super().__init__(total, 0, desc, unit)
        self.disable = disable
        self.reset()

    def reset(self):
        self.progress = tqdm(
            total=self.total, desc=self.desc, unit=self.unit, disable=self.disable
        )
        self.value = 0

    def set_postfix(self, **kwargs):
        """
        show e.g. the current loss values next to the bar
        """
        self.progress.set_postfix(**kwargs)

    def update(self, step: int = 1):
        self.update_value(self.value + step)

    def update_value(self, new_value: int):
        increment = new_value - self.value
        self.value = new_value
        self.progress.update(increment)

    def close(self):
        self.progress.close()


def progressbar(total: int, desc: str, unit: str, with_progress: bool = True) -> Progressbar:
    """
    get a progress bar - a silent one if progress display is off
    """
    if with_progress:
        bar = TqdmProgressbar(total=total, desc=desc, unit=unit)
    else:
        bar = Progressbar(total, 0, desc, unit)
    return bar
