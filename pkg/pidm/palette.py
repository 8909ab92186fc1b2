"""
Created on 2026-10-18

@author: wf
"""

from typing import Dict, Tuple

import numpy as np
from colour import Color

RGB = Tuple[int, int, int]


class Palette:
    """
    A map of named color-ids to 8 bit RGB triples for the rasterizer.

    Attributes:
        background (RGB): the table color
        colors (Dict[str, Color]): color-id to colour.Color
    """

    DEFAULT_COLORS = {
        "red": "#dc3232",
        "green": "#32b432",
        "blue": "#3250dc",
        "yellow": "#e6d21e",
        "brown": "#8c5a32",
        "grey": "#a0a0a0",
        "white": "#ffffff",
    }

    def __init__(self, colors: Dict[str, str] = None, background: RGB = (40, 40, 40)):
        if colors is None:
            colors = Palette.DEFAULT_COLORS
        self.background = background
        self.colors = {color_id: Color(hex_code) for color_id, hex_code in colors.items()}
        self._rgb_cache: Dict[str, np.ndarray] = {}

    def rgb(self, color_id: str) -> np.ndarray:
        """
        get the u8 RGB triple for the given color-id

        Raises:
            KeyError: for an unknown color-id
        """
        if color_id not in self._rgb_cache:
            if color_id not in self.colors:
                raise KeyError(f"unknown color-id {color_id}")
            color = self.colors[color_id]
            triple = [int(round(channel * 255)) for channel in color.rgb]
            self._rgb_cache[color_id] = np.array(triple, dtype=np.uint8)
        return self._rgb_cache[color_id]

    def shade(self, color_id: str, luminance_factor: float) -> np.ndarray:
        """
        a lighter or darker variant e.g. for the lit button

        Args:
            color_id: the base color
            luminance_factor: factor applied to the luminance, clipped to [0,1]
        """
        base = self.colors[color_id]
        luminance = min(1.0, max(0.0, base.luminance * luminance_factor))
        variant = Color(hue=base.hue, saturation=base.saturation, luminance=luminance)
        return np.array([int(round(c * 255)) for c in variant.rgb], dtype=np.uint8)

    def background_rgb(self) -> np.ndarray:
        return np.array(self.background, dtype=np.uint8)


PALETTE = Palette()
