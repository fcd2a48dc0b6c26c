"""Training augmentation: horizontal flips and crops.

The transforms take their random draws as arguments; :class:`AugmentationSampler`
produces those draws from a seeded generator for the training loop.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CropOutOfBounds, EmptyImage, InvalidConfig


@dataclass(frozen=True)
class AugmentationConfig:
    flip_probability: float = 0.5
    crop_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise InvalidConfig(f"flip_probability {self.flip_probability} outside [0, 1]")
        if not 0.0 < self.crop_fraction <= 1.0:
            raise InvalidConfig(f"crop_fraction {self.crop_fraction} outside (0, 1]")
        if self.seed < 0:
            raise InvalidConfig("seed must be unsigned")

    def crop_shape(self, height: int, width: int) -> tuple[int, int]:
        return (max(1, round(self.crop_fraction * height)),
                max(1, round(self.crop_fraction * width)))


def _check(image: np.ndarray) -> None:
    if image.ndim < 2 or image.shape[0] == 0 or image.shape[1] == 0:
        raise EmptyImage(f"image shape {image.shape}")


def augment_flip(image: np.ndarray, config: AugmentationConfig, draw: float) -> np.ndarray:
    _check(image)
    if draw < config.flip_probability:
        return image[:, ::-1].copy()
    return image


def augment_crop(image: np.ndarray, config: AugmentationConfig, offsets: tuple[int, int]) -> np.ndarray:
    _check(image)
    h, w = image.shape[:2]
    ch, cw = config.crop_shape(h, w)
    r, c = offsets
    if r < 0 or c < 0 or r + ch > h or c + cw > w:
        raise CropOutOfBounds(f"{ch}x{cw} crop at {offsets} in {h}x{w} image")
    return image[r:r + ch, c:c + cw].copy()


class AugmentationSampler:
    """Seeded source of flip draws and crop offsets."""

    def __init__(self, config: AugmentationConfig, seed: int | None = None):
        self.config = config
        self.rng = np.random.default_rng(config.seed if seed is None else seed)

    def __call__(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        ch, cw = self.config.crop_shape(h, w)
        draw = float(self.rng.random())
        offsets = (int(self.rng.integers(0, h - ch + 1)), int(self.rng.integers(0, w - cw + 1)))
        out = augment_flip(image, self.config, draw)
        return augment_crop(out, self.config, offsets)
