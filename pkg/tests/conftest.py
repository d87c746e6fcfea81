from typing import Callable

import numpy as np
import pytest
from scipy import ndimage

from ste_deflick.core_image import FrameRGB, FrameSequence

TINT: np.ndarray = np.array([1.0, 0.96, 0.92])  # red stays the maximum channel


def texture(
    seed: int,
    height: int = 64,
    width: int = 64,
    lo: float = 60.0,
    hi: float = 190.0,
    sigma: float = 1.5,
) -> np.ndarray:
    """
    Smoothed noise rescaled to [lo, hi].
    """
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=(height, width))
    noise = ndimage.gaussian_filter(noise, sigma, mode="wrap")
    noise = (noise - noise.min()) / (noise.max() - noise.min())
    return lo + (hi - lo) * noise


def tinted(plane: np.ndarray) -> FrameRGB:
    return FrameRGB.from_float(plane[..., None] * TINT)


def gray(value: float, height: int = 16, width: int = 16) -> FrameRGB:
    return FrameRGB.from_float(np.full((height, width, 3), value))


def static_clip(
    seed: int = 0, T: int = 30, height: int = 64, width: int = 64
) -> FrameSequence:
    frame = tinted(texture(seed, height, width))
    return FrameSequence([frame] * T)


def moving_clip(
    seed: int = 0, T: int = 30, height: int = 64, width: int = 64, step: int = 1
) -> FrameSequence:
    # a window sliding over a wider texture, `step` pixels per frame
    big = texture(seed, height, width + step * T)
    return FrameSequence(
        [tinted(big[:, t * step : t * step + width]) for t in range(T)]
    )


def with_blob(
    frame: FrameRGB, top: int = 20, left: int = 20, size: int = 20
) -> FrameRGB:
    data = frame.data.copy()
    data[top : top + size, left : left + size] = 255
    return FrameRGB(data)


@pytest.fixture(scope="session")
def make_texture() -> Callable[..., np.ndarray]:
    return texture


@pytest.fixture(scope="session")
def make_frame() -> Callable[[np.ndarray], FrameRGB]:
    return tinted


@pytest.fixture(scope="session")
def make_gray() -> Callable[..., FrameRGB]:
    return gray


@pytest.fixture(scope="session")
def make_static_clip() -> Callable[..., FrameSequence]:
    return static_clip


@pytest.fixture(scope="session")
def make_moving_clip() -> Callable[..., FrameSequence]:
    return moving_clip


@pytest.fixture(scope="session")
def add_blob() -> Callable[..., FrameRGB]:
    return with_blob
