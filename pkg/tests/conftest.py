import numpy as np
import pytest

from atnet.image import Image
from atnet.rng import SeededRng


def make_smooth_image(seed: int, h: int, w: int, channels: int = 3) -> Image:
    """Seeded smooth test image: a sum of random low-frequency sinusoids."""
    rng = SeededRng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    data = np.zeros((h, w, channels))
    for c in range(channels):
        acc = np.zeros((h, w))
        for _ in range(6):
            fx = rng.uniform(0.5, 4.0)
            fy = rng.uniform(0.5, 4.0)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.2, 1.0)
            acc += amp * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        acc = (acc - acc.min()) / (acc.max() - acc.min())
        data[:, :, c] = acc
    return Image(data)


def make_random_image(seed: int, h: int, w: int, channels: int = 3) -> Image:
    return Image(SeededRng(seed).uniform(0.0, 1.0, (h, w, channels)))


@pytest.fixture
def rng():
    return SeededRng(0)
