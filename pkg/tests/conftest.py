import numpy as np
import pytest

from procal.fixtures import synthetic_person


@pytest.fixture(scope="session")
def person256():
    """Shared synthetic figure: (image, keypoints, mask) on a 256 canvas."""
    return synthetic_person(256)


@pytest.fixture(scope="session")
def person192():
    return synthetic_person(192, height=84.0)


def random_spread_points(rng: np.random.Generator, n: int, span: float = 512.0) -> np.ndarray:
    """Random well-spread point set; regenerates until clearly non-degenerate."""
    while True:
        pts = rng.uniform(0.0, span, size=(n, 2))
        centered = pts - pts.mean(axis=0)
        if float(np.sum(centered**2)) > 1.0:
            return pts
