import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from regkit import PointCloud


def random_rotation(rng) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def fibonacci_sphere(n: int, radius: float = 1.0) -> np.ndarray:
    """Deterministic, roughly uniform samples of a sphere."""
    i = np.arange(n, dtype=np.float64)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(1.0 - z * z)
    theta = golden * i
    return radius * np.column_stack([r * np.cos(theta), r * np.sin(theta), z])


def planar_grid(nx: int = 20, ny: int = 20, pitch: float = 1.0, z: float = 0.0) -> np.ndarray:
    xs, ys = np.meshgrid(np.arange(nx) * pitch, np.arange(ny) * pitch)
    return np.column_stack([xs.ravel(), ys.ravel(), np.full(xs.size, z)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sphere_cloud():
    return PointCloud(fibonacci_sphere(800, radius=50.0), id="sphere")


@pytest.fixture
def plane_cloud():
    return PointCloud(planar_grid(25, 25, pitch=2.0), id="plane")
