"""Shared generators for property and acceptance tests."""
import numpy as np


def random_homography(rng: np.random.Generator) -> np.ndarray:
    """Well-conditioned projective matrix of the size a stereo rig calibration produces."""
    h = np.eye(3)
    h[:2, :2] += rng.uniform(-0.2, 0.2, (2, 2))
    h[:2, 2] = rng.uniform(-40, 40, 2)
    h[2, :2] = rng.uniform(-3e-4, 3e-4, 2)
    return h


def random_quad(rng: np.random.Generator, width=640, height=480) -> np.ndarray:
    """Four points, one per image quadrant, so no three are collinear."""
    qx = np.array([0, 1, 1, 0]) * width / 2
    qy = np.array([0, 0, 1, 1]) * height / 2
    return np.stack([qx + rng.uniform(0.1, 0.9, 4) * width / 2, qy + rng.uniform(0.1, 0.9, 4) * height / 2], axis=1)


def map_points(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    p = np.c_[pts, np.ones(len(pts))] @ h.T
    return p[:, :2] / p[:, 2:]
