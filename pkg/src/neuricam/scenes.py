"""Deterministic synthetic ground-truth sequences."""
from __future__ import annotations

import numpy as np

from .imgcore import HR_DEFAULT, ColorSpace, Frame, Resolution, StreamKind, to_uint8


def _smooth_field(h, w, x0=0.0):
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    x = x + x0
    r = 128 + 70 * np.sin(2 * np.pi * x / 420.0) * np.cos(2 * np.pi * y / 510.0)
    g = 128 + 60 * np.cos(2 * np.pi * (x + y) / 600.0)
    b = 128 + 70 * np.sin(2 * np.pi * (x - 0.5 * y) / 380.0 + 1.0)
    return np.stack([r, g, b], axis=-1)


def static_scene(n_frames: int, res: Resolution = HR_DEFAULT) -> list:
    img = to_uint8(_smooth_field(res.height, res.width))
    return [Frame(img, ColorSpace.SRGB8, 0, StreamKind.GT, t) for t in range(n_frames)]


def panning_scene(n_frames: int, res: Resolution = HR_DEFAULT, speed: float = 12.0) -> list:
    """Smooth colour texture translating left by ``speed`` pixels per frame."""
    return [
        Frame(to_uint8(_smooth_field(res.height, res.width, x0=t * speed)), ColorSpace.SRGB8, 0, StreamKind.GT, t)
        for t in range(n_frames)
    ]


SCENES = {"static": static_scene, "pan": panning_scene}
