"""Four-point homography estimation and projective warping.

Point coordinates are pixel-centred: pixel ``(row i, col j)`` sits at
``(x, y) = (j + 0.5, i + 0.5)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imgcore import EIGHT_BIT, Frame, InvalidInputError, Resolution, to_uint8


class DegenerateCorrespondenceError(ValueError):
    pass


class PointAtInfinityError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class Homography:
    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=np.float64)
        if h.shape != (3, 3):
            raise InvalidInputError(f"homography must be 3x3, got {h.shape}")
        if h[2, 2] != 1.0:
            if h[2, 2] == 0.0:
                raise InvalidInputError("homography with h33 = 0 cannot be normalised")
            h = h / h[2, 2]
            h[2, 2] = 1.0
        if abs(np.linalg.det(h)) < 1e-300:
            raise InvalidInputError("homography is singular")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls) -> Homography:
        return cls(np.eye(3))

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.h, np.eye(3)))

    def inverse(self) -> Homography:
        return Homography(np.linalg.inv(self.h))

    def __matmul__(self, other: Homography) -> Homography:
        return Homography(self.h @ other.h)

    def to_json(self) -> dict:
        return {"matrix": [[float(v) for v in row] for row in self.h]}


def _collinear(a, b, c, tol=1e-9) -> bool:
    cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    scale = max(np.hypot(b[0] - a[0], b[1] - a[1]) * np.hypot(c[0] - a[0], c[1] - a[1]), 1e-300)
    return abs(cross) <= tol * scale


def _check_points(pts, name):
    pts = np.asarray(pts, dtype=np.float64)
    if pts.shape != (4, 2):
        raise InvalidInputError(f"{name} must be 4 (x, y) points, got shape {pts.shape}")
    for skip in range(4):
        a, b, c = (pts[i] for i in range(4) if i != skip)
        if _collinear(a, b, c):
            raise DegenerateCorrespondenceError(f"three {name} points are collinear")
    return pts


def solve_linear(a: np.ndarray, b: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Gaussian elimination with partial pivoting; raises on a (near-)singular system."""
    a = np.array(a, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    n = len(b)
    scale = np.abs(a).max()
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) <= tol * scale:
            raise DegenerateCorrespondenceError("singular correspondence system")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        f = a[col + 1 :, col] / a[col, col]
        a[col + 1 :, col:] -= f[:, None] * a[col, col:]
        b[col + 1 :] -= f * b[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x


def _conditioner(pts):
    # centre on the mean, scale mean distance to sqrt(2)
    c = pts.mean(axis=0)
    d = np.mean(np.hypot(*(pts - c).T))
    s = np.sqrt(2.0) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def estimate_homography(src, dst) -> Homography:
    """Exact four-point DLT with ``h33 = 1``.

    Each pair contributes the two rows of
    ``x' (h31 x + h32 y + 1) = h11 x + h12 y + h13`` (and likewise for y').
    Points are conditioned (translated and isotropically scaled) before the
    8x8 solve and the result mapped back.
    """
    src = _check_points(src, "src")
    dst = _check_points(dst, "dst")
    ts, td = _conditioner(src), _conditioner(dst)
    s = src * ts[0, 0] + ts[:2, 2]
    d = dst * td[0, 0] + td[:2, 2]
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for k, ((x, y), (u, v)) in enumerate(zip(s, d)):
        a[2 * k] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * k + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * k], b[2 * k + 1] = u, v
    hn = np.append(solve_linear(a, b), 1.0).reshape(3, 3)
    h = np.linalg.solve(td, hn @ ts)
    if h[2, 2] == 0.0:
        raise DegenerateCorrespondenceError("estimated homography maps the origin to infinity")
    h = h / h[2, 2]
    h[2, 2] = 1.0
    return Homography(h)


def apply_homography(h: Homography, p) -> tuple:
    m = h.h
    x, y = float(p[0]), float(p[1])
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) <= 1e-12:
        raise PointAtInfinityError(f"point ({x}, {y}) maps to infinity")
    return ((m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w, (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w)


def apply_homography_array(h: Homography, xy: np.ndarray) -> np.ndarray:
    m = h.h
    x, y = xy[..., 0], xy[..., 1]
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.stack(
            [(m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w, (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w], axis=-1
        )


def warp_array(src: np.ndarray, h: Homography, out: Resolution) -> tuple:
    """Inverse-map bilinear warp of a float ``(h, w, c)`` array.

    Returns ``(samples, valid)``; invalid (outside the source) samples are 0.
    """
    sh, sw = src.shape[:2]
    jj, ii = np.meshgrid(np.arange(out.width), np.arange(out.height))
    centres = np.stack([jj + 0.5, ii + 0.5], axis=-1)
    back = apply_homography_array(h.inverse(), centres)
    fx = back[..., 0] - 0.5
    fy = back[..., 1] - 0.5
    valid = np.isfinite(fx) & np.isfinite(fy) & (fx >= 0) & (fx <= sw - 1) & (fy >= 0) & (fy <= sh - 1)
    fx = np.where(valid, fx, 0.0)
    fy = np.where(valid, fy, 0.0)
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    ax = (fx - x0)[..., None]
    ay = (fy - y0)[..., None]
    s = np.asarray(src, dtype=np.float64)
    top = s[y0, x0] * (1 - ax) + s[y0, x1] * ax
    bot = s[y1, x0] * (1 - ax) + s[y1, x1] * ax
    val = top * (1 - ay) + bot * ay
    return np.where(valid[..., None], val, 0.0), valid


def warp_frame(frame: Frame, h: Homography, out: Resolution | None = None) -> tuple:
    """Warp ``frame`` by ``h``; returns ``(frame, validity mask)``."""
    out = out or frame.resolution
    vals, valid = warp_array(frame.samples, h, out)
    if frame.colorspace in EIGHT_BIT:
        vals = to_uint8(vals)
    return frame.with_samples(vals), valid


def load_calibration(path) -> Homography:
    """Calibration JSON: ``{"matrix": 3x3}`` or ``{"src": [[x, y]*4], "dst": [...]}``."""
    d = json.loads(Path(path).read_text())
    if "matrix" in d:
        return Homography(np.array(d["matrix"], dtype=np.float64))
    if "src" in d and "dst" in d:
        return estimate_homography(d["src"], d["dst"])
    raise InvalidInputError(f"{path}: calibration needs 'matrix' or 'src'/'dst'")
