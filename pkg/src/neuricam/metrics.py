"""PSNR/SSIM evaluation with key-frame exclusion.

Y is CIE L* rescaled to 0..255 (not YCbCr luma). ab is ``(a* + 128, b* + 128)``
on the same 0..255 peak. Both are stated in every report header.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .imgcore import ColorSpace, Frame, InvalidInputError, rgb8_to_lab

CHANNEL_NOTE = "Y = CIE L* x 2.55 (not YCbCr luma); AB = (a*+128, b*+128); peak 255"
CHANNEL_SETS = ("Y", "AB", "RGB")


def _array(x) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, Frame) else x, dtype=np.float64)


def psnr(a, b, max_value: float = 255.0) -> float:
    """PSNR in dB; identical inputs give ``math.inf``."""
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value**2 / mse)


def psnr_json(v: float):
    return "inf" if math.isinf(v) else v


def _gaussian_window(size=11, sigma=1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x, g):
    y = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    r = len(g) // 2
    return y[r:-r, r:-r]


def ssim(a, b, max_value: float = 255.0) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), valid region only."""
    a, b = _array(a), _array(b)
    if a.ndim == 3:
        if a.shape[2] != 1:
            raise InvalidInputError("ssim takes a single channel")
        a, b = a[..., 0], b[..., 0]
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < 11:
        raise InvalidInputError(f"frame {a.shape} smaller than the 11x11 window")
    c1 = (0.01 * max_value) ** 2
    c2 = (0.03 * max_value) ** 2
    g = _gaussian_window()
    mu1, mu2 = _filter_valid(a, g), _filter_valid(b, g)
    s11 = _filter_valid(a * a, g) - mu1 * mu1
    s22 = _filter_valid(b * b, g) - mu2 * mu2
    s12 = _filter_valid(a * b, g) - mu1 * mu2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def channel_planes(frame: Frame, channel_set: str) -> np.ndarray:
    """Planes ``(h, w, k)`` of the requested channel group on the 0..255 scale."""
    s = frame.samples
    if channel_set == "RGB":
        if frame.colorspace != ColorSpace.SRGB8:
            raise InvalidInputError("RGB metrics need SRGB8 frames")
        return s.astype(np.float64)
    if frame.colorspace == ColorSpace.GRAY8:
        if channel_set != "Y":
            raise InvalidInputError("grayscale frames only support Y metrics")
        return s.astype(np.float64)
    lab = rgb8_to_lab(s)
    if channel_set == "Y":
        return lab[..., :1] * 2.55
    if channel_set == "AB":
        return lab[..., 1:] + 128.0
    raise InvalidInputError(f"unknown channel set {channel_set!r}")


@dataclass
class Report:
    channel_set: str
    key_interval: int
    indices: list
    psnr: list
    ssim: list
    excluded: list
    note: str = CHANNEL_NOTE
    extra: dict = field(default_factory=dict)

    @property
    def finite_psnr(self) -> list:
        return [v for v in self.psnr if math.isfinite(v)]

    @property
    def infinite_count(self) -> int:
        return sum(1 for v in self.psnr if math.isinf(v))

    @property
    def mean_psnr(self) -> float:
        vals = self.finite_psnr
        return math.fsum(vals) / len(vals) if vals else math.inf

    @property
    def mean_ssim(self) -> float | None:
        # None when SSIM was skipped, so reports stay valid JSON
        vals = [v for v in self.ssim if v is not None]
        return math.fsum(vals) / len(vals) if vals else None

    @property
    def perfect(self) -> bool:
        return bool(self.psnr) and self.infinite_count == len(self.psnr)

    def summary(self) -> dict:
        return {
            "channel_set": self.channel_set,
            "key_interval": self.key_interval,
            "frames_evaluated": len(self.indices),
            "frames_excluded": len(self.excluded),
            "infinite_psnr_frames": self.infinite_count,
            "mean_psnr_db": psnr_json(self.mean_psnr),
            "mean_ssim": self.mean_ssim,
            "perfect_reconstruction": self.perfect,
        }

    def to_dict(self) -> dict:
        return {
            "note": self.note,
            "summary": self.summary(),
            "per_frame": {
                "index": list(self.indices),
                "psnr_db": [psnr_json(v) for v in self.psnr],
                "ssim": list(self.ssim),
            },
            "excluded_key_frames": list(self.excluded),
            **self.extra,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "channel_set", "psnr_db", "ssim"])
            for i, p, s in zip(self.indices, self.psnr, self.ssim):
                w.writerow([i, self.channel_set, "inf" if math.isinf(p) else f"{p:.6f}", "" if s is None else f"{s:.6f}"])


def evaluate_sequence(pred, gt, key_interval: int, channel_set: str = "RGB", with_ssim: bool = True) -> Report:
    if len(pred) != len(gt):
        raise InvalidInputError(f"sequence length mismatch: {len(pred)} predicted vs {len(gt)} ground truth")
    if key_interval < 1:
        raise InvalidInputError("key interval must be >= 1")
    if channel_set not in CHANNEL_SETS:
        raise InvalidInputError(f"unknown channel set {channel_set!r}")
    indices, ps, ss, excluded = [], [], [], []
    for t, (p, g) in enumerate(zip(pred, gt)):
        if t % key_interval == 0:
            excluded.append(t)
            continue
        pp, gg = channel_planes(p, channel_set), channel_planes(g, channel_set)
        indices.append(t)
        ps.append(psnr(pp, gg))
        if with_ssim:
            ss.append(math.fsum(ssim(pp[..., c], gg[..., c]) for c in range(pp.shape[2])) / pp.shape[2])
        else:
            ss.append(None)
    return Report(channel_set, key_interval, indices, ps, ss, excluded)
