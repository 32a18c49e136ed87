"""Receiver-side repair of lost image lines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import EIGHT_BIT, Frame, InvalidInputError, resample_array, to_uint8
from .wire import validate_lossmap

SNIPPET_ROWS = 5


@dataclass(frozen=True)
class RepairResult:
    frame: Frame
    fully_lost: bool = False


def repair_lost_lines(frame: Frame, losses: dict) -> Frame:
    return repair_with_flag(frame, losses).frame


def repair_with_flag(frame: Frame, losses: dict) -> RepairResult:
    """Fill each lost run from the 5 rows above it, top to bottom.

    For a run of ``n`` lines starting at row ``r`` the strip ``[r-5, r)`` is
    bicubically stretched to ``5 + n`` rows and written over ``[r-5, r+n)``.
    Because runs are handled in ascending order, a strip may contain rows
    repaired by an earlier run but never zero-filled ones. Runs starting
    above row 5 replicate the nearest valid row instead.
    """
    h = frame.height
    losses = {int(k): int(v) for k, v in losses.items()}
    validate_lossmap(losses, h)
    if not losses:
        return RepairResult(frame)
    if sum(losses.values()) >= h:
        return RepairResult(frame.with_samples(np.zeros_like(frame.samples)), fully_lost=True)
    x = frame.samples.astype(np.float64)
    for r in sorted(losses):
        n = losses[r]
        if r >= SNIPPET_ROWS:
            strip = x[r - SNIPPET_ROWS : r]
            x[r - SNIPPET_ROWS : r + n] = resample_array(strip, SNIPPET_ROWS + n, strip.shape[1], antialias=False)
        elif r > 0:
            x[r : r + n] = x[r - 1]
        else:
            # no valid row above; the next row below a run is valid because runs are maximal
            x[r : r + n] = x[r + n]
    out = to_uint8(x) if frame.colorspace in EIGHT_BIT else x
    return RepairResult(frame.with_samples(out))


@dataclass(frozen=True)
class RepairStats:
    psnr_before: float
    psnr_after: float
    lost_lines: int

    def to_dict(self) -> dict:
        from .metrics import psnr_json

        return {
            "psnr_before": psnr_json(self.psnr_before),
            "psnr_after": psnr_json(self.psnr_after),
            "lost_lines": self.lost_lines,
        }


def repair_report(before: Frame, after: Frame, reference: Frame, losses: dict | None = None) -> RepairStats:
    from .metrics import psnr

    if not (before.samples.shape == after.samples.shape == reference.samples.shape):
        raise InvalidInputError(
            f"dimension mismatch: {before.samples.shape}, {after.samples.shape}, {reference.samples.shape}"
        )
    if losses is None:
        lost = int(np.count_nonzero(np.any(before.samples != reference.samples, axis=(1, 2))))
    else:
        lost = sum(int(v) for v in losses.values())
    return RepairStats(psnr(before, reference), psnr(after, reference), lost)
