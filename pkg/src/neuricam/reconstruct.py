"""Decoder plug-in contract, classical baselines and the reconstruction harness."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Protocol

import numpy as np

from .capture import DualStream, Window, frame_name, split_windows, synchronize
from .geometry import Homography, warp_frame
from .imgcore import (
    ColorSpace,
    Frame,
    InvalidInputError,
    Resolution,
    StreamKind,
    crop_pad,
    gray8_to_norm,
    lab_to_rgb,
    load_png,
    reflect_pad,
    resample_array,
    rgb_to_lab,
    save_png,
)

LR_PAD = 2


class DecoderError(RuntimeError):
    def __init__(self, window_index: int, cause: BaseException):
        super().__init__(f"decoder failed on window {window_index}: {cause}")
        self.window_index = window_index


class FrameCountError(InvalidInputError):
    pass


class DecoderPlugin(Protocol):
    """Maps a prepared :class:`Window` to one SRGB8 frame per LR frame.

    Window frames arrive perspective-corrected, normalised (GRAY_NORM and
    LAB_NORM) and reflect-padded (LR by 2 pixels, keys by ``2 * scale``).
    Outputs are at the padded high resolution; the harness crops the border.
    """

    name: str

    def decode(self, window: Window, scale: int) -> list: ...


def nearest_key(window: Window, t: int) -> Frame:
    """Temporally nearest key frame; ties go to the previous key."""
    if window.key_prev is None and window.key_next is None:
        raise InvalidInputError(f"window {window.window_index} has no key frames")
    if window.key_next is None:
        return window.key_prev
    if window.key_prev is None:
        return window.key_next
    d_prev = t - window.key_prev.frame_index
    d_next = window.key_next.frame_index - t
    return window.key_prev if d_prev <= d_next else window.key_next


class BaselineDecoder:
    """Bicubic 4x lightness plus a*b* copied from the nearest key frame."""

    name = "baseline"

    def decode(self, window: Window, scale: int) -> list:
        out = []
        for lr in window.lr:
            key = nearest_key(window, lr.frame_index)
            light = resample_array(lr.samples, lr.height * scale, lr.width * scale, antialias=False)
            if light.shape[:2] != key.samples.shape[:2]:
                raise InvalidInputError(
                    f"upsampled frame {light.shape[:2]} does not match key frame {key.samples.shape[:2]}"
                )
            lab = np.concatenate([np.clip(light, -1.0, 1.0), key.samples[..., 1:]], axis=2)
            out.append(lab_to_rgb(Frame(lab, ColorSpace.LAB_NORM, lr.timestamp_ms, StreamKind.GT, lr.frame_index)))
        return out


class IdentityDecoder:
    """Test stub: replicates each gray LR pixel into a ``scale x scale`` RGB block."""

    name = "identity"

    def decode(self, window: Window, scale: int) -> list:
        out = []
        for lr in window.lr:
            g = np.clip(np.floor((lr.samples[..., 0] + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)
            big = np.repeat(np.repeat(g, scale, axis=0), scale, axis=1)
            out.append(Frame(np.repeat(big[..., None], 3, axis=2), ColorSpace.SRGB8, lr.timestamp_ms, StreamKind.GT, lr.frame_index))
        return out


DECODERS = {"baseline": BaselineDecoder, "identity": IdentityDecoder}


def get_decoder(name: str) -> DecoderPlugin:
    try:
        return DECODERS[name]()
    except KeyError:
        raise InvalidInputError(f"unknown decoder {name!r}; choose from {sorted(DECODERS)} or external:<dir>") from None


def scale_homography(h: Homography, factor: float) -> Homography:
    """Conjugate ``h`` into a grid ``factor`` times finer."""
    s = np.diag([factor, factor, 1.0])
    return Homography(s @ h.h @ np.linalg.inv(s))


def _prepare_lr(frame: Frame, calib: Homography, warp: str) -> Frame:
    if warp == "lr" and not calib.is_identity():
        frame, _ = warp_frame(frame, calib)
    return reflect_pad(gray8_to_norm(frame), LR_PAD)


def _prepare_key(frame: Frame, calib: Homography, warp: str, scale: int) -> Frame:
    if warp == "key" and not calib.is_identity():
        frame, _ = warp_frame(frame, scale_homography(calib, scale).inverse())
    return reflect_pad(rgb_to_lab(frame), LR_PAD * scale)


def reconstruct_sequence(
    stream: DualStream,
    decoder: DecoderPlugin,
    calib: Homography | None = None,
    warp: str = "lr",
    parallel: int = 1,
    tolerance_ms: int = 10,
) -> list:
    """Run ``decoder`` over key-to-key windows and stitch a full-rate sequence.

    ``calib`` maps LR pixel coordinates to the key-frame plane sampled at LR
    resolution. With ``warp="lr"`` LR frames are warped forward into the key
    plane; ``warp="key"`` instead pulls key frames back into the LR plane.
    Key-frame timesteps emit the received key frame unchanged.
    """
    if warp not in ("lr", "key"):
        raise InvalidInputError(f"warp must be 'lr' or 'key', got {warp!r}")
    calib = calib or Homography.identity()
    cfg = stream.config
    scale = cfg.scale
    pairing = synchronize(stream.lr_frames, stream.key_frames, tolerance_ms)
    n = len(stream.lr_frames)
    key_at = {}
    for ki, li, _ in pairing.pairs:
        k = stream.key_frames[ki]
        key_at[li] = Frame(k.samples, k.colorspace, k.timestamp_ms, StreamKind.KEY, li)

    lr_prep = [
        Frame(_prepare_lr(f, calib, warp).samples, ColorSpace.GRAY_NORM, f.timestamp_ms, StreamKind.LR, t)
        for t, f in enumerate(stream.lr_frames)
    ]
    key_prep = [_prepare_key(key_at[t], calib, warp, scale) for t in sorted(key_at)]
    windows = split_windows(DualStream(lr_prep, key_prep, cfg))

    def run(w: Window):
        try:
            frames = decoder.decode(w, scale)
        except Exception as exc:
            raise DecoderError(w.window_index, exc) from exc
        if len(frames) != len(w.lr):
            raise DecoderError(w.window_index, FrameCountError(f"{len(frames)} outputs for {len(w.lr)} inputs"))
        return frames

    if parallel > 1:
        with ThreadPoolExecutor(parallel) as pool:
            decoded = list(pool.map(run, windows))
    else:
        decoded = [run(w) for w in windows]

    out: list = [None] * n
    hr_pad = LR_PAD * scale
    for w, frames in zip(windows, decoded):
        for t, f in zip(w.indices, frames):
            f = crop_pad(f, hr_pad)
            if f.resolution != cfg.hr_res or f.colorspace != ColorSpace.SRGB8:
                raise DecoderError(w.window_index, InvalidInputError(f"frame {t}: {f.resolution} {f.colorspace.value}"))
            out[t] = Frame(f.samples, ColorSpace.SRGB8, stream.lr_frames[t].timestamp_ms, StreamKind.GT, t)
    for t, k in key_at.items():
        out[t] = Frame(k.samples, ColorSpace.SRGB8, stream.lr_frames[t].timestamp_ms, StreamKind.GT, t)
    missing = [t for t, f in enumerate(out) if f is None]
    if missing:
        raise InvalidInputError(f"no output for frames {missing}")
    return out


def export_frames(frames, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, f in enumerate(frames):
        save_png(f, directory / frame_name(t))


def import_external_reconstruction(directory, expected_count: int, hr_res: Resolution) -> list:
    """Load numbered PNG frames produced by an external decoder."""
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")
    if len(paths) != expected_count:
        raise FrameCountError(f"{directory}: expected {expected_count} frames, found {len(paths)}")
    frames = []
    for t, p in enumerate(paths):
        f = load_png(p, StreamKind.GT, t)
        if f.resolution != hr_res or f.colorspace != ColorSpace.SRGB8:
            raise InvalidInputError(f"{p.name}: expected {hr_res} SRGB8, got {f.resolution} {f.colorspace.value}")
        frames.append(f)
    return frames
