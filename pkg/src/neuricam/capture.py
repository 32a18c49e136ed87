"""Dual-mode sensor synthesis: degradation, key-frame sampling, windows, sync."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .imgcore import (
    HR_DEFAULT,
    LR_DEFAULT,
    TIMESTAMP_MODULUS,
    ColorSpace,
    Frame,
    InvalidInputError,
    Resolution,
    StreamKind,
    load_png,
    resample_bicubic,
    round_half_away,
    save_png,
    to_gray,
    to_uint8,
)


class DesyncError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseConfig:
    read_noise_sigma: float = 0.0
    fixed_pattern: int = 0
    fixed_pattern_sigma: float = 0.0
    enabled: bool = False

    def __post_init__(self):
        if self.read_noise_sigma < 0 or self.fixed_pattern_sigma < 0:
            raise InvalidInputError("noise sigma must be >= 0")


@dataclass(frozen=True)
class CaptureConfig:
    lr_fps: float = 15.0
    key_interval: int = 15
    scale: int = 4
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    lr_res: Resolution = LR_DEFAULT
    hr_res: Resolution = HR_DEFAULT
    seed: int = 0

    def __post_init__(self):
        if self.key_interval < 1:
            raise InvalidInputError("key interval must be >= 1")
        if self.lr_fps <= 0:
            raise InvalidInputError("lr_fps must be positive")
        if self.lr_res.scaled(self.scale) != self.hr_res:
            raise InvalidInputError(f"hr_res {self.hr_res} != lr_res {self.lr_res} x {self.scale}")

    @property
    def key_fps(self) -> float:
        return self.lr_fps / self.key_interval

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> CaptureConfig:
        d = dict(d)
        if "noise" in d:
            d["noise"] = NoiseConfig(**d["noise"])
        for k in ("lr_res", "hr_res"):
            if k in d and not isinstance(d[k], Resolution):
                d[k] = Resolution(**d[k])
        return cls(**d)


@dataclass
class DualStream:
    lr_frames: list
    key_frames: list
    config: CaptureConfig

    @property
    def key_indices(self) -> list:
        return [k.frame_index for k in self.key_frames]


@dataclass
class Window:
    """K consecutive LR frames and the key frames bracketing them."""

    window_index: int
    start: int
    lr: list
    key_prev: Frame | None
    key_next: Frame | None
    partial: bool = False
    single_key: bool = False

    @property
    def indices(self) -> range:
        return range(self.start, self.start + len(self.lr))


def nominal_timestamp(index: int, fps: float) -> int:
    return int(round_half_away(np.float64(index * 1000.0 / fps))) % TIMESTAMP_MODULUS


def _noise_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


def fixed_pattern_offsets(noise: NoiseConfig, res: Resolution) -> np.ndarray:
    rng = _noise_rng(noise.fixed_pattern, 0xF9)
    return rng.normal(0.0, noise.fixed_pattern_sigma, size=(res.height, res.width, 1))


def degrade(gt: Frame, config: CaptureConfig) -> Frame:
    """Ground truth colour frame to the low-resolution grayscale sensor frame."""
    if gt.resolution != config.hr_res:
        raise InvalidInputError(f"frame {gt.frame_index}: {gt.resolution} != hr_res {config.hr_res}")
    lr = resample_bicubic(to_gray(gt), config.lr_res, antialias=True)
    noise = config.noise
    if noise.enabled:
        x = lr.samples.astype(np.float64)
        x = x + _noise_rng(config.seed, gt.frame_index).normal(0.0, noise.read_noise_sigma, size=x.shape)
        x = x + fixed_pattern_offsets(noise, config.lr_res)
        lr = lr.with_samples(to_uint8(x))
    return Frame(lr.samples, ColorSpace.GRAY8, gt.timestamp_ms, StreamKind.LR, gt.frame_index)


def sample_keyframes(gt_seq, config: CaptureConfig, parallel: int = 1) -> DualStream:
    if not gt_seq:
        raise InvalidInputError("empty ground-truth sequence")
    stamped = [
        Frame(g.samples, g.colorspace, nominal_timestamp(t, config.lr_fps), StreamKind.GT, t)
        for t, g in enumerate(gt_seq)
    ]
    if parallel > 1:
        with ThreadPoolExecutor(parallel) as pool:
            lr = list(pool.map(lambda g: degrade(g, config), stamped))
    else:
        lr = [degrade(g, config) for g in stamped]
    keys = [
        Frame(g.samples, ColorSpace.SRGB8, g.timestamp_ms, StreamKind.KEY, g.frame_index)
        for g in stamped[:: config.key_interval]
    ]
    return DualStream(lr, keys, config)


def split_windows(stream: DualStream) -> list:
    """Key-to-key windows of ``K`` LR frames each.

    A trailing run of LR frames after the last key frame becomes a partial
    window with no ``key_next``. With a single key frame the whole sequence is
    one partial window flagged ``single_key``.
    """
    K = stream.config.key_interval
    n = len(stream.lr_frames)
    keys = {k.frame_index: k for k in stream.key_frames}
    if not keys:
        raise InvalidInputError("stream has no key frames")
    if len(keys) < 2:
        k0 = min(keys)
        return [Window(0, k0, stream.lr_frames[k0:], keys[k0], None, partial=True, single_key=True)]
    windows = []
    start = 0
    while start < n:
        end = start + K
        if end in keys:
            windows.append(Window(len(windows), start, stream.lr_frames[start:end], keys[start], keys[end]))
            if end == n - 1:
                break
        else:
            windows.append(Window(len(windows), start, stream.lr_frames[start:end], keys[start], None, partial=True))
        start = end
    return windows


def wrapped_delta(a: int, b: int) -> int:
    """Signed ``a - b`` on the 32-bit millisecond timer."""
    d = (a - b) % TIMESTAMP_MODULUS
    return d - TIMESTAMP_MODULUS if d >= TIMESTAMP_MODULUS // 2 else d


@dataclass
class Pairing:
    pairs: list  # (key position, lr position, delta_ms)
    unpaired_lr: list


def synchronize(lr, key, tolerance_ms: int = 10) -> Pairing:
    pairs = []
    used = set()
    for ki, k in enumerate(key):
        best = None
        for li, l in enumerate(lr):
            d = wrapped_delta(l.timestamp_ms, k.timestamp_ms)
            if best is None or abs(d) < abs(best[1]):
                best = (li, d)
        if best is None or abs(best[1]) > tolerance_ms:
            raise DesyncError(
                f"key frame {k.frame_index} (t={k.timestamp_ms} ms) has no LR frame within {tolerance_ms} ms"
            )
        used.add(best[0])
        pairs.append((ki, best[0], best[1]))
    return Pairing(pairs, [i for i in range(len(lr)) if i not in used])


# --- directories ----------------------------------------------------------


def _numbered_pngs(directory: Path) -> list:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")


def frame_name(index: int) -> str:
    return f"frame_{index:05d}.png"


def load_ground_truth(directory) -> tuple:
    """Numbered PNG frames plus a ``sidecar.json`` carrying fps and resolution."""
    directory = Path(directory)
    sidecar = json.loads((directory / "sidecar.json").read_text())
    res = Resolution(sidecar["width"], sidecar["height"])
    frames = [load_png(p, StreamKind.GT, i) for i, p in enumerate(_numbered_pngs(directory))]
    for f in frames:
        if f.resolution != res or f.colorspace != ColorSpace.SRGB8:
            raise InvalidInputError(f"ground truth frame {f.frame_index} is {f.resolution} {f.colorspace.value}")
    return frames, float(sidecar["fps"])


def save_ground_truth(frames, directory, fps: float = 15.0) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        save_png(f, directory / frame_name(i))
    side = {"fps": fps, "width": frames[0].width, "height": frames[0].height}
    (directory / "sidecar.json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def save_stream(stream: DualStream, directory) -> Path:
    directory = Path(directory)
    (directory / "lr").mkdir(parents=True, exist_ok=True)
    (directory / "key").mkdir(parents=True, exist_ok=True)
    for f in stream.lr_frames:
        save_png(f, directory / "lr" / frame_name(f.frame_index))
    for f in stream.key_frames:
        save_png(f, directory / "key" / frame_name(f.frame_index))
    manifest = {
        "config": stream.config.to_dict(),
        "lr": [{"index": f.frame_index, "timestamp_ms": f.timestamp_ms} for f in stream.lr_frames],
        "key": [{"index": f.frame_index, "timestamp_ms": f.timestamp_ms} for f in stream.key_frames],
    }
    path = directory / "stream.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_stream(manifest_path) -> DualStream:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "stream.json"
    root = manifest_path.parent
    m = json.loads(manifest_path.read_text())
    config = CaptureConfig.from_dict(m["config"])

    def load(sub, entries, stream):
        return [
            load_png(root / sub / frame_name(e["index"]), stream, e["index"], e["timestamp_ms"]) for e in entries
        ]

    return DualStream(load("lr", m["lr"], StreamKind.LR), load("key", m["key"], StreamKind.KEY), config)
