"""Image containers, sRGB/CIELAB conversion, bicubic resampling and padding.

Samples are stored as numpy arrays of shape ``(height, width, channels)``.
8-bit colour spaces hold ``uint8``; normalised spaces hold ``float64``.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image


class InvalidInputError(ValueError):
    pass


class ColorSpace(str, enum.Enum):
    SRGB8 = "SRGB8"
    LAB_NORM = "LAB_NORM"
    GRAY8 = "GRAY8"
    GRAY_NORM = "GRAY_NORM"


class StreamKind(str, enum.Enum):
    LR = "LR"
    KEY = "KEY"
    GT = "GT"


EIGHT_BIT = (ColorSpace.SRGB8, ColorSpace.GRAY8)
TIMESTAMP_MODULUS = 2**32


@dataclass(frozen=True)
class Resolution:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError(f"resolution must be positive, got {self.width}x{self.height}")

    def scaled(self, factor: int) -> Resolution:
        return Resolution(self.width * factor, self.height * factor)

    def __str__(self):
        return f"{self.width}x{self.height}"


LR_DEFAULT = Resolution(160, 120)
HR_DEFAULT = Resolution(640, 480)


@dataclass(frozen=True, eq=False)
class Frame:
    samples: np.ndarray
    colorspace: ColorSpace
    timestamp_ms: int = 0
    stream: StreamKind = StreamKind.GT
    frame_index: int = 0

    def __post_init__(self):
        s = self.samples
        if s.ndim == 2:
            s = s[:, :, None]
            object.__setattr__(self, "samples", s)
        if s.ndim != 3 or s.shape[2] not in (1, 3):
            raise InvalidInputError(f"samples must be (h, w, 1|3), got shape {s.shape}")
        gray = self.colorspace in (ColorSpace.GRAY8, ColorSpace.GRAY_NORM)
        if gray != (s.shape[2] == 1):
            raise InvalidInputError(f"{self.colorspace.value} frame with {s.shape[2]} channels")
        want = np.uint8 if self.colorspace in EIGHT_BIT else np.float64
        if s.dtype != want:
            raise InvalidInputError(f"{self.colorspace.value} samples must be {np.dtype(want)}, got {s.dtype}")
        object.__setattr__(self, "timestamp_ms", int(self.timestamp_ms) % TIMESTAMP_MODULUS)
        s.setflags(write=False)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return self.samples.shape[2]

    @property
    def resolution(self) -> Resolution:
        return Resolution(self.width, self.height)

    def with_samples(self, samples: np.ndarray, colorspace: ColorSpace | None = None) -> Frame:
        """Same metadata, new sample buffer (and optionally a new colour space)."""
        return replace(self, samples=samples, colorspace=colorspace or self.colorspace)

    def equals(self, other: Frame) -> bool:
        return (
            self.colorspace == other.colorspace
            and self.samples.shape == other.samples.shape
            and bool(np.array_equal(self.samples, other.samples))
        )


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_uint8(x: np.ndarray) -> np.ndarray:
    return round_half_away(np.clip(x, 0.0, 255.0)).astype(np.uint8)


# --- colour ---------------------------------------------------------------

# sRGB primaries, D65 white (IEC 61966-2-1).
RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)
# White taken from the matrix itself so that (255,255,255) lands on a*=b*=0.
WHITE_XYZ = RGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0


def srgb_to_linear(v: np.ndarray) -> np.ndarray:
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(v: np.ndarray) -> np.ndarray:
    v = np.clip(v, 0.0, None)
    return np.where(v <= 0.0031308, 12.92 * v, 1.055 * v ** (1.0 / 2.4) - 0.055)


def _lab_f(t):
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)


def _lab_finv(t):
    return np.where(t > _DELTA, t**3, 3 * _DELTA**2 * (t - 4.0 / 29.0))


_LINEAR_LUT = srgb_to_linear(np.arange(256) / 255.0)


def rgb8_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Raw L*a*b* (L in [0, 100]) from an ``(..., 3)`` array of 8-bit values."""
    rgb = np.asarray(rgb)
    if rgb.dtype == np.uint8:
        lin = _LINEAR_LUT[rgb]
    else:
        lin = srgb_to_linear(rgb.astype(np.float64) / 255.0)
    xyz = lin @ RGB_TO_XYZ.T / WHITE_XYZ
    fx, fy, fz = (_lab_f(xyz[..., i]) for i in range(3))
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_to_rgb_float(lab: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb8_to_lab`, returning unclamped values on the 0..255 scale."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_lab_finv(fx), _lab_finv(fy), _lab_finv(fz)], axis=-1) * WHITE_XYZ
    return linear_to_srgb(xyz @ XYZ_TO_RGB.T) * 255.0


# Fixed affine map between raw Lab and the [-1, 1] normalised form.
def normalize_lab(lab: np.ndarray) -> np.ndarray:
    out = np.empty_like(lab, dtype=np.float64)
    out[..., 0] = lab[..., 0] / 50.0 - 1.0
    out[..., 1:] = (lab[..., 1:] + 128.0) / 127.5 - 1.0
    return out


def denormalize_lab(norm: np.ndarray) -> np.ndarray:
    out = np.empty_like(norm, dtype=np.float64)
    out[..., 0] = (norm[..., 0] + 1.0) * 50.0
    out[..., 1:] = (norm[..., 1:] + 1.0) * 127.5 - 128.0
    return out


def rgb_to_lab(frame: Frame) -> Frame:
    if frame.colorspace != ColorSpace.SRGB8 or frame.channels != 3:
        raise InvalidInputError(f"rgb_to_lab needs a 3-channel SRGB8 frame, got {frame.colorspace.value}")
    return frame.with_samples(normalize_lab(rgb8_to_lab(frame.samples)), ColorSpace.LAB_NORM)


def lab_to_rgb(frame: Frame) -> Frame:
    if frame.colorspace != ColorSpace.LAB_NORM:
        raise InvalidInputError(f"lab_to_rgb needs a LAB_NORM frame, got {frame.colorspace.value}")
    rgb = lab_to_rgb_float(denormalize_lab(frame.samples))
    return frame.with_samples(to_uint8(rgb), ColorSpace.SRGB8)


def lightness_to_gray8(lightness: np.ndarray) -> np.ndarray:
    return to_uint8(lightness * 2.55)


def to_gray(frame: Frame) -> Frame:
    """Grayscale sensor model: CIE L* rescaled to 0..255."""
    if frame.colorspace != ColorSpace.SRGB8 or frame.channels != 3:
        raise InvalidInputError(f"to_gray needs a 3-channel SRGB8 frame, got {frame.channels} channels")
    lightness = rgb8_to_lab(frame.samples)[..., :1]
    return frame.with_samples(lightness_to_gray8(lightness), ColorSpace.GRAY8)


def gray8_to_norm(frame: Frame) -> Frame:
    """GRAY8 (L* scaled by 2.55) to GRAY_NORM (the L channel of LAB_NORM)."""
    if frame.colorspace != ColorSpace.GRAY8:
        raise InvalidInputError(f"expected GRAY8, got {frame.colorspace.value}")
    return frame.with_samples(frame.samples / 127.5 - 1.0, ColorSpace.GRAY_NORM)


# --- resampling -----------------------------------------------------------


def cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resample_weights(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """Dense ``(out_len, in_len)`` matrix of imresize-style bicubic weights.

    Output sample ``i`` sits at input coordinate ``(i + 0.5) / scale - 0.5``.
    When shrinking with antialiasing the kernel is stretched by ``1 / scale``.
    Taps falling outside the input are clamped to the border sample.
    """
    if in_len < 1 or out_len < 1:
        raise InvalidInputError("resample lengths must be >= 1")
    scale = out_len / in_len
    stretch = scale < 1 and antialias
    width = 4.0 / scale if stretch else 4.0
    centers = (np.arange(out_len) + 0.5) / scale - 0.5
    left = np.floor(centers - width / 2).astype(np.int64)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = centers[:, None] - idx
    w = scale * cubic_kernel(scale * dist) if stretch else cubic_kernel(dist)
    w = w / w.sum(axis=1, keepdims=True)
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, np.clip(idx, 0, in_len - 1).ravel()), w.ravel())
    return mat


def resample_array(x: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Separable bicubic resize of a float ``(h, w, c)`` array, no rounding."""
    h, w = x.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    if out_h != h:
        x = np.tensordot(resample_weights(h, out_h, antialias), x, axes=(1, 0))
    if out_w != w:
        x = np.moveaxis(np.tensordot(x, resample_weights(w, out_w, antialias), axes=(1, 1)), 2, 1)
    return np.ascontiguousarray(x)


def resample_bicubic(frame: Frame, target: Resolution, antialias: bool = True) -> Frame:
    if target.width < 1 or target.height < 1:
        raise InvalidInputError("zero-sized resample target")
    out = resample_array(frame.samples, target.height, target.width, antialias)
    if frame.colorspace in EIGHT_BIT:
        out = to_uint8(out)
    return frame.with_samples(out)


# --- padding --------------------------------------------------------------


def reflect_pad(frame: Frame, pad: int) -> Frame:
    if pad < 0 or pad >= min(frame.width, frame.height):
        raise InvalidInputError(f"pad {pad} invalid for {frame.width}x{frame.height} frame")
    if pad == 0:
        return frame
    return frame.with_samples(np.pad(frame.samples, ((pad, pad), (pad, pad), (0, 0)), mode="reflect"))


def crop_pad(frame: Frame, pad: int) -> Frame:
    if pad < 0 or 2 * pad >= min(frame.width, frame.height):
        raise InvalidInputError(f"cannot crop {pad} from {frame.width}x{frame.height} frame")
    if pad == 0:
        return frame
    return frame.with_samples(np.ascontiguousarray(frame.samples[pad:-pad, pad:-pad]))


# --- file I/O -------------------------------------------------------------


def save_png(frame: Frame, path) -> None:
    if frame.colorspace not in EIGHT_BIT:
        raise InvalidInputError("only 8-bit frames can be written as PNG")
    s = frame.samples[:, :, 0] if frame.channels == 1 else frame.samples
    Image.fromarray(np.ascontiguousarray(s)).save(path, format="PNG")


def load_png(path, stream: StreamKind = StreamKind.GT, frame_index: int = 0, timestamp_ms: int = 0) -> Frame:
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "1"):
            arr, cs = np.asarray(im.convert("L")), ColorSpace.GRAY8
        else:
            arr, cs = np.asarray(im.convert("RGB")), ColorSpace.SRGB8
    return Frame(arr.copy(), cs, timestamp_ms, stream, frame_index)


_RAW_HEADER = struct.Struct("<III")


def save_raw(frame: Frame, path) -> None:
    """Planar dump: ``<width, height, channels>`` as uint32 LE, then one plane per channel.

    8-bit frames store one byte per sample, real-valued frames little-endian float64.
    """
    planes = np.ascontiguousarray(np.moveaxis(frame.samples, 2, 0))
    if planes.dtype == np.float64:
        planes = planes.astype("<f8")
    Path(path).write_bytes(_RAW_HEADER.pack(frame.width, frame.height, frame.channels) + planes.tobytes())


def load_raw(path, colorspace: ColorSpace | None = None) -> Frame:
    data = Path(path).read_bytes()
    w, h, c = _RAW_HEADER.unpack_from(data)
    body = data[_RAW_HEADER.size :]
    n = w * h * c
    if len(body) == n:
        arr, default = np.frombuffer(body, dtype=np.uint8), ColorSpace.GRAY8 if c == 1 else ColorSpace.SRGB8
    elif len(body) == 8 * n:
        arr, default = np.frombuffer(body, dtype="<f8").astype(np.float64), (
            ColorSpace.GRAY_NORM if c == 1 else ColorSpace.LAB_NORM
        )
    else:
        raise InvalidInputError(f"{path}: body of {len(body)} bytes does not match {w}x{h}x{c}")
    samples = np.moveaxis(arr.reshape(c, h, w), 0, 2).copy()
    return Frame(samples, colorspace or default)
