"""Power, bandwidth and design-space arithmetic for the dual-camera node."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .imgcore import HR_DEFAULT, LR_DEFAULT, InvalidInputError, Resolution

# Active window of the colour sensor per capture (initialisation + readout).
HR_ACTIVE_S = 0.040
HR_ACTIVE_MA = 27.52


@dataclass(frozen=True)
class PowerEntry:
    name: str
    active_current_mA: float
    voltage_V: float
    duty_cycle: float = 1.0
    kind: str = "sensor"
    unoptimized: bool = False

    def __post_init__(self):
        if self.active_current_mA < 0 or self.voltage_V < 0:
            raise InvalidInputError(f"{self.name}: current and voltage must be >= 0")
        if not 0.0 <= self.duty_cycle <= 1.0:
            raise InvalidInputError(f"{self.name}: duty cycle {self.duty_cycle} outside [0, 1]")

    @property
    def average_current_mA(self) -> float:
        return self.active_current_mA * self.duty_cycle


def average_power(entry: PowerEntry) -> float:
    """Average power in mW (mA x V)."""
    return entry.active_current_mA * entry.duty_cycle * entry.voltage_V


@dataclass(frozen=True)
class SystemProfile:
    entries: tuple
    lr_res: Resolution = LR_DEFAULT
    hr_res: Resolution = HR_DEFAULT
    lr_fps: float = 15.0
    key_fps: float = 1.0

    def __post_init__(self):
        if not self.entries:
            raise InvalidInputError("profile has no entries")

    def sensors(self) -> list:
        return [e for e in self.entries if e.kind == "sensor"]

    def get(self, name: str) -> PowerEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SystemProfile:
        d = dict(d)
        d["entries"] = tuple(PowerEntry(**e) for e in d["entries"])
        for k in ("lr_res", "hr_res"):
            if k in d:
                d[k] = Resolution(**d[k])
        return cls(**d)

    @classmethod
    def load(cls, path) -> SystemProfile:
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_profile() -> SystemProfile:
    return SystemProfile(
        entries=(
            PowerEntry("Himax HM01B0 (15fps)", 0.97, 2.8),
            PowerEntry("OmniVision OV7692 (1fps)", HR_ACTIVE_MA, 2.8, duty_cycle=HR_ACTIVE_S * 1.0),
            PowerEntry("STM32L496 MCU", 4.57, 1.8, kind="mcu", unoptimized=True),
            PowerEntry("STM32U575 MCU", 18.0, 1.8, kind="mcu", unoptimized=True),
            PowerEntry("TI CC2640R2F Radios", 21.42, 1.8, kind="radio", unoptimized=True),
        )
    )


def camera_subsystem_power(profile: SystemProfile) -> float:
    sensors = profile.sensors()
    if len(sensors) < 2:
        raise InvalidInputError("profile needs both the low- and high-resolution sensor")
    return sum(average_power(e) for e in sensors)


def total_power(profile: SystemProfile) -> float:
    return sum(average_power(e) for e in profile.entries)


def single_camera_power(fps: float = 15.0, active_mA: float = HR_ACTIVE_MA, voltage_V: float = 2.8) -> float:
    """Colour sensor capturing every frame: ``fps`` active windows of 40 ms per second."""
    duty = min(1.0, fps * HR_ACTIVE_S)
    return average_power(PowerEntry("single colour camera", active_mA, voltage_V, duty))


def sensor_power_ratio(profile: SystemProfile, fps: float | None = None) -> float:
    return single_camera_power(fps or profile.lr_fps) / camera_subsystem_power(profile)


@dataclass(frozen=True)
class DataFactors:
    per_frame: float
    full_rate: float

    per_frame_definition: str = "(hr_w*hr_h*3) / (lr_w*lr_h): colour VGA frame vs one gray QQVGA frame"
    full_rate_definition: str = "(hr_w*hr_h*3*fps) / (lr_w*lr_h*fps + hr_w*hr_h*3*key_fps): samples per second"


def data_reduction_factor(profile: SystemProfile) -> DataFactors:
    hr = profile.hr_res.width * profile.hr_res.height * 3
    lr = profile.lr_res.width * profile.lr_res.height
    full = hr * profile.lr_fps / (lr * profile.lr_fps + hr * profile.key_fps)
    return DataFactors(hr / lr, full)


def pixel_rates(profile: SystemProfile) -> tuple:
    hr = profile.hr_res.width * profile.hr_res.height
    lr = profile.lr_res.width * profile.lr_res.height
    single = hr * profile.lr_fps
    dual = lr * profile.lr_fps + hr * profile.key_fps
    return single, dual


def codec_pixel_power_ratio(profile: SystemProfile) -> float:
    """Codec power ratio single/dual, assuming power linear in pixels per second."""
    single, dual = pixel_rates(profile)
    if dual <= 0:
        raise InvalidInputError("dual-camera pixel rate must be positive")
    return single / dual


def bitrate_split(total_bps: float) -> tuple:
    """Three quarters of the budget to the low-resolution stream, the rest to key frames."""
    if not total_bps > 0:
        raise InvalidInputError("total bitrate must be positive")
    return 0.75 * total_bps, 0.25 * total_bps


def duty_cycle_savings(fps: float) -> float:
    if fps < 1:
        raise InvalidInputError("fps must be >= 1")
    return float(fps)


@dataclass
class PowerReport:
    rows: list = field(default_factory=list)  # (quantity, computed, unit, reference value, note)

    def add(self, quantity, computed, unit, reference, note=""):
        self.rows.append((quantity, computed, unit, reference, note))

    def to_markdown(self) -> str:
        lines = ["| Quantity | Computed | Unit | Reference | Note |", "|---|---|---|---|---|"]
        for q, c, u, p, n in self.rows:
            cv = f"{c:.4f}" if isinstance(c, float) else str(c)
            lines.append(f"| {q} | {cv} | {u} | {p} | {n} |")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "rows": [
                {"quantity": q, "computed": c, "unit": u, "reference": p, "note": n} for q, c, u, p, n in self.rows
            ]
        }


def power_report(profile: SystemProfile | None = None) -> PowerReport:
    from .capture import CaptureConfig
    from .wire import rate_report

    profile = profile or default_profile()
    rep = PowerReport()
    for e in profile.entries:
        tag = "unoptimized" if e.unoptimized else ""
        rep.add(f"{e.name} average current", e.average_current_mA, "mA", "", tag)
        rep.add(f"{e.name} average power", average_power(e), "mW", "", tag)
    cam = camera_subsystem_power(profile)
    rep.add("camera subsystem power", cam, "mW", "5.8 mW", "sum of sensor entries")
    rep.add("total node power", total_power(profile), "mW", "85 mW / 106 mW", "two table versions")
    single = single_camera_power(profile.lr_fps)
    rep.add("single colour camera at 15 fps", single, "mW", "46.2 mW", "27.52 mA x 15 x 40 ms x 2.8 V")
    rep.add("sensor power ratio single/dual", single / cam, "x", "8x", "")
    rep.add("codec pixel-rate ratio", codec_pixel_power_ratio(profile), "x", "7-8x", "power linear in pixels/s")
    f = data_reduction_factor(profile)
    rep.add("data reduction (per frame)", f.per_frame, "x", "48x", f.per_frame_definition)
    rep.add("data reduction (full rate)", f.full_rate, "x", "", f.full_rate_definition)
    rep.add("duty-cycle savings", duty_cycle_savings(profile.lr_fps), "x", "15x", "at the LR frame rate")
    rr = rate_report(CaptureConfig(lr_fps=profile.lr_fps, lr_res=profile.lr_res, hr_res=profile.hr_res))
    rep.add("LR stream raw rate", rr.lr_bps, "bit/s", "", f"{rr.lr_radios} radio(s) at 2.5 Mbps")
    rep.add("key frame size", rr.key_frame_bits, "bit", "5 Mb", f"{rr.key_radios} radio(s) at 1 fps")
    lo, hi = bitrate_split(1.0)
    rep.add("bitrate split LR/key", f"{lo:.2f}/{hi:.2f}", "fraction", "3/4 : 1/4", "")
    return rep
