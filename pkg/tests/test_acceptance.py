"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v`` (or
``python3 tests/test_acceptance.py``); verdicts are repeated in the pytest
terminal summary.
"""
import json
import math
import sys
from pathlib import Path

import numpy as np
import pytest
from acceptance_log import criterion
from conftest import DATA, NATURAL
from helpers import map_points, random_homography, random_quad

from neuricam import cli
from neuricam.capture import CaptureConfig, load_stream
from neuricam.geometry import Homography, apply_homography, estimate_homography
from neuricam.imgcore import (
    ColorSpace,
    Frame,
    StreamKind,
    lab_to_rgb,
    load_png,
    rgb8_to_lab,
    rgb_to_lab,
)
from neuricam.nnkernels import (
    attention_filter_forward,
    charbonnier,
    gradient_check,
    pixel_shuffle,
    pixel_unshuffle,
    residual_block_forward,
)
from neuricam.powermodel import (
    bitrate_split,
    camera_subsystem_power,
    codec_pixel_power_ratio,
    data_reduction_factor,
    default_profile,
    duty_cycle_savings,
    sensor_power_ratio,
    single_camera_power,
)
from neuricam.repair import repair_lost_lines, repair_report
from neuricam.wire import (
    FOOTER,
    ChannelModel,
    Packet,
    StreamLayout,
    channel_transmit,
    packetize,
    rate_report,
    reassemble,
)


@criterion(1, "power table reproduction", limit_s=1.0)
def test_01_power_table():
    p = default_profile()
    cam = camera_subsystem_power(p)
    assert abs(cam - 5.8) <= 0.02 * 5.8, cam
    ov = p.get("OmniVision OV7692 (1fps)").average_current_mA
    assert abs(ov - 1.10) <= 0.01 * 1.10, ov
    assert abs(single_camera_power(15) - 46.2) <= 0.02 * 46.2
    ratio = sensor_power_ratio(p)
    assert abs(ratio - 8.0) <= 0.05 * 8.0, ratio


@criterion(2, "design-space arithmetic", limit_s=1.0)
def test_02_design_space():
    p = default_profile()
    codec = codec_pixel_power_ratio(p)
    assert codec == 4_608_000 / 595_200 and round(codec, 3) == 7.742 and 7 <= codec <= 8
    assert data_reduction_factor(p).per_frame == 48
    assert duty_cycle_savings(15) == 15
    assert rate_report(CaptureConfig()).key_frame_bits == 4_915_200
    assert bitrate_split(1.0) == (0.75, 0.25)


@criterion(3, "wire round trip, footer and 7% PER statistics", limit_s=10.0)
def test_03_wire():
    rng = np.random.default_rng(20240603)
    for i in range(100):
        lr = Frame(rng.integers(0, 256, (120, 160, 1), dtype=np.uint8), ColorSpace.GRAY8, int(rng.integers(2**32)), StreamKind.LR, i)
        key = Frame(rng.integers(0, 256, (480, 640, 3), dtype=np.uint8), ColorSpace.SRGB8, int(rng.integers(2**32)), StreamKind.KEY, i)
        for f, is_key in ((lr, False), (key, True)):
            pk = packetize(f)
            assert pk[-1].payload[-3:] == FOOTER == bytes((13, 0, 10))
            survivors = channel_transmit([Packet.from_bytes(p.to_bytes()) for p in pk], ChannelModel(0.0, seed=i))
            got = reassemble(survivors, StreamLayout.of(f), key=is_key)
            assert got.frame.equals(f) and got.losses == {} and got.frame.timestamp_ms == f.timestamp_ms
    n, p = 10_000, 0.07
    pk = [Packet(0, k // 121, k % 121, 0, b"\x00") for k in range(n)]
    kept = len(channel_transmit(pk, ChannelModel(p, seed=7)))
    assert abs(kept - n * (1 - p)) <= 3 * math.sqrt(n * p * (1 - p)), kept


@criterion(4, "loss repair on constant and natural images", limit_s=5.0)
def test_04_repair():
    for name in NATURAL:
        ref = load_png(DATA / f"{name}_640x480.png")
        assert repair_lost_lines(ref, {}).equals(ref)
        for losses in ({200: 2}, {333: 1}, {121: 1, 350: 2}):
            x = ref.samples.copy()
            for s, c in losses.items():
                x[s : s + c] = 0
            damaged = ref.with_samples(x)
            stats = repair_report(damaged, repair_lost_lines(damaged, losses), ref, losses)
            assert stats.psnr_after > stats.psnr_before, (name, losses, stats)
            assert stats.psnr_after > 35.0, (name, losses, stats)
    for v in (0, 77, 255):
        const = Frame(np.full((120, 160, 3), v, np.uint8), ColorSpace.SRGB8)
        x = const.samples.copy()
        x[[0, 3, 4, 60, 61, 119]] = 0
        losses = {0: 1, 3: 2, 60: 2, 119: 1}
        assert repair_lost_lines(const.with_samples(x), losses).equals(const)


@criterion(5, "homography estimation and round trips", limit_s=5.0)
def test_05_homography():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        h = random_homography(rng)
        src = random_quad(rng)
        est = estimate_homography(src, map_points(h, src))
        assert np.max(np.abs(est.h - h)) <= 1e-8
        hh = Homography(h)
        hi = hh.inverse()
        p = rng.uniform(0, 640, 2)
        q = apply_homography(hi, apply_homography(hh, p))
        assert max(abs(q[0] - p[0]), abs(q[1] - p[1])) <= 1e-9
    src = random_quad(rng)
    assert np.max(np.abs(estimate_homography(src, src).h - np.eye(3))) <= 1e-12
    t = estimate_homography(src, src + [5.0, -3.0]).h
    assert np.max(np.abs(t - [[1, 0, 5], [0, 1, -3], [0, 0, 1]])) <= 1e-12


@criterion(6, "attention filter properties and gradients", limit_s=30.0)
def test_06_attention():
    rng = np.random.default_rng(6)
    for _ in range(20):
        levels, query = rng.standard_normal((4, 4, 4, 8)) * 2, rng.standard_normal((4, 4, 8)) * 2
        out, w = attention_filter_forward(levels, query)
        assert np.max(np.abs(w.sum(axis=-1) - 1.0)) <= 1e-12
        o1, w1 = attention_filter_forward(levels[:1], query)
        assert np.array_equal(o1, levels[0]) and np.all(w1 == 1.0)
        perm = rng.permutation(4)
        po, pw = attention_filter_forward(levels[perm], query)
        assert np.array_equal(po, out) and np.array_equal(pw, w[..., perm])
    worst = max(gradient_check(seed, shape=(4, 4, 8), n_levels=4) for seed in range(50))
    assert worst <= 1e-4, worst


@criterion(7, "kernel identities", limit_s=5.0)
def test_07_kernels():
    z = np.zeros((5, 5))
    assert charbonnier(z, z, epsilon=1e-3) == 1e-3
    assert charbonnier(z, z, epsilon=1e-3, mode="frame") == 1e-3
    x = np.random.default_rng(7).standard_normal((120, 160, 48))
    y = pixel_shuffle(x, 4)
    assert y.shape == (480, 640, 3) and np.array_equal(pixel_unshuffle(y, 4), x)
    feat = np.random.default_rng(8).standard_normal((30, 40, 64))
    zw = np.zeros((3, 3, 64, 64))
    assert np.array_equal(residual_block_forward(feat, zw, np.zeros(64), zw, np.zeros(64)), feat)


@criterion(8, "Lab colour-space round trip", limit_s=30.0)
def test_08_colorspace():
    axis = np.linspace(0, 255, 32).round().astype(np.uint8)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(32, 1024, 3)
    f = Frame(grid, ColorSpace.SRGB8)
    back = lab_to_rgb(rgb_to_lab(f)).samples.astype(int)
    assert np.max(np.abs(back - grid.astype(int))) <= 1
    white = rgb8_to_lab(np.array([255, 255, 255], dtype=np.uint8))
    assert abs(white[0] - 100) <= 1e-12 and abs(white[1]) <= 1e-12 and abs(white[2]) <= 1e-12


def _end_to_end(out: Path, scene: str, *extra) -> dict:
    args = ["end-to-end", "--scene", scene, "--frames", "31", "--seed", "0", "--per", "0", "--out", str(out), *extra]
    assert cli.main(args) == 0
    return json.loads((out / "evaluation" / "summary.json").read_text())


@criterion(9, "end-to-end protocol semantics", limit_s=60.0)
def test_09_end_to_end(tmp_path):
    summary = _end_to_end(tmp_path / "static", "static", "--no-ssim")
    frames = sorted((tmp_path / "static" / "reconstructed").glob("frame_*.png"))
    assert len(frames) == 31
    keys = load_stream(tmp_path / "static" / "capture").key_frames
    assert [k.frame_index for k in keys] == [0, 15, 30]
    for k in keys:
        assert np.array_equal(load_png(frames[k.frame_index]).samples, k.samples)
    for cs in ("AB", "RGB", "Y"):
        rep = json.loads((tmp_path / "static" / "evaluation" / f"report_{cs.lower()}.json").read_text())
        assert rep["excluded_key_frames"] == [0, 15, 30]
        assert sorted(set(rep["per_frame"]["index"]) | {0, 15, 30}) == list(range(31))
    assert summary["AB"]["mean_psnr_db"] >= 40, summary["AB"]
    assert summary["RGB"]["mean_psnr_db"] >= 35, summary["RGB"]

    _end_to_end(tmp_path / "pan", "pan", "--no-ssim", "--channels", "AB")
    rep = json.loads((tmp_path / "pan" / "evaluation" / "report_ab.json").read_text())
    per = dict(zip(rep["per_frame"]["index"], rep["per_frame"]["psnr_db"]))
    for start in (0, 15):
        window = {t: per[t] for t in range(start + 1, start + 15)}
        worst = min(window, key=window.get)
        assert start + 5 <= worst < start + 10, (start, worst, window)


@criterion(10, "end-to-end determinism", limit_s=None)
def test_10_determinism(tmp_path):
    trees = []
    for run in ("a", "b"):
        out = tmp_path / run
        args = ["end-to-end", "--scene", "pan", "--frames", "31", "--seed", "42", "--per", "0.05", "--out", str(out)]
        assert cli.main(args) == 0
        trees.append({p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    assert trees[0].keys() == trees[1].keys() and len(trees[0]) > 100
    diff = [k for k in trees[0] if trees[0][k] != trees[1][k]]
    assert not diff, diff


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
