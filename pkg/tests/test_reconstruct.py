import numpy as np
import pytest

from neuricam.capture import CaptureConfig, DesyncError, sample_keyframes, split_windows
from neuricam.geometry import Homography
from neuricam.imgcore import (
    ColorSpace,
    Frame,
    InvalidInputError,
    Resolution,
    rgb8_to_lab,
)
from neuricam.metrics import evaluate_sequence
from neuricam.reconstruct import (
    BaselineDecoder,
    DecoderError,
    FrameCountError,
    IdentityDecoder,
    export_frames,
    get_decoder,
    import_external_reconstruction,
    nearest_key,
    reconstruct_sequence,
    scale_homography,
)
from neuricam.scenes import panning_scene, static_scene

LR, HR = Resolution(40, 30), Resolution(160, 120)
CFG = CaptureConfig(lr_res=LR, hr_res=HR)


def stream(n, scene=static_scene, cfg=CFG):
    return sample_keyframes(scene(n, cfg.hr_res), cfg)


def test_nearest_key_rule():
    s = stream(31)
    w = split_windows(s)[0]
    assert nearest_key(w, 7).frame_index == 0
    assert nearest_key(w, 8).frame_index == 15
    even = sample_keyframes(static_scene(9, HR), CaptureConfig(key_interval=4, lr_res=LR, hr_res=HR))
    assert nearest_key(split_windows(even)[0], 2).frame_index == 0


def test_identity_decoder_harness_contract():
    s = stream(31)
    out = reconstruct_sequence(s, IdentityDecoder())
    assert len(out) == 31
    for k in s.key_frames:
        assert np.array_equal(out[k.frame_index].samples, k.samples)
    assert all(f.resolution == HR and f.colorspace == ColorSpace.SRGB8 for f in out)
    # non-key frames really are pixel-replicated LR gray
    lr = s.lr_frames[3].samples[..., 0]
    assert np.array_equal(out[3].samples[::4, ::4, 0], lr)


def test_baseline_static_scene_quality():
    s = stream(31)
    gt = static_scene(31, HR)
    out = reconstruct_sequence(s, BaselineDecoder())
    assert evaluate_sequence(out, gt, 15, "AB", with_ssim=False).mean_psnr >= 40
    assert evaluate_sequence(out, gt, 15, "RGB", with_ssim=False).mean_psnr >= 35


def test_baseline_gray_scene_stays_achromatic():
    g = np.linspace(20, 230, HR.width).astype(np.uint8)
    img = np.repeat(np.tile(g, (HR.height, 1))[..., None], 3, axis=2)
    gt = [Frame(img, ColorSpace.SRGB8)] * 16
    out = reconstruct_sequence(sample_keyframes(gt, CFG), BaselineDecoder())
    lab = rgb8_to_lab(out[7].samples)
    # one 8-bit LSB in RGB moves a*/b* of a gray by well under 1.5 units
    assert np.abs(lab[..., 1:]).max() <= 1.5


def test_trailing_partial_window():
    s = stream(20)
    out = reconstruct_sequence(s, BaselineDecoder())
    assert len(out) == 20
    w = split_windows(s)[-1]
    assert w.partial and nearest_key(w, 19).frame_index == 15


def test_deterministic_and_parallel():
    s = stream(31, panning_scene)
    a = reconstruct_sequence(s, BaselineDecoder())
    b = reconstruct_sequence(s, BaselineDecoder(), parallel=3)
    assert all(x.equals(y) for x, y in zip(a, b))


def test_panning_minimum_mid_window():
    s = stream(16, panning_scene)
    gt = panning_scene(16, HR)
    rep = evaluate_sequence(reconstruct_sequence(s, BaselineDecoder()), gt, 15, "AB", with_ssim=False)
    worst = rep.indices[int(np.argmin(rep.psnr))]
    assert 5 <= worst <= 9
    assert rep.psnr[0] > rep.psnr[int(np.argmin(rep.psnr))]


class Broken:
    name = "broken"

    def decode(self, window, scale):
        raise RuntimeError("no weights")


class Short:
    name = "short"

    def decode(self, window, scale):
        return IdentityDecoder().decode(window, scale)[:-1]


def test_decoder_failures_are_wrapped():
    s = stream(16)
    with pytest.raises(DecoderError) as e:
        reconstruct_sequence(s, Broken())
    assert e.value.window_index == 0
    with pytest.raises(DecoderError):
        reconstruct_sequence(s, Short())


def test_desync_detected():
    s = stream(16)
    k = s.key_frames[1]
    s.key_frames[1] = Frame(k.samples, k.colorspace, k.timestamp_ms + 30, k.stream, k.frame_index)
    with pytest.raises(DesyncError):
        reconstruct_sequence(s, IdentityDecoder())


def test_export_import_round_trip(tmp_path):
    s = stream(16)
    gt = static_scene(16, HR)
    out = reconstruct_sequence(s, BaselineDecoder())
    export_frames(out, tmp_path)
    back = import_external_reconstruction(tmp_path, 16, HR)
    a = evaluate_sequence(out, gt, 15, "RGB")
    b = evaluate_sequence(back, gt, 15, "RGB")
    assert a.psnr == b.psnr and a.ssim == b.ssim
    with pytest.raises(FrameCountError, match="expected 17 frames, found 16"):
        import_external_reconstruction(tmp_path, 17, HR)


def test_calibration_warp_modes():
    s = stream(16)
    h = Homography([[1, 0, 1.0], [0, 1, 0], [0, 0, 1]])
    for mode in ("lr", "key"):
        out = reconstruct_sequence(s, BaselineDecoder(), h, warp=mode)
        assert len(out) == 16 and out[0].equals(Frame(s.key_frames[0].samples, ColorSpace.SRGB8))
    with pytest.raises(InvalidInputError):
        reconstruct_sequence(s, BaselineDecoder(), h, warp="both")
    np.testing.assert_allclose(scale_homography(h, 4).h[0, 2], 4.0)


def test_unknown_decoder():
    with pytest.raises(InvalidInputError):
        get_decoder("bilateral")
    assert isinstance(get_decoder("baseline"), BaselineDecoder)
