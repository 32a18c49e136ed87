import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import attention_direct, conv3x3_direct

from neuricam.nnkernels import (
    DecoderStepError,
    ShapeError,
    attention_filter_backward,
    attention_filter_forward,
    charbonnier,
    conv3x3,
    frame_memory_step,
    gradient_check,
    kernel_check,
    load_tensor,
    pixel_shuffle,
    pixel_unshuffle,
    residual_block_forward,
    run_recurrence,
    save_tensor,
)

GOLDEN = Path(__file__).parent / "golden"
E = math.e
# Frozen from the hand evaluation: scores (1, 0) -> weights e/(e+1), 1/(e+1)
W0, W1 = 0.7310585786300049, 0.2689414213699951


def test_two_level_hand_example():
    levels = np.array([[[[1.0, 0.0]]], [[[0.0, 1.0]]]])
    query = np.array([[[1.0, 0.0]]])
    out, w = attention_filter_forward(levels, query)
    assert w[0, 0, 0] == pytest.approx(E / (E + 1), abs=1e-12) == pytest.approx(W0, abs=1e-15)
    assert w[0, 0, 1] == pytest.approx(1 / (E + 1), abs=1e-12) == pytest.approx(W1, abs=1e-15)
    np.testing.assert_allclose(out[0, 0], [W0, W1], atol=1e-12)


def test_golden_tensors_match_loop_oracle():
    levels = load_tensor(GOLDEN / "attention_levels.f64")
    query = load_tensor(GOLDEN / "attention_query.f64")
    out, w = attention_filter_forward(levels, query)
    np.testing.assert_allclose(out, load_tensor(GOLDEN / "attention_out.f64"), atol=1e-12)
    np.testing.assert_allclose(w, load_tensor(GOLDEN / "attention_weights.f64"), atol=1e-12)
    ro, rw = attention_direct(levels.tolist(), query.tolist())
    np.testing.assert_allclose(out, ro, atol=1e-12)


def test_tensor_file_round_trip(tmp_path):
    x = np.random.default_rng(0).standard_normal((2, 3, 4))
    save_tensor(x, tmp_path / "t.f64")
    assert np.array_equal(load_tensor(tmp_path / "t.f64"), x)
    assert (tmp_path / "t.f64").stat().st_size == 4 + 12 + 8 * 24


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 5), st.integers(1, 5), st.integers(1, 9))
def test_weights_sum_to_one_and_positive(seed, L, h, w, c):
    rng = np.random.default_rng(seed)
    levels, query = rng.standard_normal((L, h, w, c)) * 3, rng.standard_normal((h, w, c)) * 3
    out, wt = attention_filter_forward(levels, query)
    assert out.shape == (h, w, c) and wt.shape == (h, w, L)
    assert np.max(np.abs(wt.sum(axis=-1) - 1.0)) <= 1e-12
    assert np.all(wt > 0)


def test_single_level_passthrough():
    rng = np.random.default_rng(1)
    levels, query = rng.standard_normal((1, 4, 4, 8)), rng.standard_normal((4, 4, 8))
    out, w = attention_filter_forward(levels, query)
    assert np.array_equal(out, levels[0]) and np.all(w == 1.0)
    g = rng.standard_normal((4, 4, 8))
    gl, gq = attention_filter_backward(levels, query, g)
    assert np.array_equal(gl[0], g) and np.all(gq == 0)


def test_identical_levels():
    f = np.random.default_rng(2).standard_normal((3, 3, 5))
    out, w = attention_filter_forward(np.stack([f] * 4), np.ones((3, 3, 5)))
    np.testing.assert_allclose(out, f, atol=1e-15)
    np.testing.assert_allclose(w, 0.25, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations(range(5)))
def test_level_permutation_invariance(seed, perm):
    rng = np.random.default_rng(seed)
    levels, query = rng.standard_normal((5, 3, 4, 6)), rng.standard_normal((3, 4, 6))
    out, w = attention_filter_forward(levels, query)
    po, pw = attention_filter_forward(levels[list(perm)], query)
    assert np.array_equal(po, out)
    assert np.array_equal(pw, w[..., list(perm)])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_output_in_convex_hull(seed):
    rng = np.random.default_rng(seed)
    levels, query = rng.standard_normal((4, 5, 5, 1)), rng.standard_normal((5, 5, 1))
    out, _ = attention_filter_forward(levels, query)
    assert np.all(out >= levels.min(axis=0) - 1e-12) and np.all(out <= levels.max(axis=0) + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 5.0), st.integers(0, 3))
def test_sharpening_raises_weight(seed, beta, level):
    rng = np.random.default_rng(seed)
    levels, query = rng.standard_normal((4, 2, 2, 3)), rng.standard_normal((2, 2, 3))
    query[0, 0] += 0.5  # keep the query away from zero
    _, w = attention_filter_forward(levels, query)
    boosted = levels.copy()
    boosted[level, 0, 0] += beta * query[0, 0]
    _, w2 = attention_filter_forward(boosted, query)
    assert w2[0, 0, level] > w[0, 0, level]


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(3)
    gl, gq = attention_filter_backward(rng.standard_normal((3, 2, 2, 4)), rng.standard_normal((2, 2, 4)), np.zeros((2, 2, 4)))
    assert not gl.any() and not gq.any()


@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences(seed):
    assert gradient_check(seed) <= 1e-4


def test_shape_errors():
    with pytest.raises(ShapeError):
        attention_filter_forward(np.zeros((2, 2, 2, 3)), np.zeros((2, 2, 4)))
    with pytest.raises(ShapeError):
        attention_filter_forward(np.zeros((0, 2, 2, 3)), np.zeros((2, 2, 3)))
    with pytest.raises(ShapeError):
        pixel_shuffle(np.zeros((2, 2, 5)), 2)


def test_conv_matches_direct_oracle():
    rng = np.random.default_rng(4)
    x, w, b = rng.standard_normal((5, 4, 3)), rng.standard_normal((3, 3, 3, 2)), rng.standard_normal(2)
    np.testing.assert_allclose(conv3x3(x, w, b), conv3x3_direct(x.tolist(), w.tolist(), b.tolist()), atol=1e-12)


def test_residual_block_one_pixel_value():
    w1 = np.zeros((3, 3, 1, 1))
    w2 = np.zeros((3, 3, 1, 1))
    w1[1, 1, 0, 0], w2[1, 1, 0, 0] = 3.0, 0.5
    x = np.array([[[2.0]]])
    # 2 + (0.5 * relu(3 * 2 - 1) + 0.25) = 4.75; off-centre taps only ever see zero padding
    w1[0, 0, 0, 0] = w2[2, 1, 0, 0] = 99.0
    assert residual_block_forward(x, w1, [-1.0], w2, [0.25])[0, 0, 0] == 4.75


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 9), st.integers(1, 9), st.integers(1, 6))
def test_residual_zero_weights_identity(seed, h, w, c):
    x = np.random.default_rng(seed).standard_normal((h, w, c))
    z = np.zeros((3, 3, c, c))
    out = residual_block_forward(x, z, np.zeros(c), z, np.zeros(c))
    assert out.shape == x.shape and np.array_equal(out, x)


def test_residual_matches_oracle():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 5, 2))
    w1, b1 = rng.standard_normal((3, 3, 2, 3)), rng.standard_normal(3)
    w2, b2 = rng.standard_normal((3, 3, 3, 2)), rng.standard_normal(2)
    hidden = np.maximum(np.array(conv3x3_direct(x.tolist(), w1.tolist(), b1.tolist())), 0)
    ref = x + np.array(conv3x3_direct(hidden.tolist(), w2.tolist(), b2.tolist()))
    np.testing.assert_allclose(residual_block_forward(x, w1, b1, w2, b2), ref, atol=1e-12)


def test_pixel_shuffle_unrolled():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    out = pixel_shuffle(np.array([[[a, b, c, d]]]), 2)
    assert out[..., 0].tolist() == [[a, b], [c, d]]
    x = np.arange(8.0).reshape(1, 1, 8)  # two output channels
    y = pixel_shuffle(x, 2)
    assert y[..., 0].tolist() == [[0, 1], [2, 3]] and y[..., 1].tolist() == [[4, 5], [6, 7]]


def test_pixel_shuffle_full_size():
    x = np.random.default_rng(6).standard_normal((120, 160, 48))
    y = pixel_shuffle(x, 4)
    assert y.shape == (480, 640, 3)
    assert np.array_equal(pixel_unshuffle(y, 4), x)
    assert np.array_equal(pixel_shuffle(x, 1), x)


def test_charbonnier_closed_forms():
    z = np.zeros(7)
    assert charbonnier(z, z) == 1e-3
    assert charbonnier(z, z, mode="frame") == 1e-3
    assert charbonnier(np.array([3.0]), np.array([0.0])) == pytest.approx(math.sqrt(9 + 1e-6), rel=1e-15)
    d = np.array([3.0, 4.0])
    assert charbonnier(d, np.zeros(2), mode="frame") == pytest.approx(math.sqrt(25 + 1e-6), rel=1e-15)
    assert charbonnier(d, np.zeros(2)) == pytest.approx((math.sqrt(9 + 1e-6) + math.sqrt(16 + 1e-6)) / 2, rel=1e-15)
    with pytest.raises(ValueError):
        charbonnier(d, d, mode="nope")


def test_frame_memory_step_contract():
    key = np.full((2, 2), 7.0)
    out, state = frame_memory_step("l", key, None, np.ones(3), step=None)
    assert out is key and np.array_equal(state, np.zeros(3))
    out, state = frame_memory_step("l", None, "prev", 5, step=lambda l, p, s: (("dec", l), s + 1))
    assert out == ("dec", "l") and state == 6

    def broken(l, p, s):
        raise RuntimeError("boom")

    with pytest.raises(DecoderStepError):
        frame_memory_step("l", None, None, 0, broken)


def test_recurrence_bypasses_decoder_only_at_keys():
    calls = []

    def step(l, prev, state):
        calls.append(l)
        return l, state + 1

    keys = {t: f"key{t}" for t in range(0, 31, 15)}
    outs = run_recurrence(list(range(31)), keys, step)
    assert [t for t in range(31) if t not in calls] == [0, 15, 30]
    assert outs[15] == "key15" and outs[7] == 7


def test_kernel_check_suite_passes():
    results = kernel_check(seeds=5)
    assert all(ok for _, ok, _ in results), results
