"""Reference numpy kernels for the reconstruction network's building blocks.

Feature maps are ``(h, w, c)`` float64 arrays; a level stack is ``(L, h, w, c)``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


class ShapeError(ValueError):
    pass


def _stack(levels) -> np.ndarray:
    levels = np.asarray(levels, dtype=np.float64)
    if levels.ndim != 4 or levels.shape[0] < 1:
        raise ShapeError(f"level stack must be (L, h, w, c) with L >= 1, got {levels.shape}")
    return levels


def _ordered_sum(x: np.ndarray) -> np.ndarray:
    # Sum over axis 0 after sorting, so the result does not depend on level order.
    x = np.sort(x, axis=0)
    acc = x[0].copy()
    for term in x[1:]:
        acc += term
    return acc


def attention_scores(levels, query) -> np.ndarray:
    levels = _stack(levels)
    query = np.asarray(query, dtype=np.float64)
    if query.shape != levels.shape[1:]:
        raise ShapeError(f"query {query.shape} does not match level maps {levels.shape[1:]}")
    return np.einsum("lhwc,hwc->lhw", levels, query)


def attention_filter_forward(levels, query) -> tuple:
    """Per-location softmax over levels of the level/query dot product.

    Returns ``(output, weights)`` with ``output`` of shape ``(h, w, c)`` and
    ``weights`` of shape ``(h, w, L)``. Each location's weight scales every
    channel of its level vector.
    """
    levels = _stack(levels)
    s = attention_scores(levels, query)
    e = np.exp(s - s.max(axis=0, keepdims=True))
    a = e / _ordered_sum(e)
    out = _ordered_sum(a[..., None] * levels)
    return out, np.moveaxis(a, 0, -1)


def attention_filter_backward(levels, query, upstream) -> tuple:
    """Gradients of ``sum(upstream * forward(levels, query)[0])``.

    Returns ``(grad_levels, grad_query)``.
    """
    levels = _stack(levels)
    query = np.asarray(query, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != levels.shape[1:]:
        raise ShapeError(f"upstream {g.shape} does not match level maps {levels.shape[1:]}")
    _, w = attention_filter_forward(levels, query)
    a = np.moveaxis(w, -1, 0)
    ga = np.einsum("lhwc,hwc->lhw", levels, g)
    gs = a * (ga - (a * ga).sum(axis=0, keepdims=True))
    grad_levels = a[..., None] * g[None] + gs[..., None] * query[None]
    grad_query = np.einsum("lhw,lhwc->hwc", gs, levels)
    return grad_levels, grad_query


# --- convolutional pieces -------------------------------------------------


def conv3x3(x: np.ndarray, weight: np.ndarray, bias=None) -> np.ndarray:
    """Zero-padded 3x3 convolution; ``weight`` is ``(3, 3, c_in, c_out)``."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if weight.shape[:2] != (3, 3) or weight.shape[2] != x.shape[2]:
        raise ShapeError(f"weight {weight.shape} incompatible with input channels {x.shape[2]}")
    h, w = x.shape[:2]
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros((h, w, weight.shape[3]))
    for dy in range(3):
        for dx in range(3):
            out += xp[dy : dy + h, dx : dx + w] @ weight[dy, dx]
    if bias is not None:
        out += bias
    return out


def residual_block_forward(x, w1, b1, w2, b2) -> np.ndarray:
    """``x + conv2(relu(conv1(x)))`` with same padding."""
    x = np.asarray(x, dtype=np.float64)
    w2 = np.asarray(w2)
    if w2.shape[3] != x.shape[2]:
        raise ShapeError(f"second conv outputs {w2.shape[3]} channels, input has {x.shape[2]}")
    hidden = np.maximum(conv3x3(x, w1, b1), 0.0)
    return x + conv3x3(hidden, w2, b2)


def pixel_shuffle(x, r: int) -> np.ndarray:
    """``(h, w, c*r*r) -> (h*r, w*r, c)``.

    Input channel ``k*r*r + dy*r + dx`` lands at sub-pixel ``(dy, dx)`` of
    output channel ``k``.
    """
    x = np.asarray(x)
    h, w, c = x.shape
    if r < 1 or c % (r * r):
        raise ShapeError(f"{c} channels not divisible by r^2 = {r * r}")
    co = c // (r * r)
    return x.reshape(h, w, co, r, r).transpose(0, 3, 1, 4, 2).reshape(h * r, w * r, co)


def pixel_unshuffle(x, r: int) -> np.ndarray:
    x = np.asarray(x)
    H, W, co = x.shape
    if r < 1 or H % r or W % r:
        raise ShapeError(f"{H}x{W} not divisible by {r}")
    return x.reshape(H // r, r, W // r, r, co).transpose(0, 2, 4, 1, 3).reshape(H // r, W // r, co * r * r)


def charbonnier(pred, gt, epsilon: float = 1e-3, mode: str = "element") -> float:
    """Charbonnier penalty.

    ``element``: mean of ``sqrt(d^2 + eps^2)``. ``frame``: ``sqrt(||d||^2 + eps^2)``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    d2 = (pred - gt) ** 2
    if mode == "frame":
        return float(np.sqrt(d2.sum() + epsilon**2))
    if mode != "element":
        raise ValueError(f"unknown charbonnier mode {mode!r}")
    # sqrt(d2 + e2) - e rewritten to avoid cancellation; exactly eps at d = 0
    excess = d2 / (np.sqrt(d2 + epsilon**2) + epsilon)
    return float(epsilon + excess.mean())


# --- frame-memory recurrence ----------------------------------------------


class DecoderStepError(RuntimeError):
    pass


def zero_state(prev_state):
    if isinstance(prev_state, np.ndarray):
        return np.zeros_like(prev_state)
    return 0


def frame_memory_step(l_t, k_t, prev_out, prev_state, step) -> tuple:
    """One timestep of the key-frame recurrence.

    Key-frame steps emit ``k_t`` and reset the state; otherwise
    ``step(l_t, prev_out, prev_state)`` supplies ``(out, state)``.
    """
    if k_t is not None:
        return k_t, zero_state(prev_state)
    try:
        return step(l_t, prev_out, prev_state)
    except Exception as exc:
        idx = getattr(l_t, "frame_index", "?")
        raise DecoderStepError(f"decoder failed at timestep {idx}: {exc}") from exc


def run_recurrence(lr_frames, key_frames: dict, step, initial_state=0) -> list:
    outs = []
    prev_out, state = None, initial_state
    for t, l in enumerate(lr_frames):
        prev_out, state = frame_memory_step(l, key_frames.get(t), prev_out, state, step)
        outs.append(prev_out)
    return outs


# --- tensor golden files --------------------------------------------------


def save_tensor(arr, path) -> None:
    """``u32 ndim``, ``u32`` dims, then little-endian float64 data (C order)."""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    Path(path).write_bytes(head + arr.tobytes())


def load_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (ndim,) = struct.unpack_from("<I", data)
    shape = struct.unpack_from(f"<{ndim}I", data, 4)
    off = 4 + 4 * ndim
    return np.frombuffer(data, dtype="<f8", offset=off).reshape(shape).astype(np.float64)


# --- property suite -------------------------------------------------------


def _finite_difference(fn, x, step=1e-5):
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn()
        flat[i] = orig - step
        lo = fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def gradient_check(seed: int, shape=(4, 4, 8), n_levels: int = 4, step: float = 1e-5) -> float:
    """Max relative error of the analytic backward against central differences."""
    rng = np.random.default_rng(seed)
    levels = rng.standard_normal((n_levels, *shape))
    query = rng.standard_normal(shape)
    g = rng.standard_normal(shape)

    def loss():
        return float(np.sum(g * attention_filter_forward(levels, query)[0]))

    gl, gq = attention_filter_backward(levels, query, g)
    nl = _finite_difference(loss, levels, step)
    nq = _finite_difference(loss, query, step)
    num = np.concatenate([nl.ravel(), nq.ravel()])
    ana = np.concatenate([gl.ravel(), gq.ravel()])
    return float(np.max(np.abs(ana - num)) / max(np.max(np.abs(num)), 1e-300))


def kernel_check(seeds: int = 50) -> list:
    """Run the kernel invariants; returns ``[(name, passed, detail)]``."""
    results = []
    rng = np.random.default_rng(20240611)

    levels = rng.standard_normal((4, 6, 5, 8))
    query = rng.standard_normal((6, 5, 8))
    out, w = attention_filter_forward(levels, query)
    dev = float(np.max(np.abs(w.sum(axis=-1) - 1.0)))
    results.append(("attention weights sum to 1", dev <= 1e-12 and bool(np.all(w > 0)), f"max dev {dev:.2e}"))

    o1, w1 = attention_filter_forward(levels[:1], query)
    results.append(("attention L=1 passthrough", bool(np.array_equal(o1, levels[0]) and np.all(w1 == 1.0)), ""))

    perm = [2, 0, 3, 1]
    op, wp = attention_filter_forward(levels[perm], query)
    same = np.array_equal(op, out) and np.array_equal(wp, w[..., perm])
    results.append(("attention level-permutation invariance", bool(same), "exact"))

    worst = max(gradient_check(s) for s in range(seeds))
    results.append(("attention backward vs finite differences", worst <= 1e-4, f"max rel err {worst:.2e}"))

    x = rng.standard_normal((120, 160, 48))
    y = pixel_shuffle(x, 4)
    ok = y.shape == (480, 640, 3) and np.array_equal(pixel_unshuffle(y, 4), x)
    results.append(("pixel shuffle 160x120x48 -> 640x480x3 round trip", bool(ok), str(y.shape)))

    c0 = charbonnier(np.ones(10), np.ones(10))
    results.append(("charbonnier(0) == 1e-3", c0 == 1e-3, repr(c0)))

    z = np.zeros((3, 3, 8, 8))
    xr = rng.standard_normal((7, 9, 8))
    results.append(
        ("residual block with zero weights is identity", bool(np.array_equal(residual_block_forward(xr, z, 0, z, 0), xr)), "")
    )
    return results
