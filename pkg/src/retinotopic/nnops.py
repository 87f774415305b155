"""Neural-network layers with hand-written forward and backward passes.

Everything operates on plain numpy arrays and accepts either a single sample
or a leading batch axis (convs: ``(C, H, W)`` or ``(N, C, H, W)``, dense/rnn:
``(D,)`` or ``(N, D)``).  No autodiff: each ``*_backward`` is the exact
reverse-mode gradient of its forward map, which keeps the whole architecture
differentiable end to end while staying dependency-free.

Convolutions use padding tailored to log-polar rasters: the angle axis (rows)
is periodic, so it gets wrap padding ``(cde|abcde|abc)``; the log-radius axis
(columns) gets edge-inclusive mirror padding ``(cba|abcde|edc)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import TWO_PI, LogPolarPoint

PAD_LOGPOLAR = "wrap_phi_reflect_rho"
PAD_NONE = "none"

# Squared circular-mean norm below which the angular readout direction is
# numerically meaningless; the (sub)gradient is defined as 0 there.
_DEGENERATE_NORM2 = 1e-24


def _as_batch(x: np.ndarray, core_ndim: int) -> tuple[np.ndarray, bool]:
    if x.ndim == core_ndim:
        return x[None], True
    if x.ndim == core_ndim + 1:
        return x, False
    raise ValueError(f"expected {core_ndim}- or {core_ndim + 1}-d array, got shape {x.shape}")


def _unbatch(y: np.ndarray, squeeze: bool) -> np.ndarray:
    return y[0] if squeeze else y


def assert_finite(name: str, arr: np.ndarray) -> None:
    """NaN/Inf tripwire for the optional checked mode."""
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")


# ---------------------------------------------------------------------------
# padding


def _wrap_indices(n: int, p: int) -> np.ndarray:
    return np.arange(-p, n + p) % n

def _mirror_indices(n: int, p: int) -> np.ndarray:
    k = np.arange(-p, n + p) % (2 * n)
    return np.where(k < n, k, 2 * n - 1 - k)


def pad_logpolar(x: np.ndarray, p: int) -> np.ndarray:
    """Pad the last two axes by ``p``: rows periodically, columns mirrored.

    Rows are the angle axis and wrap around (``cde|abcde|abc``); columns are
    the log-radius axis and mirror including the edge element
    (``cba|abcde|edc``).
    """
    h, w = x.shape[-2], x.shape[-1]
    if p >= h or p >= w:
        raise ValueError(f"pad {p} too large for spatial dims ({h}, {w})")
    ri = _wrap_indices(h, p)
    ci = _mirror_indices(w, p)
    return x[..., ri[:, None], ci[None, :]]


def pad_logpolar_backward(grad_padded: np.ndarray, p: int, hw: tuple[int, int]) -> np.ndarray:
    """Fold padded-gradient contributions back onto their source positions."""
    h, w = hw
    ri = _wrap_indices(h, p)
    ci = _mirror_indices(w, p)
    flat_map = (ri[:, None] * w + ci[None, :]).ravel()
    lead_shape = grad_padded.shape[:-2]
    lead = int(np.prod(lead_shape)) if lead_shape else 1
    g = grad_padded.reshape(lead, -1)
    idx = (np.arange(lead)[:, None] * (h * w) + flat_map[None, :]).ravel()
    folded = np.bincount(idx, weights=g.ravel(), minlength=lead * h * w)
    return folded.reshape(*lead_shape, h, w).astype(grad_padded.dtype)


# ---------------------------------------------------------------------------
# convolution


@dataclass
class ConvLayer:
    """3x3 (log-polar padded) or 1x1 (unpadded) convolution parameters."""

    weights: np.ndarray  # (out_ch, in_ch, k, k)
    bias: np.ndarray     # (out_ch,)
    pad_mode: str = PAD_LOGPOLAR

    def __post_init__(self) -> None:
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ValueError(f"conv weights must be (out, in, k, k), got {self.weights.shape}")
        k = self.weights.shape[2]
        if k not in (1, 3):
            raise ValueError(f"kernel must be 1x1 or 3x3, got {k}x{k}")
        if k == 3 and self.pad_mode != PAD_LOGPOLAR:
            raise ValueError("3x3 convolutions require wrap_phi_reflect_rho padding")
        if k == 1 and self.pad_mode != PAD_NONE:
            raise ValueError("1x1 convolutions take no padding")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(f"bias shape {self.bias.shape} does not match out_ch")

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]


def conv2d_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Cross-correlation with bias; 3x3 keeps the spatial size via padding."""
    x4, squeeze = _as_batch(x, 3)
    if x4.shape[1] != layer.weights.shape[1]:
        raise ValueError(
            f"input has {x4.shape[1]} channels, layer expects {layer.weights.shape[1]}"
        )
    if layer.kernel_size == 3:
        xp = pad_logpolar(x4, 1)
        win = sliding_window_view(xp, (3, 3), axis=(2, 3))
        out = np.tensordot(win, layer.weights, axes=([1, 4, 5], [1, 2, 3]))
    else:
        out = np.tensordot(x4, layer.weights[:, :, 0, 0], axes=([1], [1]))
    out = np.ascontiguousarray(np.moveaxis(out, 3, 1))
    out += layer.bias[None, :, None, None]
    return _unbatch(out, squeeze)


def conv2d_backward(x: np.ndarray, layer: ConvLayer, grad_out: np.ndarray):
    """Gradients of :func:`conv2d_forward` w.r.t. input, weights and bias.

    Padding gradients fold back onto their sources: the wrap axis adds
    periodically, the mirror axis adds to the reflected positions.
    """
    x4, squeeze = _as_batch(x, 3)
    g4, _ = _as_batch(grad_out, 3)
    n, _, h, w = x4.shape
    if g4.shape != (n, layer.weights.shape[0], h, w):
        raise ValueError(f"grad_out shape {grad_out.shape} inconsistent with forward output")
    grad_b = g4.sum(axis=(0, 2, 3))
    if layer.kernel_size == 3:
        xp = pad_logpolar(x4, 1)
        win = sliding_window_view(xp, (3, 3), axis=(2, 3))
        grad_w = np.tensordot(g4, win, axes=([0, 2, 3], [0, 2, 3]))
        grad_xp = np.zeros_like(xp)
        t = np.tensordot(g4, layer.weights, axes=([1], [0]))  # (N, H, W, C, 3, 3)
        for di in range(3):
            for dj in range(3):
                grad_xp[:, :, di:di + h, dj:dj + w] += np.moveaxis(t[..., di, dj], 3, 1)
        grad_x = pad_logpolar_backward(grad_xp, 1, (h, w))
    else:
        grad_w = np.tensordot(g4, x4, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
        grad_x = np.ascontiguousarray(
            np.moveaxis(np.tensordot(g4, layer.weights[:, :, 0, 0], axes=([1], [0])), 3, 1)
        )
    return _unbatch(grad_x, squeeze), grad_w, grad_b


# ---------------------------------------------------------------------------
# pooling


def maxpool2x2_forward(x: np.ndarray):
    """Max over disjoint 2x2 blocks.  Returns (output, argmax).

    ``argmax`` holds the winning position within each block in row-major
    order (0..3); ties go to the first position scanned.  The pairwise
    comparisons below reproduce exactly that tie-break: strict ``>`` keeps
    the earlier candidate on equality, and the cross-pair pick favours the
    first pair, whose indices are always smaller.
    """
    x4, squeeze = _as_batch(x, 3)
    n, c, h, w = x4.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 needs even spatial dims, got ({h}, {w})")
    b = x4.reshape(n, c, h // 2, 2, w // 2, 2)
    tl, tr = b[:, :, :, 0, :, 0], b[:, :, :, 0, :, 1]
    bl, br = b[:, :, :, 1, :, 0], b[:, :, :, 1, :, 1]
    m1 = np.maximum(tl, tr)
    m2 = np.maximum(bl, br)
    out = np.maximum(m1, m2)
    i1 = (tr > tl).astype(np.int8)
    i2 = (br > bl).astype(np.int8) + np.int8(2)
    amax = np.where(m2 > m1, i2, i1)
    return _unbatch(out, squeeze), _unbatch(amax, squeeze)


def maxpool2x2_backward(argmax: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Route each block's gradient to the recorded argmax position."""
    g4, squeeze = _as_batch(grad_out, 3)
    a4, _ = _as_batch(argmax, 3)
    n, c, h2, w2 = g4.shape
    gx = np.zeros((n, c, h2, 2, w2, 2), dtype=g4.dtype)
    zero = g4.dtype.type(0)
    for k, (i, j) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        gx[:, :, :, i, :, j] = np.where(a4 == k, g4, zero)
    return _unbatch(gx.reshape(n, c, h2 * 2, w2 * 2), squeeze)


def global_avgpool_forward(x: np.ndarray) -> np.ndarray:
    """Spatial mean per channel: (..., C, H, W) -> (..., C)."""
    x4, squeeze = _as_batch(x, 3)
    return _unbatch(x4.mean(axis=(2, 3)), squeeze)


def global_avgpool_backward(grad_out: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    h, w = hw
    g, squeeze = _as_batch(grad_out, 1)
    gx = np.broadcast_to((g / (h * w))[:, :, None, None], g.shape + (h, w))
    return _unbatch(np.ascontiguousarray(gx), squeeze)


# ---------------------------------------------------------------------------
# dense / activations / loss


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w.T + b


def dense_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray):
    if x.ndim == 1:
        return grad_out @ w, np.outer(grad_out, x), grad_out.copy()
    return grad_out @ w, grad_out.T @ x, grad_out.sum(axis=0)


def tanh_forward(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient through tanh given its *output* ``y``."""
    return grad_out * (1.0 - y * y)


def softmax_forward(logits: np.ndarray) -> np.ndarray:
    """Row-stabilised softmax over the last axis."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, label):
    """Negative log-likelihood plus its gradient w.r.t. the pre-softmax logits.

    For a single distribution returns ``(loss, grad)`` with
    ``grad = probs - one_hot(label)``; batched inputs give per-sample losses
    of shape (N,) and grads (N, K).  Zero probability at the label yields an
    infinite loss, which the training loop treats as a divergence signal.
    """
    if probs.ndim == 1:
        with np.errstate(divide="ignore"):
            loss = -float(np.log(probs[label]))
        grad = probs.copy()
        grad[label] -= 1.0
        return loss, grad
    labels = np.asarray(label)
    with np.errstate(divide="ignore"):
        losses = -np.log(probs[np.arange(probs.shape[0]), labels])
    grad = probs.copy()
    grad[np.arange(probs.shape[0]), labels] -= 1.0
    return losses, grad


# ---------------------------------------------------------------------------
# spatial softmax readout


def spatial_softmax_readout_batch(fmaps: np.ndarray, coord_grid: np.ndarray, phi_mode: str = "circular"):
    """Soft-argmax of single-channel maps against a (phi, rho) grid.

    Softmax over all cells, then the expectation of the grid coordinates:
    rho linearly, phi as a circular mean (``atan2(E sin, E cos)``) by
    default, or a literal linear average with ``phi_mode="linear"``.
    Returns ``(phi, rho)`` arrays of shape (N,).
    """
    if fmaps.ndim != 4 or fmaps.shape[1] != 1:
        raise ValueError(f"expected (N, 1, h, w) feature maps, got {fmaps.shape}")
    n = fmaps.shape[0]
    dtype = fmaps.dtype
    p = softmax_forward(fmaps.reshape(n, -1))
    rho_f = coord_grid[..., 1].ravel().astype(dtype)
    rho_out = p @ rho_f
    phi_f = coord_grid[..., 0].ravel().astype(dtype)
    if phi_mode == "circular":
        s = p @ np.sin(phi_f)
        c = p @ np.cos(phi_f)
        phi_out = np.arctan2(s, c) % TWO_PI
        phi_out[phi_out >= TWO_PI] = 0.0
    elif phi_mode == "linear":
        phi_out = p @ phi_f
    else:
        raise ValueError(f"unknown phi_mode {phi_mode!r}")
    return phi_out, rho_out


def spatial_softmax_backward_batch(
    fmaps: np.ndarray,
    coord_grid: np.ndarray,
    grad_phi: np.ndarray,
    grad_rho: np.ndarray,
    phi_mode: str = "circular",
) -> np.ndarray:
    """Exact gradient of the readout w.r.t. the feature-map logits."""
    n = fmaps.shape[0]
    dtype = fmaps.dtype
    p = softmax_forward(fmaps.reshape(n, -1))
    rho_f = coord_grid[..., 1].ravel().astype(dtype)
    phi_f = coord_grid[..., 0].ravel().astype(dtype)
    rho_out = p @ rho_f
    g = grad_rho[:, None] * p * (rho_f[None, :] - rho_out[:, None])
    if phi_mode == "circular":
        sin_f = np.sin(phi_f)
        cos_f = np.cos(phi_f)
        s = p @ sin_f
        c = p @ cos_f
        norm2 = s * s + c * c
        safe = norm2 > _DEGENERATE_NORM2
        scale = np.where(safe, grad_phi / np.where(safe, norm2, 1.0), 0.0)
        g += scale[:, None] * p * (c[:, None] * sin_f[None, :] - s[:, None] * cos_f[None, :])
    elif phi_mode == "linear":
        phi_out = p @ phi_f
        g += grad_phi[:, None] * p * (phi_f[None, :] - phi_out[:, None])
    else:
        raise ValueError(f"unknown phi_mode {phi_mode!r}")
    return g.reshape(fmaps.shape).astype(dtype, copy=False)


def spatial_softmax_readout(fmap: np.ndarray, coord_grid: np.ndarray, phi_mode: str = "circular") -> LogPolarPoint:
    """Single-map readout returning a log-polar point."""
    phi, rho = spatial_softmax_readout_batch(fmap[None], coord_grid, phi_mode)
    return LogPolarPoint(float(phi[0]), float(rho[0]))


def spatial_softmax_backward(
    fmap: np.ndarray, coord_grid: np.ndarray, grad_point, phi_mode: str = "circular"
) -> np.ndarray:
    g_phi = np.array([grad_point[0]], dtype=fmap.dtype)
    g_rho = np.array([grad_point[1]], dtype=fmap.dtype)
    return spatial_softmax_backward_batch(fmap[None], coord_grid, g_phi, g_rho, phi_mode)[0]


# ---------------------------------------------------------------------------
# recurrent cell


@dataclass
class RnnCell:
    """Vanilla tanh recurrence: ``h' = tanh(W_h h + W_x x + b)``."""

    w_x: np.ndarray  # (hidden, in)
    w_h: np.ndarray  # (hidden, hidden)
    bias: np.ndarray  # (hidden,)


def rnn_step_forward(cell: RnnCell, h_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.tanh(x @ cell.w_x.T + h_prev @ cell.w_h.T + cell.bias)


def rnn_step_backward(cell: RnnCell, h_prev: np.ndarray, x: np.ndarray, h_next: np.ndarray, grad_h_next: np.ndarray):
    """Returns (grad_h_prev, grad_x, grad_w_x, grad_w_h, grad_bias)."""
    dz = grad_h_next * (1.0 - h_next * h_next)
    if dz.ndim == 1:
        return dz @ cell.w_h, dz @ cell.w_x, np.outer(dz, x), np.outer(dz, h_prev), dz.copy()
    return dz @ cell.w_h, dz @ cell.w_x, dz.T @ x, dz.T @ h_prev, dz.sum(axis=0)


# ---------------------------------------------------------------------------
# parameter initialisation


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_conv_layer(rng: np.random.Generator, out_ch: int, in_ch: int, ksize: int, dtype=np.float32) -> ConvLayer:
    fan = ksize * ksize
    w = glorot_uniform(rng, (out_ch, in_ch, ksize, ksize), in_ch * fan, out_ch * fan, dtype)
    pad = PAD_LOGPOLAR if ksize == 3 else PAD_NONE
    return ConvLayer(w, np.zeros(out_ch, dtype=dtype), pad)


def init_dense(rng: np.random.Generator, out_dim: int, in_dim: int, dtype=np.float32):
    return glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim, dtype), np.zeros(out_dim, dtype=dtype)


def init_rnn_cell(rng: np.random.Generator, hidden: int, in_dim: int, dtype=np.float32) -> RnnCell:
    w_x = glorot_uniform(rng, (hidden, in_dim), in_dim, hidden, dtype)
    limit = 1.0 / math.sqrt(hidden)
    w_h = rng.uniform(-limit, limit, size=(hidden, hidden)).astype(dtype)
    return RnnCell(w_x, w_h, np.zeros(hidden, dtype=dtype))
