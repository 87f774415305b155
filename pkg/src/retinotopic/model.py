"""Saccadic glimpse classifier assembled from the hand-differentiated layers.

The network looks at an image through log-polar patches.  Each glimpse runs a
small CNN backbone; a classifier head reads the pooled features, and a
localisation head (1x1 convs + spatial softmax over a log-polar coordinate
grid) proposes where to look next.  Two training-time drivers exist:

* greedy: localise from a random fixation, then classify one glimpse at the
  proposed center; the classification gradient reaches the localiser through
  the sampler's center gradient.
* aggregate: unroll several saccades, feeding each glimpse's 96-unit code
  into a vanilla RNN; classify from the final hidden state with full
  backpropagation through time, samplers included.

Batched kernels (leading N axis) do the heavy lifting; thin single-image
wrappers provide the documented call surface.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .geometry import TWO_PI, CartesianPoint, GridSpec
from .nnops import (
    ConvLayer,
    RnnCell,
    _as_batch,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    global_avgpool_backward,
    global_avgpool_forward,
    init_conv_layer,
    init_dense,
    init_rnn_cell,
    maxpool2x2_backward,
    maxpool2x2_forward,
    rnn_step_backward,
    rnn_step_forward,
    softmax_forward,
    spatial_softmax_backward_batch,
    spatial_softmax_readout_batch,
    tanh_backward,
    tanh_forward,
)
from .sampler import warp_batch, warp_batch_backward

_POOL_FACTOR = 4  # two 2x2 pools between patch and the localiser tap


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes.  Defaults are the reference configuration."""

    in_channels: int = 1
    num_classes: int = 10
    conv_channels: tuple[int, int, int] = (32, 64, 128)
    fc_dims: tuple[int, int] = (128, 96)
    loc_hidden: int = 64
    rnn_hidden: int = 96

    def __post_init__(self) -> None:
        sizes = (self.in_channels, self.num_classes, *self.conv_channels,
                 *self.fc_dims, self.loc_hidden, self.rnn_hidden)
        if len(self.conv_channels) != 3 or len(self.fc_dims) != 2:
            raise ValueError("need 3 conv widths and 2 dense widths")
        if any(s < 1 for s in sizes):
            raise ValueError("all layer sizes must be positive")


@dataclass
class ModelParams:
    """Every learnable tensor of the network."""

    conv1: ConvLayer
    conv2: ConvLayer
    conv3: ConvLayer
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray
    fc3_w: np.ndarray
    fc3_b: np.ndarray
    loc1: ConvLayer
    loc2: ConvLayer
    rnn: RnnCell
    out_w: np.ndarray
    out_b: np.ndarray

    @property
    def dtype(self) -> np.dtype:
        return self.conv1.weights.dtype

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Flat name -> tensor view, the checkpoint and optimizer currency."""
        return {
            "conv1.weights": self.conv1.weights, "conv1.bias": self.conv1.bias,
            "conv2.weights": self.conv2.weights, "conv2.bias": self.conv2.bias,
            "conv3.weights": self.conv3.weights, "conv3.bias": self.conv3.bias,
            "fc1.weights": self.fc1_w, "fc1.bias": self.fc1_b,
            "fc2.weights": self.fc2_w, "fc2.bias": self.fc2_b,
            "fc3.weights": self.fc3_w, "fc3.bias": self.fc3_b,
            "loc1.weights": self.loc1.weights, "loc1.bias": self.loc1.bias,
            "loc2.weights": self.loc2.weights, "loc2.bias": self.loc2.bias,
            "rnn.w_x": self.rnn.w_x, "rnn.w_h": self.rnn.w_h, "rnn.bias": self.rnn.bias,
            "out.weights": self.out_w, "out.bias": self.out_b,
        }


PARAM_NAMES = (
    "conv1.weights", "conv1.bias", "conv2.weights", "conv2.bias",
    "conv3.weights", "conv3.bias", "fc1.weights", "fc1.bias",
    "fc2.weights", "fc2.bias", "fc3.weights", "fc3.bias",
    "loc1.weights", "loc1.bias", "loc2.weights", "loc2.bias",
    "rnn.w_x", "rnn.w_h", "rnn.bias", "out.weights", "out.bias",
)


def init_params(rng: np.random.Generator, config: ModelConfig = ModelConfig(), dtype=np.float32) -> ModelParams:
    c1, c2, c3 = config.conv_channels
    d1, d2 = config.fc_dims
    return ModelParams(
        conv1=init_conv_layer(rng, c1, config.in_channels, 3, dtype),
        conv2=init_conv_layer(rng, c2, c1, 3, dtype),
        conv3=init_conv_layer(rng, c3, c2, 3, dtype),
        fc1_w=init_dense(rng, d1, c3, dtype)[0], fc1_b=np.zeros(d1, dtype=dtype),
        fc2_w=init_dense(rng, d2, d1, dtype)[0], fc2_b=np.zeros(d2, dtype=dtype),
        fc3_w=init_dense(rng, config.num_classes, d2, dtype)[0],
        fc3_b=np.zeros(config.num_classes, dtype=dtype),
        loc1=init_conv_layer(rng, config.loc_hidden, c2, 1, dtype),
        loc2=init_conv_layer(rng, 1, config.loc_hidden, 1, dtype),
        rnn=init_rnn_cell(rng, config.rnn_hidden, d2, dtype),
        out_w=init_dense(rng, config.num_classes, config.rnn_hidden, dtype)[0],
        out_b=np.zeros(config.num_classes, dtype=dtype),
    )


def from_named_arrays(arrays: dict[str, np.ndarray]) -> ModelParams:
    """Rebuild params from a checkpoint dict; shapes carry the architecture."""
    missing = [n for n in PARAM_NAMES if n not in arrays]
    if missing:
        raise ValueError(f"missing parameters: {', '.join(missing)}")

    def conv(prefix: str) -> ConvLayer:
        return ConvLayer(
            arrays[f"{prefix}.weights"], arrays[f"{prefix}.bias"],
            "wrap_phi_reflect_rho" if arrays[f"{prefix}.weights"].shape[2] == 3 else "none",
        )

    return ModelParams(
        conv1=conv("conv1"), conv2=conv("conv2"), conv3=conv("conv3"),
        fc1_w=arrays["fc1.weights"], fc1_b=arrays["fc1.bias"],
        fc2_w=arrays["fc2.weights"], fc2_b=arrays["fc2.bias"],
        fc3_w=arrays["fc3.weights"], fc3_b=arrays["fc3.bias"],
        loc1=conv("loc1"), loc2=conv("loc2"),
        rnn=RnnCell(arrays["rnn.w_x"], arrays["rnn.w_h"], arrays["rnn.bias"]),
        out_w=arrays["out.weights"], out_b=arrays["out.bias"],
    )


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.named_arrays().items()}


def _acc(grads: dict[str, np.ndarray] | None, name: str, g: np.ndarray) -> None:
    if grads is not None:
        grads[name] += g


# ---------------------------------------------------------------------------
# backbone


def _check_patch_dims(h: int, w: int) -> None:
    if h != w or h % 8:
        raise ValueError(f"patch must be square with side divisible by 8, got ({h}, {w})")


def _tap_forward(x: np.ndarray, params: ModelParams):
    """Blocks 1-2 (conv+tanh+pool twice): enough to drive the localiser."""
    t1 = tanh_forward(conv2d_forward(x, params.conv1))
    p1, am1 = maxpool2x2_forward(t1)
    t2 = tanh_forward(conv2d_forward(p1, params.conv2))
    p2, am2 = maxpool2x2_forward(t2)
    return p2, {"x": x, "t1": t1, "am1": am1, "p1": p1, "t2": t2, "am2": am2, "p2": p2}


def _tap_backward(cache, params: ModelParams, grad_p2: np.ndarray, grads) -> np.ndarray:
    g = maxpool2x2_backward(cache["am2"], grad_p2)
    g = tanh_backward(cache["t2"], g)
    g, gw, gb = conv2d_backward(cache["p1"], params.conv2, g)
    _acc(grads, "conv2.weights", gw)
    _acc(grads, "conv2.bias", gb)
    g = maxpool2x2_backward(cache["am1"], g)
    g = tanh_backward(cache["t1"], g)
    g, gw, gb = conv2d_backward(cache["x"], params.conv1, g)
    _acc(grads, "conv1.weights", gw)
    _acc(grads, "conv1.bias", gb)
    return g


def _backbone_forward(x: np.ndarray, params: ModelParams):
    """Full backbone.  Returns (features, tap, cache)."""
    _check_patch_dims(x.shape[-2], x.shape[-1])
    tap, cache = _tap_forward(x, params)
    t3 = tanh_forward(conv2d_forward(tap, params.conv3))
    p3, am3 = maxpool2x2_forward(t3)
    feats = global_avgpool_forward(p3)
    cache.update(t3=t3, am3=am3)
    return feats, tap, cache


def _backbone_backward(cache, params: ModelParams, grad_feats, grad_tap, grads) -> np.ndarray:
    am3 = cache["am3"]
    g = global_avgpool_backward(grad_feats, (am3.shape[-2], am3.shape[-1]))
    g = maxpool2x2_backward(am3, g)
    g = tanh_backward(cache["t3"], g)
    g, gw, gb = conv2d_backward(cache["p2"], params.conv3, g)
    _acc(grads, "conv3.weights", gw)
    _acc(grads, "conv3.bias", gb)
    if grad_tap is not None:
        g = g + grad_tap
    return _tap_backward(cache, params, g, grads)


def backbone_forward(patch: np.ndarray, params: ModelParams):
    """(C, s, s) or (N, C, s, s) patch -> (pooled features, localiser tap)."""
    x4, squeeze = _as_batch(patch, 3)
    feats, tap, _ = _backbone_forward(x4, params)
    if squeeze:
        return feats[0], tap[0]
    return feats, tap


# ---------------------------------------------------------------------------
# classifier head


def _classify_forward(features: np.ndarray, params: ModelParams):
    a1 = tanh_forward(dense_forward(features, params.fc1_w, params.fc1_b))
    a2 = tanh_forward(dense_forward(a1, params.fc2_w, params.fc2_b))
    probs = softmax_forward(dense_forward(a2, params.fc3_w, params.fc3_b))
    return a2, probs, {"features": features, "a1": a1, "a2": a2}


def _classify_backward(cache, params: ModelParams, grad_logits, grad_hidden, grads) -> np.ndarray:
    """grad_logits is w.r.t. the pre-softmax output; grad_hidden w.r.t. the
    exported 96-unit code.  Either may be None (absent path)."""
    a1, a2 = cache["a1"], cache["a2"]
    if grad_logits is None:
        ga2 = grad_hidden
    else:
        gx, gw, gb = dense_backward(a2, params.fc3_w, grad_logits)
        _acc(grads, "fc3.weights", gw)
        _acc(grads, "fc3.bias", gb)
        ga2 = gx if grad_hidden is None else gx + grad_hidden
    g = tanh_backward(a2, ga2)
    g, gw, gb = dense_backward(a1, params.fc2_w, g)
    _acc(grads, "fc2.weights", gw)
    _acc(grads, "fc2.bias", gb)
    g = tanh_backward(a1, g)
    g, gw, gb = dense_backward(cache["features"], params.fc1_w, g)
    _acc(grads, "fc1.weights", gw)
    _acc(grads, "fc1.bias", gb)
    return g


def classify(features: np.ndarray, params: ModelParams):
    """Features -> (96-unit code for the RNN, class probabilities)."""
    h96, probs, _ = _classify_forward(features, params)
    return h96, probs


# ---------------------------------------------------------------------------
# localisation head


@lru_cache(maxsize=16)
def tap_coord_grid(spec: GridSpec, pool: int = _POOL_FACTOR) -> np.ndarray:
    """(phi, rho) of each tap cell's receptive-field center, shape (h, w, 2).

    Tap cell (i, j) covers patch cells [pool*i, pool*i+pool); its center sits
    at fractional patch row pool*i + (pool-1)/2, likewise for columns.
    """
    if spec.h_prime % pool or spec.w_prime % pool:
        raise ValueError(f"grid {spec.h_prime}x{spec.w_prime} not divisible by pool {pool}")
    rows = pool * np.arange(spec.h_prime // pool) + (pool - 1) / 2.0
    cols = pool * np.arange(spec.w_prime // pool) + (pool - 1) / 2.0
    phi = rows * (TWO_PI / spec.h_prime)
    log_rmin, log_rmax = math.log(spec.r_min), math.log(spec.r_max)
    rho = log_rmin + cols * ((log_rmax - log_rmin) / (spec.w_prime - 1))
    grid = np.stack(np.broadcast_arrays(phi[:, None], rho[None, :]), axis=-1).copy()
    grid.setflags(write=False)
    return grid


def _locnet_forward(taps: np.ndarray, params: ModelParams):
    a1 = tanh_forward(conv2d_forward(taps, params.loc1))
    l2 = conv2d_forward(a1, params.loc2)
    return l2, {"taps": taps, "a1": a1, "l2": l2}


def localise_forward_batch(taps, spec: GridSpec, centers, params: ModelParams,
                           img_hw: tuple[int, int], phi_mode: str = "circular"):
    """Propose next fixation centers.  Returns (centers (N,2) float64, cache).

    The spatial-softmax readout gives a log-polar displacement about the
    current center; conversion back to pixels and clamping to the image keep
    saccades on-canvas.  Clamped components get zero gradient.
    """
    l2, cache = _locnet_forward(taps, params)
    grid = tap_coord_grid(spec)
    phi, rho = spatial_softmax_readout_batch(l2, grid, phi_mode)
    r = np.exp(rho.astype(np.float64))
    raw = np.asarray(centers, dtype=np.float64) + np.stack(
        [r * np.cos(phi.astype(np.float64)), r * np.sin(phi.astype(np.float64))], axis=1
    )
    h, w = img_hw
    clamped = np.clip(raw, 0.0, [w - 1.0, h - 1.0])
    cache.update(phi=phi, rho=rho, pass_mask=(raw == clamped))
    return clamped, cache


def localise_backward_batch(cache, spec: GridSpec, params: ModelParams,
                            grad_next, grads, phi_mode: str = "circular"):
    """Returns (grad_taps, grad_current_centers)."""
    g = np.asarray(grad_next, dtype=np.float64) * cache["pass_mask"]
    phi = cache["phi"].astype(np.float64)
    r = np.exp(cache["rho"].astype(np.float64))
    dx, dy = r * np.cos(phi), r * np.sin(phi)
    gx, gy = g[:, 0], g[:, 1]
    g_rho = gx * dx + gy * dy
    g_phi = -gx * dy + gy * dx
    dtype = cache["l2"].dtype
    grad_l2 = spatial_softmax_backward_batch(
        cache["l2"], tap_coord_grid(spec), g_phi.astype(dtype), g_rho.astype(dtype), phi_mode
    )
    ga1, gw, gb = conv2d_backward(cache["a1"], params.loc2, grad_l2)
    _acc(grads, "loc2.weights", gw)
    _acc(grads, "loc2.bias", gb)
    ga1 = tanh_backward(cache["a1"], ga1)
    gtaps, gw, gb = conv2d_backward(cache["taps"], params.loc1, ga1)
    _acc(grads, "loc1.weights", gw)
    _acc(grads, "loc1.bias", gb)
    return gtaps, g


def localise(tap: np.ndarray, spec: GridSpec, current_center, params: ModelParams,
             img_hw: tuple[int, int] | None = None, phi_mode: str = "circular") -> CartesianPoint:
    """Single-sample next-fixation proposal.  Without ``img_hw``, no clamp."""
    bounds = img_hw if img_hw is not None else (2**31, 2**31)
    c = np.array([[current_center[0], current_center[1]]], dtype=np.float64)
    nxt, _ = localise_forward_batch(tap[None], spec, c, params, bounds, phi_mode)
    return CartesianPoint(float(nxt[0, 0]), float(nxt[0, 1]))


# ---------------------------------------------------------------------------
# task drivers (batched)


def greedy_forward_batch(imgs, centers0, params: ModelParams, spec: GridSpec,
                         phi_mode: str = "circular"):
    """Localise from a glimpse at centers0, then classify at the proposal.

    Returns (probs (N, K), cache).  The cache holds everything the backward
    pass needs, including the per-step center list (init, proposed, and the
    follow-up proposal the classification glimpse would make).
    """
    dtype = params.dtype
    img_hw = imgs.shape[-2], imgs.shape[-1]
    p0 = warp_batch(imgs, centers0, spec).astype(dtype)
    tap0, tap_cache = _tap_forward(p0, params)
    c1, loc_cache = localise_forward_batch(tap0, spec, centers0, params, img_hw, phi_mode)
    p1 = warp_batch(imgs, c1, spec).astype(dtype)
    feats, tap1, bb_cache = _backbone_forward(p1, params)
    _, probs, cls_cache = _classify_forward(feats, params)
    c2, _ = localise_forward_batch(tap1, spec, c1, params, img_hw, phi_mode)
    cache = {
        "tap": tap_cache, "loc": loc_cache, "bb": bb_cache, "cls": cls_cache,
        "c1": c1, "centers": [np.asarray(centers0, dtype=np.float64), c1, c2],
        "patches": (p0, p1),
    }
    return probs, cache


def greedy_backward_batch(cache, imgs, params: ModelParams, spec: GridSpec,
                          grad_logits, grads, phi_mode: str = "circular") -> None:
    """Backprop the greedy classification loss into ``grads`` (accumulating)."""
    gfeats = _classify_backward(cache["cls"], params, grad_logits, None, grads)
    gp1 = _backbone_backward(cache["bb"], params, gfeats, None, grads)
    _, gc1 = warp_batch_backward(imgs, cache["c1"], spec, gp1, need_grad_img=False)
    gtap0, _ = localise_backward_batch(cache["loc"], spec, params, gc1, grads, phi_mode)
    _tap_backward(cache["tap"], params, gtap0, grads)


def aggregate_forward_batch(imgs, centers0, params: ModelParams, spec: GridSpec,
                            s_steps: int = 4, phi_mode: str = "circular"):
    """Unroll ``s_steps`` saccades with RNN feature accumulation.

    Returns (step_probs, centers, cache): per-step class probabilities read
    from the recurrent state (the last entry is the final prediction) and
    the fixation centers, length s_steps + 1 including the initial one.
    """
    if s_steps < 1:
        raise ValueError(f"need at least one saccade, got {s_steps}")
    n = imgs.shape[0]
    dtype = params.dtype
    img_hw = imgs.shape[-2], imgs.shape[-1]
    h = np.zeros((n, params.rnn.bias.shape[0]), dtype=dtype)
    c = np.asarray(centers0, dtype=np.float64)
    centers = [c]
    steps = []
    step_probs = []
    for _ in range(s_steps):
        p = warp_batch(imgs, c, spec).astype(dtype)
        feats, tap, bb_cache = _backbone_forward(p, params)
        h96, _, cls_cache = _classify_forward(feats, params)
        h_next = rnn_step_forward(params.rnn, h, h96)
        c_next, loc_cache = localise_forward_batch(tap, spec, c, params, img_hw, phi_mode)
        step_probs.append(softmax_forward(dense_forward(h_next, params.out_w, params.out_b)))
        steps.append({
            "bb": bb_cache, "cls": cls_cache, "loc": loc_cache,
            "h_prev": h, "h96": h96, "h_next": h_next, "center": c, "patch": p,
        })
        centers.append(c_next)
        h, c = h_next, c_next
    cache = {"steps": steps, "centers": centers, "h_final": h}
    return step_probs, centers, cache


def aggregate_backward_batch(cache, imgs, params: ModelParams, spec: GridSpec,
                             grad_final_logits, grads, phi_mode: str = "circular") -> None:
    """Full BPTT of the final-step loss, samplers included."""
    steps = cache["steps"]
    gh, gw, gb = dense_backward(cache["h_final"], params.out_w, grad_final_logits)
    _acc(grads, "out.weights", gw)
    _acc(grads, "out.bias", gb)
    gc = np.zeros_like(cache["centers"][-1])
    for t in reversed(range(len(steps))):
        st = steps[t]
        if gc.any():
            gtap, gc_pole = localise_backward_batch(st["loc"], spec, params, gc, grads, phi_mode)
        else:
            gtap, gc_pole = None, gc
        gh_prev, gx96, gwx, gwh, gbr = rnn_step_backward(
            params.rnn, st["h_prev"], st["h96"], st["h_next"], gh
        )
        _acc(grads, "rnn.w_x", gwx)
        _acc(grads, "rnn.w_h", gwh)
        _acc(grads, "rnn.bias", gbr)
        gfeats = _classify_backward(st["cls"], params, None, gx96, grads)
        gpatch = _backbone_backward(st["bb"], params, gfeats, gtap, grads)
        if t > 0:
            _, gwc = warp_batch_backward(imgs, st["center"], spec, gpatch, need_grad_img=False)
            gc = gc_pole + gwc
        gh = gh_prev


# ---------------------------------------------------------------------------
# single-image surface


@dataclass
class SaccadeTrace:
    """Where the model looked and what it believed at each step."""

    centers: list[CartesianPoint]
    class_probs: list[np.ndarray]
    patches: list[np.ndarray] | None = None

    def __post_init__(self) -> None:
        if not self.centers:
            raise ValueError("trace needs at least the initial center")


def _centers_to_points(centers) -> list[CartesianPoint]:
    return [CartesianPoint(float(c[0, 0]), float(c[0, 1])) for c in centers]


def forward_greedy(img: np.ndarray, init_center, params: ModelParams, spec: GridSpec,
                   phi_mode: str = "circular", keep_patches: bool = False):
    """Two-iteration pass on one image: localise, then classify there."""
    c0 = np.array([[init_center[0], init_center[1]]], dtype=np.float64)
    probs, cache = greedy_forward_batch(img[None], c0, params, spec, phi_mode)
    patches = [p[0] for p in cache["patches"]] if keep_patches else None
    trace = SaccadeTrace(_centers_to_points(cache["centers"]), [probs[0]], patches)
    return probs[0], trace


def forward_aggregate(img: np.ndarray, init_center, params: ModelParams, spec: GridSpec,
                      s_steps: int = 4, phi_mode: str = "circular", keep_patches: bool = False):
    """Multi-saccade pass on one image; prediction comes from the last step."""
    c0 = np.array([[init_center[0], init_center[1]]], dtype=np.float64)
    step_probs, centers, cache = aggregate_forward_batch(
        img[None], c0, params, spec, s_steps, phi_mode
    )
    patches = [st["patch"][0] for st in cache["steps"]] if keep_patches else None
    trace = SaccadeTrace(_centers_to_points(centers), [p[0] for p in step_probs], patches)
    return step_probs[-1][0], trace


# ---------------------------------------------------------------------------
# checkpoints


_MAGIC = b"RTNT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Raised on malformed checkpoint files."""


def save_checkpoint(path, arrays: dict[str, np.ndarray], version: int = CHECKPOINT_VERSION) -> None:
    """Write named float32 tensors: magic, version, count, then records of
    {name length + UTF-8 name, rank + dims, little-endian float32 data}."""
    chunks = [_MAGIC, struct.pack("<II", version, len(arrays))]
    for name, arr in arrays.items():
        blob = name.encode("utf-8")
        a = np.ascontiguousarray(np.asarray(arr), dtype="<f4")
        chunks.append(struct.pack("<I", len(blob)))
        chunks.append(blob)
        chunks.append(struct.pack("<I", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(a.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated at byte {pos} (wanted {n} more)")
        pos += n
        return data[pos - n:pos]

    if take(4) != _MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an RTNT checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"{path}: undecodable record name") from e
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        numel = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(4 * numel), dtype="<f4").reshape(shape).copy()
        if name in arrays:
            raise CheckpointError(f"{path}: duplicate record {name!r}")
        arrays[name] = arr
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return arrays
