"""Central-difference verification of every hand-written gradient.

All checks run in float64.  Per-op checks must land under 1e-4 relative
error; the end-to-end checks (gradients routed through the bilinear sampler,
whose kinks add noise to finite differences) get a 1e-3 budget.  Test
problems are seeded and built to stay away from the non-smooth points:
no integer sample coordinates, no pooling ties, no angular-readout seams.
"""

from __future__ import annotations

import numpy as np

from . import model as M
from . import nnops as O
from .geometry import GridSpec
from .nnops import ConvLayer, RnnCell
from .sampler import SamplerParams, warp, warp_backward

PER_OP_TOL = 1e-4
END_TO_END_TOL = 1e-3
_H = 1e-5


def rel_error(analytic, numeric) -> float:
    """max |a - n| normalised by the largest magnitude in either vector."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = max(np.abs(a).max(), np.abs(n).max(), 1e-12)
    return float(np.abs(a - n).max() / denom)


def numeric_grad(f, x: np.ndarray, h: float = _H) -> np.ndarray:
    """Central differences of scalar-valued ``f`` at every element of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
        it.iternext()
    return g


def numeric_grad_at(f, x: np.ndarray, indices, h: float = _H) -> np.ndarray:
    """Central differences at selected flat indices only."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.zeros(len(indices))
    for k, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        out[k] = (fp - fm) / (2.0 * h)
    return out


def gaussian_blobs(rng: np.random.Generator, h: int, w: int, channels: int = 1,
                   n_blobs: int = 4) -> np.ndarray:
    """Smooth synthetic image in [0, 1]: a sum of random Gaussian bumps."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((channels, h, w))
    for c in range(channels):
        for _ in range(n_blobs):
            cx = rng.uniform(0.2 * w, 0.8 * w)
            cy = rng.uniform(0.2 * h, 0.8 * h)
            sig = rng.uniform(0.08, 0.25) * min(h, w)
            amp = rng.uniform(0.4, 1.0)
            img[c] += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sig * sig))
    peak = img.max()
    return img / peak if peak > 0 else img


def _offgrid_center(rng: np.random.Generator, h: int, w: int) -> tuple[float, float]:
    # Irrational-ish offsets keep the sample lattice away from integer
    # coordinates, where the bilinear kernel kinks and differences lie.
    return (
        w / 2 + rng.uniform(-0.2 * w, 0.2 * w) + 0.31830988,
        h / 2 + rng.uniform(-0.2 * h, 0.2 * h) + 0.27182818,
    )


# ---------------------------------------------------------------------------
# individual checks; each returns its worst relative error


def check_sampler_center(rng: np.random.Generator, trials: int = 20) -> float:
    worst = 0.0
    for _ in range(trials):
        img = gaussian_blobs(rng, 16, 16)
        spec = GridSpec(8, 8, 1.0, 10.0)
        cx, cy = _offgrid_center(rng, 16, 16)
        params = SamplerParams((cx, cy), spec)
        r = rng.standard_normal((1, 8, 8))
        _, (gx, gy) = warp_backward(img, params, r)

        def loss(c, i=img, s=spec, rr=r):
            return float(np.sum(warp(i, SamplerParams((c[0], c[1]), s)) * rr))

        fd = numeric_grad(loss, np.array([cx, cy]))
        worst = max(worst, rel_error([gx, gy], fd))
    return worst


def check_sampler_image(rng: np.random.Generator, trials: int = 5, pixels: int = 20) -> float:
    worst = 0.0
    for _ in range(trials):
        img = gaussian_blobs(rng, 16, 16)
        spec = GridSpec(8, 8, 1.0, 10.0)
        params = SamplerParams(_offgrid_center(rng, 16, 16), spec)
        r = rng.standard_normal((1, 8, 8))
        grad_img, _ = warp_backward(img, params, r)
        idx = rng.choice(img.size, size=pixels, replace=False)

        def loss(x, s=spec, p=params, rr=r):
            return float(np.sum(warp(x, p) * rr))

        fd = numeric_grad_at(loss, img, idx)
        worst = max(worst, rel_error(grad_img.reshape(-1)[idx], fd))
    return worst


def _random_conv(rng, out_ch, in_ch, k) -> ConvLayer:
    pad = O.PAD_LOGPOLAR if k == 3 else O.PAD_NONE
    return ConvLayer(
        rng.standard_normal((out_ch, in_ch, k, k)), rng.standard_normal(out_ch), pad
    )


def _check_conv(rng: np.random.Generator, k: int) -> float:
    x = rng.standard_normal((2, 8, 8))
    layer = _random_conv(rng, 4, 2, k)
    r = rng.standard_normal((4, 8, 8))
    gx, gw, gb = O.conv2d_backward(x, layer, r)
    fd_x = numeric_grad(lambda v: float(np.sum(O.conv2d_forward(v, layer) * r)), x)
    fd_w = numeric_grad(
        lambda v: float(np.sum(O.conv2d_forward(x, ConvLayer(v, layer.bias, layer.pad_mode)) * r)),
        layer.weights.copy(),
    )
    fd_b = numeric_grad(
        lambda v: float(np.sum(O.conv2d_forward(x, ConvLayer(layer.weights, v, layer.pad_mode)) * r)),
        layer.bias.copy(),
    )
    return max(rel_error(gx, fd_x), rel_error(gw, fd_w), rel_error(gb, fd_b))


def check_conv3x3(rng: np.random.Generator) -> float:
    return _check_conv(rng, 3)


def check_conv1x1(rng: np.random.Generator) -> float:
    return _check_conv(rng, 1)


def check_maxpool(rng: np.random.Generator) -> float:
    x = rng.standard_normal((2, 8, 8))
    r = rng.standard_normal((2, 4, 4))
    _, amax = O.maxpool2x2_forward(x)
    gx = O.maxpool2x2_backward(amax, r)
    fd = numeric_grad(lambda v: float(np.sum(O.maxpool2x2_forward(v)[0] * r)), x)
    return rel_error(gx, fd)


def check_avgpool(rng: np.random.Generator) -> float:
    x = rng.standard_normal((3, 4, 6))
    r = rng.standard_normal(3)
    gx = O.global_avgpool_backward(r, (4, 6))
    fd = numeric_grad(lambda v: float(np.sum(O.global_avgpool_forward(v) * r)), x)
    return rel_error(gx, fd)


def check_dense(rng: np.random.Generator) -> float:
    x = rng.standard_normal(7)
    w = rng.standard_normal((5, 7))
    b = rng.standard_normal(5)
    r = rng.standard_normal(5)
    gx, gw, gb = O.dense_backward(x, w, r)
    fd_x = numeric_grad(lambda v: float(np.sum(O.dense_forward(v, w, b) * r)), x)
    fd_w = numeric_grad(lambda v: float(np.sum(O.dense_forward(x, v, b) * r)), w.copy())
    fd_b = numeric_grad(lambda v: float(np.sum(O.dense_forward(x, w, v) * r)), b.copy())
    return max(rel_error(gx, fd_x), rel_error(gw, fd_w), rel_error(gb, fd_b))


def check_tanh(rng: np.random.Generator) -> float:
    x = rng.standard_normal(16)
    r = rng.standard_normal(16)
    y = O.tanh_forward(x)
    ga = O.tanh_backward(y, r)
    fd = numeric_grad(lambda v: float(np.sum(O.tanh_forward(v) * r)), x)
    return rel_error(ga, fd)


def check_softmax_ce(rng: np.random.Generator) -> float:
    z = rng.standard_normal(10)
    label = int(rng.integers(10))
    _, grad = O.cross_entropy(O.softmax_forward(z), label)
    fd = numeric_grad(lambda v: O.cross_entropy(O.softmax_forward(v), label)[0], z)
    return rel_error(grad, fd)


def _readout_check(rng: np.random.Generator, phi_mode: str) -> float:
    spec = GridSpec(16, 32, 1.0, 32.0)
    grid = M.tap_coord_grid(spec)
    fmap = rng.standard_normal((1, 4, 8))
    # Bias the map toward a mid-grid angle so the circular mean sits well
    # away from the 0/2pi seam, which central differences cannot cross.
    fmap[0, 2, 4] += 3.0
    a, b = rng.standard_normal(2)
    gf = O.spatial_softmax_backward(fmap, grid, (a, b), phi_mode)

    def loss(v):
        pt = O.spatial_softmax_readout(v, grid, phi_mode)
        return a * pt.phi + b * pt.rho

    fd = numeric_grad(loss, fmap)
    return rel_error(gf, fd)


def check_spatial_softmax_circular(rng: np.random.Generator) -> float:
    return _readout_check(rng, "circular")


def check_spatial_softmax_linear(rng: np.random.Generator) -> float:
    return _readout_check(rng, "linear")


def check_rnn_unrolled(rng: np.random.Generator, steps: int = 4) -> float:
    hidden, din = 6, 5
    cell = RnnCell(
        rng.standard_normal((hidden, din)),
        rng.standard_normal((hidden, hidden)) * 0.5,
        rng.standard_normal(hidden),
    )
    xs = rng.standard_normal((steps, din))
    r = rng.standard_normal(hidden)

    def run(c: RnnCell):
        h = np.zeros(hidden)
        hist = [h]
        for t in range(steps):
            h = O.rnn_step_forward(c, h, xs[t])
            hist.append(h)
        return hist

    hist = run(cell)
    gwx = np.zeros_like(cell.w_x)
    gwh = np.zeros_like(cell.w_h)
    gb = np.zeros_like(cell.bias)
    gh = r.copy()
    for t in reversed(range(steps)):
        gh, _, dwx, dwh, db = O.rnn_step_backward(cell, hist[t], xs[t], hist[t + 1], gh)
        gwx += dwx
        gwh += dwh
        gb += db

    def loss_of(field: str):
        def f(v):
            kw = {"w_x": cell.w_x, "w_h": cell.w_h, "bias": cell.bias}
            kw[field] = v
            return float(np.sum(run(RnnCell(**kw))[-1] * r))
        return f

    worst = rel_error(gwx, numeric_grad(loss_of("w_x"), cell.w_x.copy()))
    worst = max(worst, rel_error(gwh, numeric_grad(loss_of("w_h"), cell.w_h.copy())))
    return max(worst, rel_error(gb, numeric_grad(loss_of("bias"), cell.bias.copy())))


# ---------------------------------------------------------------------------
# end-to-end checks on a tiny model


_TINY = M.ModelConfig(
    in_channels=1, num_classes=3, conv_channels=(4, 4, 4), fc_dims=(8, 6),
    loc_hidden=4, rnn_hidden=6,
)


def _tiny_setup(rng: np.random.Generator):
    params = M.init_params(rng, _TINY, dtype=np.float64)
    imgs = np.stack([gaussian_blobs(rng, 20, 20) for _ in range(2)])
    spec = GridSpec(8, 8, 1.0, 14.0)
    centers = np.array([_offgrid_center(rng, 20, 20) for _ in range(2)])
    labels = np.array([1, 2])
    return params, imgs, spec, centers, labels


def _param_sample(rng: np.random.Generator, arrays: dict, per_tensor: int):
    picks = []
    for name, arr in arrays.items():
        k = min(per_tensor, arr.size)
        for i in rng.choice(arr.size, size=k, replace=False):
            picks.append((name, int(i)))
    return picks


def _fd_over_params(loss_fn, arrays: dict, picks, h: float = _H) -> np.ndarray:
    out = np.zeros(len(picks))
    for k, (name, i) in enumerate(picks):
        flat = arrays[name].reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        fp = loss_fn()
        flat[i] = orig - h
        fm = loss_fn()
        flat[i] = orig
        out[k] = (fp - fm) / (2.0 * h)
    return out


def check_greedy_end_to_end(rng: np.random.Generator) -> float:
    """Classification loss through the sampler into the localiser weights."""
    params, imgs, spec, centers, labels = _tiny_setup(rng)
    arrays = params.named_arrays()

    def loss() -> float:
        probs, _ = M.greedy_forward_batch(imgs, centers, params, spec)
        losses, _ = O.cross_entropy(probs, labels)
        return float(losses.mean())

    grads = M.zero_grads(params)
    probs, cache = M.greedy_forward_batch(imgs, centers, params, spec)
    _, glog = O.cross_entropy(probs, labels)
    M.greedy_backward_batch(cache, imgs, params, spec, glog / len(labels), grads)

    picks = _param_sample(rng, {k: arrays[k] for k in ("loc1.weights", "loc2.weights", "loc1.bias", "loc2.bias")}, 4)
    picks += _param_sample(rng, {k: arrays[k] for k in ("conv1.weights", "fc3.weights")}, 3)
    fd = _fd_over_params(loss, arrays, picks)
    analytic = np.array([grads[name].reshape(-1)[i] for name, i in picks])
    return rel_error(analytic, fd)


def check_aggregate_bptt(rng: np.random.Generator, s_steps: int = 2) -> float:
    """Full BPTT of the aggregate loss vs finite differences, all tensors."""
    params, imgs, spec, centers, labels = _tiny_setup(rng)
    arrays = params.named_arrays()

    def loss() -> float:
        step_probs, _, _ = M.aggregate_forward_batch(imgs, centers, params, spec, s_steps)
        losses, _ = O.cross_entropy(step_probs[-1], labels)
        return float(losses.mean())

    grads = M.zero_grads(params)
    step_probs, _, cache = M.aggregate_forward_batch(imgs, centers, params, spec, s_steps)
    _, glog = O.cross_entropy(step_probs[-1], labels)
    M.aggregate_backward_batch(cache, imgs, params, spec, glog / len(labels), grads)

    picks = _param_sample(rng, arrays, 2)
    fd = _fd_over_params(loss, arrays, picks)
    analytic = np.array([grads[name].reshape(-1)[i] for name, i in picks])
    return rel_error(analytic, fd)


# ---------------------------------------------------------------------------
# suite driver

CHECKS = {
    "sampler_center": (check_sampler_center, PER_OP_TOL),
    "sampler_image": (check_sampler_image, PER_OP_TOL),
    "conv3x3": (check_conv3x3, PER_OP_TOL),
    "conv1x1": (check_conv1x1, PER_OP_TOL),
    "maxpool": (check_maxpool, PER_OP_TOL),
    "avgpool": (check_avgpool, PER_OP_TOL),
    "dense": (check_dense, PER_OP_TOL),
    "tanh": (check_tanh, PER_OP_TOL),
    "softmax_ce": (check_softmax_ce, PER_OP_TOL),
    "spatial_softmax_circular": (check_spatial_softmax_circular, PER_OP_TOL),
    "spatial_softmax_linear": (check_spatial_softmax_linear, PER_OP_TOL),
    "rnn_unrolled": (check_rnn_unrolled, PER_OP_TOL),
    "greedy_end_to_end": (check_greedy_end_to_end, END_TO_END_TOL),
    "aggregate_bptt": (check_aggregate_bptt, END_TO_END_TOL),
}


def run_suite(only: str | None = None, seed: int = 0):
    """Run (a filtered subset of) the checks.

    Returns a list of (name, max_rel_err, tolerance, passed) rows.
    """
    rows = []
    for k, (name, (fn, tol)) in enumerate(CHECKS.items()):
        if only and only not in name:
            continue
        err = fn(np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7, k))))
        rows.append((name, err, tol, err < tol))
    if not rows:
        raise ValueError(f"no gradient checks match {only!r}")
    return rows
