"""Differentiable log-polar image warping by reverse mapping.

The destination raster of a :class:`~retinotopic.geometry.GridSpec` is mapped
back into the source image around a fixation center and sampled bilinearly.
Samples outside the source are zero-filled, which keeps both the warp and its
gradients total: out-of-range neighbours contribute value 0 and gradient 0.

Gradients are hand-derived.  The bilinear kernel is piecewise linear, so at
integer sample coordinates the right-continuous sub-gradient is used (the
floor-based weights give exactly that).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import CartesianPoint, GridSpec, grid_axes


@dataclass(frozen=True)
class SamplerParams:
    """Fixation center (pixels, source-image coordinates) plus raster spec."""

    center: CartesianPoint
    spec: GridSpec

    def __post_init__(self) -> None:
        if not (math.isfinite(self.center[0]) and math.isfinite(self.center[1])):
            raise ValueError(f"non-finite fixation center {self.center}")


def default_grid_spec(img_h: int, img_w: int, patch_size: int = 32, r_min: float = 1.0) -> GridSpec:
    """Square patch raster whose periphery reaches the source diagonal.

    ``r_max = sqrt(H^2 + W^2)`` so peripheral cells always see global
    context regardless of where the center sits.
    """
    return GridSpec(patch_size, patch_size, r_min, math.hypot(img_h, img_w))


def reverse_map(params: SamplerParams) -> np.ndarray:
    """Source-image sample points of every raster cell.

    Returns ``(h_prime, w_prime, 2)`` float64 with ``[..., 0] = x`` and
    ``[..., 1] = y``:  ``center + e^rho_j * (cos phi_i, sin phi_i)``.
    """
    phi, rho = grid_axes(params.spec)
    r = np.exp(rho)
    cx, cy = params.center
    x = r[None, :] * np.cos(phi)[:, None] + cx
    y = r[None, :] * np.sin(phi)[:, None] + cy
    return np.stack([x, y], axis=-1)


def _sample_coords(centers: np.ndarray, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Batched reverse map: (N, 2) centers -> xs, ys of shape (N, h', w')."""
    phi, rho = grid_axes(spec)
    r = np.exp(rho)
    ox = r[None, :] * np.cos(phi)[:, None]
    oy = r[None, :] * np.sin(phi)[:, None]
    xs = centers[:, 0, None, None] + ox[None]
    ys = centers[:, 1, None, None] + oy[None]
    return xs, ys


def _corner_terms(imgs: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Shared forward machinery: corner indices, weights and masked values.

    ``imgs`` is (N, C, H, W); ``xs``/``ys`` are float64 (N, h, w).  Returns
    the four (value, weight) pairs in the order 00, 10, 01, 11, where the
    first digit is the x offset, plus the fractional parts.  Values are
    gathered channels-last as (N, h, w, C) with out-of-range neighbours
    already zeroed.
    """
    n, _, h, w = imgs.shape
    dtype = imgs.dtype
    x0f = np.floor(xs)
    y0f = np.floor(ys)
    dx = (xs - x0f).astype(dtype)
    dy = (ys - y0f).astype(dtype)
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)

    il = np.ascontiguousarray(imgs.transpose(0, 2, 3, 1))  # (N, H, W, C)
    nn = np.arange(n)[:, None, None]

    corners = []
    for ix, iy, wgt in (
        (x0, y0, (1 - dx) * (1 - dy)),
        (x0 + 1, y0, dx * (1 - dy)),
        (x0, y0 + 1, (1 - dx) * dy),
        (x0 + 1, y0 + 1, dx * dy),
    ):
        valid = (ix >= 0) & (ix <= imgs.shape[3] - 1) & (iy >= 0) & (iy <= imgs.shape[2] - 1)
        vals = il[nn, np.clip(iy, 0, imgs.shape[2] - 1), np.clip(ix, 0, imgs.shape[3] - 1)]
        vals = vals * valid[..., None].astype(dtype)
        corners.append((ix, iy, valid, wgt, vals))
    return corners, dx, dy


def _check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"image must be (C, H, W) with C in {{1, 3}}, got shape {img.shape}")


def bilinear_sample_field(imgs: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear reads at arbitrary per-image coordinate fields.

    (N, C, H, W) images + (N, h, w) coordinates -> (N, C, h, w) samples,
    zero-filled outside the source.  The log-polar warp and the zoom
    augmentation are both thin wrappers over this.
    """
    corners, _, _ = _corner_terms(imgs, xs, ys)
    acc = None
    for _, _, _, wgt, vals in corners:
        term = wgt[..., None] * vals
        acc = term if acc is None else acc + term
    return np.ascontiguousarray(np.moveaxis(acc, -1, 1))


def warp_batch(imgs: np.ndarray, centers: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Log-polar patches for a batch: (N, C, H, W) + (N, 2) -> (N, C, h', w')."""
    xs, ys = _sample_coords(np.asarray(centers, dtype=np.float64), spec)
    return bilinear_sample_field(imgs, xs, ys)


def warp_batch_backward(
    imgs: np.ndarray,
    centers: np.ndarray,
    spec: GridSpec,
    grad_patches: np.ndarray,
    need_grad_img: bool = True,
):
    """Gradients of :func:`warp_batch`.

    Returns ``(grad_imgs, grad_centers)``; ``grad_imgs`` is None when
    ``need_grad_img`` is false (the scatter is the expensive part and the
    image is usually a constant input).  ``grad_centers`` is (N, 2): the
    reverse map is additive in the center, so each cell's spatial gradient
    contributes with unit weight.
    """
    n, c, h, w = imgs.shape
    if grad_patches.shape != (n, c, spec.h_prime, spec.w_prime):
        raise ValueError(
            f"grad_patches shape {grad_patches.shape} does not match warp output "
            f"{(n, c, spec.h_prime, spec.w_prime)}"
        )
    xs, ys = _sample_coords(np.asarray(centers, dtype=np.float64), spec)
    corners, dx, dy = _corner_terms(imgs, xs, ys)
    (_, _, _, _, v00), (_, _, _, _, v10), (_, _, _, _, v01), (_, _, _, _, v11) = corners

    gp = np.moveaxis(grad_patches, 1, -1)  # (N, h', w', C)
    ddx = (1 - dy)[..., None] * (v10 - v00) + dy[..., None] * (v11 - v01)
    ddy = (1 - dx)[..., None] * (v01 - v00) + dx[..., None] * (v11 - v10)
    gx = np.einsum("nijc,nijc->nij", gp, ddx)
    gy = np.einsum("nijc,nijc->nij", gp, ddy)
    grad_centers = np.stack([gx.sum(axis=(1, 2)), gy.sum(axis=(1, 2))], axis=-1)

    grad_imgs = None
    if need_grad_img:
        grad_imgs = np.zeros_like(imgs)
        flat = grad_imgs.reshape(n, c, h * w)
        nn = np.arange(n)[:, None, None]
        for ix, iy, valid, wgt, _ in corners:
            contrib = (wgt * valid)[..., None] * gp  # (N, h', w', C)
            idx = np.clip(iy, 0, h - 1) * w + np.clip(ix, 0, w - 1)
            for ch in range(c):
                per_img = np.bincount(
                    (nn * (h * w) + idx).ravel(),
                    weights=contrib[..., ch].ravel(),
                    minlength=n * h * w,
                )
                flat[:, ch, :] += per_img.reshape(n, h * w).astype(imgs.dtype)
    return grad_imgs, grad_centers


def warp(img: np.ndarray, params: SamplerParams) -> np.ndarray:
    """Log-polar patch of one image: (C, H, W) -> (C, h', w')."""
    _check_image(img)
    centers = np.array([[params.center[0], params.center[1]]], dtype=np.float64)
    return warp_batch(img[None], centers, params.spec)[0]


def warp_backward(img: np.ndarray, params: SamplerParams, grad_patch: np.ndarray):
    """Gradients of :func:`warp` for one image.

    Returns ``(grad_img, grad_center)`` with ``grad_img`` shaped like the
    image and ``grad_center`` a ``(d/dx_c, d/dy_c)`` pair.
    """
    _check_image(img)
    centers = np.array([[params.center[0], params.center[1]]], dtype=np.float64)
    grad_imgs, grad_centers = warp_batch_backward(
        img[None], centers, params.spec, grad_patch[None], need_grad_img=True
    )
    return grad_imgs[0], (float(grad_centers[0, 0]), float(grad_centers[0, 1]))


def bilinear_sample(img: np.ndarray, xy: tuple[float, float]) -> np.ndarray:
    """Bilinear read of one point, per channel; zero outside the image."""
    _check_image(img)
    xs = np.array([[[xy[0]]]], dtype=np.float64)
    ys = np.array([[[xy[1]]]], dtype=np.float64)
    corners, _, _ = _corner_terms(img[None], xs, ys)
    acc = sum(wgt[..., None] * vals for _, _, _, wgt, vals in corners)
    return acc[0, 0, 0]
