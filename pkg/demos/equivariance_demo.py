#!/usr/bin/env python3
"""Show that rotating the input scrolls the log-polar patch along its rows
and rescaling slides it along its columns.

Rotation by 2*pi*k/H' about the fixation should equal a circular shift of
the patch by k rows; zooming by exp(d_rho) should equal a one-column shift.
Either identity holds only approximately (the warp resamples with bilinear
interpolation), so we report the residual as a fraction of the patch's
dynamic range.  PPM triptychs land in demos/out/equivariance/.
"""

import math
from pathlib import Path

import numpy as np

from retinotopic.geometry import CartesianPoint
from retinotopic.ppm import write_ppm
from retinotopic.sampler import GridSpec, SamplerParams, bilinear_sample_field, warp

OUT = Path(__file__).parent / "out" / "equivariance"
POLE = CartesianPoint(47.3, 48.2)


def smooth_scene(rng: np.random.Generator, size: int = 96) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((1, size, size))
    for _ in range(6):
        cx, cy = rng.uniform(20, size - 20, 2)
        s = rng.uniform(4, 9)
        img[0] += np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * s * s))
    return img / img.max()


def resample(img: np.ndarray, map_xy) -> np.ndarray:
    """Back-transform warp: destination pixel (x, y) reads source map_xy(x, y)."""
    _, h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sx, sy = map_xy(xx, yy)
    return bilinear_sample_field(img[None], sx, sy)[0]


def rotated(img, alpha):
    c, s = math.cos(-alpha), math.sin(-alpha)

    def back(xx, yy):
        dx, dy = xx - POLE.x, yy - POLE.y
        return POLE.x + c * dx - s * dy, POLE.y + s * dx + c * dy

    return resample(img, back)


def scaled(img, factor):
    def back(xx, yy):
        return (POLE.x + (xx - POLE.x) / factor,
                POLE.y + (yy - POLE.y) / factor)

    return resample(img, back)


def report(tag: str, got: np.ndarray, want: np.ndarray, rng_range: float) -> None:
    frac = np.abs(got - want).mean() / rng_range
    print(f"  {tag}: mean abs residual {frac:.3%} of dynamic range")


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    img = smooth_scene(np.random.default_rng(7))
    spec = GridSpec(32, 16, 1.0, 30.0)
    params = SamplerParams(POLE, spec)
    base = warp(img, params)
    span = base.max() - base.min()
    write_ppm(OUT / "patch_base.ppm", base)

    k = 5
    alpha = 2 * math.pi * k / spec.h_prime
    rot = warp(rotated(img, alpha), params)
    write_ppm(OUT / "patch_rotated.ppm", rot)
    write_ppm(OUT / "patch_base_rolled_rows.ppm", np.roll(base, k, axis=1))
    print(f"rotation by {math.degrees(alpha):.1f} deg vs {k}-row circular shift:")
    report("rows", rot, np.roll(base, k, axis=1), span)

    d_rho = (math.log(spec.r_max) - math.log(spec.r_min)) / (spec.w_prime - 1)
    sc = warp(scaled(img, math.exp(d_rho)), params)
    write_ppm(OUT / "patch_scaled.ppm", sc)
    write_ppm(OUT / "patch_base_rolled_cols.ppm", np.roll(base, 1, axis=2))
    print(f"zoom by {math.exp(d_rho):.4f} vs one-column shift "
          f"(innermost column excluded, its content was off-grid):")
    report("columns", sc[:, :, 1:], base[:, :, :-1], span)

    print(f"\nimages in {OUT}")


if __name__ == "__main__":
    main()
