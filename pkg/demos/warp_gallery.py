#!/usr/bin/env python3
"""Render one synthetic scene through the log-polar sampler from several
fixation points and grid sizes.

Writes netpbm images into demos/out/gallery/.  The scene mixes concentric
rings (constant-radius structure, which the warp turns into vertical stripes)
with radial spokes (constant-angle structure, which becomes horizontal
stripes) so you can read the (phi, rho) axes straight off the output.
"""

from pathlib import Path

import numpy as np

from retinotopic.ppm import write_ppm
from retinotopic.sampler import GridSpec, SamplerParams, warp

OUT = Path(__file__).parent / "out" / "gallery"


def scene(size: int = 128) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = cy = (size - 1) / 2.0
    r = np.hypot(xx - cx, yy - cy)
    phi = np.arctan2(yy - cy, xx - cx)
    rings = 0.5 + 0.5 * np.cos(r / 4.0)
    spokes = 0.5 + 0.5 * np.cos(8.0 * phi)
    img = np.stack([rings, spokes, 0.5 * (rings + spokes)])
    # one bright blob off to the side, to track across fixations
    img += np.exp(-((xx - 96.0) ** 2 + (yy - 40.0) ** 2) / (2 * 5.0**2))
    return np.clip(img, 0.0, 1.0)


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    img = scene()
    write_ppm(OUT / "scene.ppm", img)
    print(f"scene.ppm: {img.shape[2]}x{img.shape[1]} test pattern")

    spec = GridSpec(64, 64, 1.0, 60.0)
    fixations = {
        "center": (63.5, 63.5),
        "blob": (96.0, 40.0),
        "cornerish": (28.0, 92.0),
    }
    for name, (cx, cy) in fixations.items():
        patch = warp(img, SamplerParams((cx, cy), spec))
        write_ppm(OUT / f"warp_{name}.ppm", patch)
        print(f"warp_{name}.ppm: fixation ({cx}, {cy}); rows sweep phi, "
              f"columns sweep log r")

    # same fixation, coarser and finer grids: the image content per cell
    # changes but the layout (rings vertical, spokes horizontal) does not
    for h, w in ((16, 16), (128, 96)):
        patch = warp(img, SamplerParams(fixations["center"], GridSpec(h, w, 1.0, 60.0)))
        write_ppm(OUT / f"warp_center_{h}x{w}.ppm", patch)
        print(f"warp_center_{h}x{w}.ppm: same fixation at {h}x{w} resolution")

    print(f"\nwrote {len(list(OUT.glob('*.ppm')))} images to {OUT}")


if __name__ == "__main__":
    main()
