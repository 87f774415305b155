#!/usr/bin/env python3
"""Train briefly on a toy task, then follow the model through one image
saccade by saccade.

The toy task puts a bright blob at one of ten angles around the image
center; the class is the angle.  A few hundred steps are enough for the
localisation head to start steering toward the blob, which makes the printed
fixation path worth looking at.  Artifacts (overlay + per-step patches) go
to demos/out/trace/.
"""

import math
from pathlib import Path

import numpy as np

from retinotopic.data import Dataset
from retinotopic.model import ModelConfig, forward_aggregate, init_params
from retinotopic.ppm import write_ppm
from retinotopic.sampler import default_grid_spec
from retinotopic.training import TrainConfig, make_optimizer, train_step

OUT = Path(__file__).parent / "out" / "trace"
SIZE = 28


def blob_dataset(n: int, rng: np.random.Generator) -> Dataset:
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    c = (SIZE - 1) / 2.0
    images = np.empty((n, 1, SIZE, SIZE), dtype=np.float32)
    labels = rng.integers(0, 10, size=n)
    for i, k in enumerate(labels):
        ang = 2 * math.pi * k / 10
        bx = c + 0.28 * SIZE * math.cos(ang) + rng.uniform(-0.7, 0.7)
        by = c + 0.28 * SIZE * math.sin(ang) + rng.uniform(-0.7, 0.7)
        images[i, 0] = np.exp(-((xx - bx) ** 2 + (yy - by) ** 2) / (2 * 1.8**2))
    return Dataset(images, labels, "train", "blobs")


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    ds = blob_dataset(256, rng)
    config = TrainConfig(seed=0, margin=0.45, saccades=4, patch_size=32)
    spec = default_grid_spec(SIZE, SIZE, config.patch_size, config.r_min)
    params = init_params(np.random.default_rng(0), ModelConfig())
    arrays = params.named_arrays()
    opt = make_optimizer(config)

    print("training 300 steps on the toy task", end="", flush=True)
    for step in range(300):
        idx = rng.integers(0, len(ds), size=16)
        _, grads, stats = train_step((ds.images[idx], ds.labels[idx]),
                                     params, spec, config, rng)
        opt.step(arrays, grads)
        if step % 50 == 0:
            print(".", end="", flush=True)
    print(f" done (last batch final-saccade acc "
          f"{stats['accs_aggregate'][-1]:.2f})")

    probe = blob_dataset(1, np.random.default_rng(42))
    img, label = probe.images[0], int(probe.labels[0])
    start = ((SIZE - 1) / 2.0, (SIZE - 1) / 2.0)
    probs, trace = forward_aggregate(img, start, params, spec,
                                     config.saccades, keep_patches=True)

    print(f"\ntrue class {label}; fixation path:")
    for k, center in enumerate(trace.centers):
        line = f"  step {k}: fixation ({center.x:6.2f}, {center.y:6.2f})"
        if 1 <= k <= len(trace.class_probs):
            p = trace.class_probs[k - 1]
            line += f"  prediction {int(p.argmax())} (p={p.max():.2f})"
        print(line)
    print(f"aggregated prediction: {int(probs.argmax())} (p={probs.max():.2f})")

    for k, patch in enumerate(trace.patches):
        write_ppm(OUT / f"patch_{k}.ppm", patch)
    overlay = np.repeat((np.clip(img, 0, 1) * 255).astype(np.uint8), 3, axis=0)
    for k, center in enumerate(trace.centers):
        x = int(np.clip(round(center.x), 0, SIZE - 1))
        y = int(np.clip(round(center.y), 0, SIZE - 1))
        overlay[:, y, x] = (255, 255 - min(k * 50, 200), 0)
    write_ppm(OUT / "overlay.ppm", overlay)
    print(f"\npatches and overlay in {OUT}")


if __name__ == "__main__":
    main()
