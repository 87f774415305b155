"""Two-task training loop: greedy localisation and RNN aggregation.

Each minibatch draws random initial fixations, optionally augments the
images, and combines the greedy and aggregate losses into one parameter
update: ``loss_total = lambda_greedy * CE(greedy) + CE(aggregate, final
step)``.  Losses are also tracked per task, which is what the metrics CSV
reports (at a fresh init each task's CE sits near ln 10 for ten classes).

Reproducibility: every epoch derives its own generator from the run seed via
``SeedSequence(seed, spawn_key=(1, epoch))``, so resuming from a checkpoint
replays the exact shuffles, fixations and augmentations the uninterrupted
run would have produced.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .geometry import CartesianPoint
from .model import (
    ModelParams,
    aggregate_backward_batch,
    aggregate_forward_batch,
    from_named_arrays,
    greedy_backward_batch,
    greedy_forward_batch,
    load_checkpoint,
    save_checkpoint,
    zero_grads,
)
from .nnops import cross_entropy
from .sampler import bilinear_sample_field, default_grid_spec


class TrainingDivergedError(RuntimeError):
    """Raised when the loss goes non-finite."""


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 10
    lr: float = 1e-3
    optimizer: str = "adam"  # or sgd_momentum
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_greedy: float = 1.0
    saccades: int = 4
    seed: int = 0
    patch_size: int = 32
    r_min: float = 1.0
    margin: float = 0.25
    phi_readout: str = "circular"
    flip: bool = False
    zoom: bool = False
    color: bool = False
    zoom_lo: float = 0.9
    zoom_hi: float = 1.1
    hue_delta: float = 0.05
    color_lo: float = 0.8
    color_hi: float = 1.2
    greedy_pretrain_epochs: int = 0
    eval_center: str = "center"  # or random
    limit_train: int = 0  # 0 = whole split
    limit_eval: int = 0

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.saccades < 1:
            raise ValueError("need at least one saccade")
        if not 0.0 <= self.margin < 0.5:
            raise ValueError(f"margin must lie in [0, 0.5), got {self.margin}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (0.0 < self.zoom_lo <= self.zoom_hi <= 2.0):
            raise ValueError("zoom range must satisfy 0 < lo <= hi <= 2")
        if self.phi_readout not in ("circular", "linear"):
            raise ValueError(f"unknown phi_readout {self.phi_readout!r}")
        if self.eval_center not in ("center", "random"):
            raise ValueError(f"unknown eval_center {self.eval_center!r}")
        if self.lambda_greedy < 0 or self.greedy_pretrain_epochs < 0:
            raise ValueError("lambda_greedy and greedy_pretrain_epochs must be >= 0")


# ---------------------------------------------------------------------------
# initial fixations


def sample_init_center(rng: np.random.Generator, img_dims: tuple[int, int],
                       margin: float = 0.25) -> CartesianPoint:
    """Uniform fixation over the central (1 - 2*margin) fraction of the image."""
    h, w = img_dims
    x = rng.uniform(margin * w, (1.0 - margin) * w)
    y = rng.uniform(margin * h, (1.0 - margin) * h)
    return CartesianPoint(x, y)


def sample_init_centers(rng: np.random.Generator, n: int, img_dims: tuple[int, int],
                        margin: float = 0.25) -> np.ndarray:
    h, w = img_dims
    xs = rng.uniform(margin * w, (1.0 - margin) * w, size=n)
    ys = rng.uniform(margin * h, (1.0 - margin) * h, size=n)
    return np.stack([xs, ys], axis=1)


# ---------------------------------------------------------------------------
# augmentation


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    dz = np.maximum(delta, 1e-12)
    rc = (maxc - r) / dz
    gc = (maxc - g) / dz
    bc = (maxc - b) / dz
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, maxc], axis=1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[:, 0], hsv[:, 1], hsv[:, 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    i = i.astype(np.int64) % 6
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    tbl_r = np.stack([v, q, p, p, t, v])
    tbl_g = np.stack([t, v, v, q, p, p])
    tbl_b = np.stack([p, p, t, v, v, q])
    sel = i[None]
    r = np.take_along_axis(tbl_r, sel, axis=0)[0]
    g = np.take_along_axis(tbl_g, sel, axis=0)[0]
    b = np.take_along_axis(tbl_b, sel, axis=0)[0]
    return np.stack([r, g, b], axis=1)


def zoom_batch(imgs: np.ndarray, factors: np.ndarray) -> np.ndarray:
    """Rescale each image about its center by its factor (bilinear, zero-fill)."""
    n, _, h, w = imgs.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    f = np.asarray(factors, dtype=np.float64).reshape(n, 1, 1)
    xs = cx + (xx[None] - cx) / f
    ys = cy + (yy[None] - cy) / f
    return bilinear_sample_field(imgs, xs, ys)


def color_jitter_batch(imgs: np.ndarray, rng: np.random.Generator,
                       config: TrainConfig) -> np.ndarray:
    """Per-image hue shift plus saturation/brightness/contrast scaling."""
    n = imgs.shape[0]
    hsv = _rgb_to_hsv(imgs.astype(np.float64))
    hsv[:, 0] = (hsv[:, 0] + rng.uniform(-config.hue_delta, config.hue_delta, n)[:, None, None]) % 1.0
    hsv[:, 1] = np.clip(hsv[:, 1] * rng.uniform(config.color_lo, config.color_hi, n)[:, None, None], 0, 1)
    hsv[:, 2] = np.clip(hsv[:, 2] * rng.uniform(config.color_lo, config.color_hi, n)[:, None, None], 0, 1)
    rgb = _hsv_to_rgb(hsv)
    c = rng.uniform(config.color_lo, config.color_hi, n)[:, None, None, None]
    mean = rgb.mean(axis=(1, 2, 3), keepdims=True)
    return np.clip(mean + (rgb - mean) * c, 0.0, 1.0).astype(imgs.dtype)


def augment_batch(imgs: np.ndarray, rng: np.random.Generator, config: TrainConfig) -> np.ndarray:
    """Apply the enabled augmentations; identity (no copy) when all are off."""
    out = imgs
    if config.flip:
        mask = rng.random(imgs.shape[0]) < 0.5
        out = out.copy()
        out[mask] = out[mask, :, :, ::-1]
    if config.zoom:
        factors = rng.uniform(config.zoom_lo, config.zoom_hi, imgs.shape[0])
        out = zoom_batch(out, factors).astype(imgs.dtype)
    if config.color and imgs.shape[1] == 3:
        out = color_jitter_batch(out, rng, config)
    return out


def augment(img: np.ndarray, rng: np.random.Generator, config: TrainConfig) -> np.ndarray:
    """Single-image convenience wrapper."""
    return augment_batch(img[None], rng, config)[0]


# ---------------------------------------------------------------------------
# optimizers


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in arrays.items():
            g = grads[name].astype(p.dtype, copy=False)
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"opt.step": np.array(float(self.t), dtype=np.float32)}
        for name, m in self.m.items():
            out[f"opt.m.{name}"] = m
        for name, v in self.v.items():
            out[f"opt.v.{name}"] = v
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        # checkpoints store scalars as shape (1,), fresh state dicts as 0-d
        self.t = int(arrays["opt.step"].item())
        self.m = {k[len("opt.m."):]: v for k, v in arrays.items() if k.startswith("opt.m.")}
        self.v = {k[len("opt.v."):]: v for k, v in arrays.items() if k.startswith("opt.v.")}


class SgdMomentum:
    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr, self.momentum = lr, momentum
        self.t = 0
        self.vel: dict[str, np.ndarray] = {}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, p in arrays.items():
            vel = self.vel.setdefault(name, np.zeros_like(p))
            vel *= self.momentum
            vel += grads[name].astype(p.dtype, copy=False)
            p -= (self.lr * vel).astype(p.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"opt.step": np.array(float(self.t), dtype=np.float32)}
        for name, v in self.vel.items():
            out[f"opt.vel.{name}"] = v
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["opt.step"].item())
        self.vel = {k[len("opt.vel."):]: v for k, v in arrays.items() if k.startswith("opt.vel.")}


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.lr, config.beta1, config.beta2, config.eps)
    return SgdMomentum(config.lr, config.momentum)


# ---------------------------------------------------------------------------
# steps, evaluation, epochs


def train_step(batch, params: ModelParams, spec, config: TrainConfig,
               rng: np.random.Generator, include_aggregate: bool = True):
    """One minibatch: forward both tasks, accumulate grads, report stats.

    Returns (loss_total, grads, stats).  stats carries per-task losses and
    per-saccade accuracies for the metrics log.
    """
    imgs, labels = batch
    n = imgs.shape[0]
    imgs = augment_batch(imgs, rng, config)
    centers0 = sample_init_centers(rng, n, (imgs.shape[2], imgs.shape[3]), config.margin)
    grads = zero_grads(params)
    loss_total = 0.0
    stats: dict = {}

    if config.lambda_greedy > 0:
        probs, cache = greedy_forward_batch(imgs, centers0, params, spec, config.phi_readout)
        losses, glog = cross_entropy(probs, labels)
        loss_g = float(losses.mean())
        greedy_backward_batch(
            cache, imgs, params, spec, glog * (config.lambda_greedy / n), grads, config.phi_readout
        )
        loss_total += config.lambda_greedy * loss_g
        stats["loss_greedy"] = loss_g
        stats["acc_greedy"] = float((probs.argmax(axis=1) == labels).mean())

    if include_aggregate:
        step_probs, _, cache = aggregate_forward_batch(
            imgs, centers0, params, spec, config.saccades, config.phi_readout
        )
        losses, alog = cross_entropy(step_probs[-1], labels)
        loss_a = float(losses.mean())
        aggregate_backward_batch(cache, imgs, params, spec, alog / n, grads, config.phi_readout)
        loss_total += loss_a
        stats["loss_aggregate"] = loss_a
        stats["accs_aggregate"] = [float((p.argmax(axis=1) == labels).mean()) for p in step_probs]

    if not math.isfinite(loss_total):
        raise TrainingDivergedError(
            f"non-finite loss {loss_total} (greedy {stats.get('loss_greedy')}, "
            f"aggregate {stats.get('loss_aggregate')})"
        )
    stats["loss_total"] = loss_total
    return loss_total, grads, stats


@dataclass
class EvalResult:
    loss: float
    accs: list[float]  # per-saccade accuracy; the last entry is the headline
    n: int

    @property
    def final_acc(self) -> float:
        return self.accs[-1]


def evaluate(ds: Dataset, params: ModelParams, spec, config: TrainConfig,
             rng: np.random.Generator | None = None) -> EvalResult:
    """Accuracy per saccade over a test split; prediction = last step.

    Initial fixations are the image center by default, or random draws from
    ``rng`` when ``config.eval_center == "random"``.
    """
    n = len(ds) if config.limit_eval == 0 else min(config.limit_eval, len(ds))
    h, w = ds.images.shape[2], ds.images.shape[3]
    correct = np.zeros(config.saccades, dtype=np.int64)
    loss_sum = 0.0
    bs = max(config.batch_size, 64)
    for i in range(0, n, bs):
        end = min(i + bs, n)
        imgs = ds.images[i:end]
        labels = ds.labels[i:end]
        m = imgs.shape[0]
        if config.eval_center == "random":
            if rng is None:
                raise ValueError("random eval centers need an rng")
            centers = sample_init_centers(rng, m, (h, w), config.margin)
        else:
            centers = np.tile([[(w - 1) / 2.0, (h - 1) / 2.0]], (m, 1))
        step_probs, _, _ = aggregate_forward_batch(
            imgs, centers, params, spec, config.saccades, config.phi_readout
        )
        losses, _ = cross_entropy(step_probs[-1], labels)
        loss_sum += float(losses.sum())
        for s, p in enumerate(step_probs):
            correct[s] += int((p.argmax(axis=1) == labels).sum())
    return EvalResult(loss_sum / n, [float(c) / n for c in correct], n)


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, epoch)))


def _eval_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, epoch)))


def _fmt(x) -> str:
    return repr(float(x))


def _csv_row(path: Path, cells: list) -> None:
    with open(path, "a") as f:
        f.write(",".join(str(c) for c in cells) + "\n")


def fit(params: ModelParams, train_ds: Dataset, test_ds: Dataset, config: TrainConfig,
        out_dir, optimizer=None, start_epoch: int = 0, log=print) -> list[dict]:
    """Run the epoch loop; write metrics.csv, per-epoch checkpoints, summary.

    ``start_epoch > 0`` resumes: pass the optimizer restored from the
    checkpoint and the same config/seed to reproduce the uninterrupted run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = train_ds.images.shape[2], train_ds.images.shape[3]
    spec = default_grid_spec(h, w, config.patch_size, config.r_min)
    opt = optimizer if optimizer is not None else make_optimizer(config)
    arrays = params.named_arrays()

    csv_path = out / "metrics.csv"
    acc_cols = ",".join(f"acc{i + 1}" for i in range(config.saccades))
    if start_epoch == 0 or not csv_path.exists():
        csv_path.write_text(f"epoch,split,task,loss,{acc_cols}\n")

    n_train = len(train_ds) if config.limit_train == 0 else min(config.limit_train, len(train_ds))
    history: list[dict] = []
    for epoch in range(start_epoch, config.epochs):
        rng = _epoch_rng(config.seed, epoch)
        include_agg = epoch >= config.greedy_pretrain_epochs
        perm = rng.permutation(n_train)
        sums: dict[str, float] = {}
        acc_steps = np.zeros(config.saccades)
        batches = 0
        greedy_acc = 0.0
        for i in range(0, n_train, config.batch_size):
            idx = perm[i:i + config.batch_size]
            batch = (train_ds.images[idx], train_ds.labels[idx])
            _, grads, stats = train_step(batch, params, spec, config, rng, include_agg)
            opt.step(arrays, grads)
            batches += 1
            for key in ("loss_total", "loss_greedy", "loss_aggregate"):
                if key in stats:
                    sums[key] = sums.get(key, 0.0) + stats[key]
            if "accs_aggregate" in stats:
                acc_steps += stats["accs_aggregate"]
            greedy_acc += stats.get("acc_greedy", 0.0)

        ep = epoch + 1
        empty = [""] * (config.saccades - 1)
        if "loss_greedy" in sums:
            _csv_row(csv_path, [ep, "train", "greedy", _fmt(sums["loss_greedy"] / batches),
                                _fmt(greedy_acc / batches)] + empty)
        if include_agg:
            _csv_row(csv_path, [ep, "train", "aggregate", _fmt(sums["loss_aggregate"] / batches)]
                     + [_fmt(a / batches) for a in acc_steps])
        res = evaluate(test_ds, params, spec, config, _eval_rng(config.seed, epoch))
        _csv_row(csv_path, [ep, "test", "aggregate", _fmt(res.loss)] + [_fmt(a) for a in res.accs])

        record = {
            "epoch": ep,
            "train_loss": sums["loss_total"] / batches,
            "test_loss": res.loss,
            "test_accs": res.accs,
        }
        history.append(record)
        if log is not None:
            accs = " ".join(f"{a:.4f}" for a in res.accs)
            log(f"epoch {ep}: train loss {record['train_loss']:.4f} "
                f"test loss {res.loss:.4f} acc/step {accs}")

        ckpt = dict(arrays)
        ckpt.update(opt.state_arrays())
        ckpt["train.epochs_done"] = np.array(float(ep), dtype=np.float32)
        save_checkpoint(out / f"epoch_{ep}.rtnt", ckpt)

    (out / "summary.json").write_text(json.dumps({
        "epochs": config.epochs,
        "history": history,
    }, indent=2) + "\n")
    return history


def resume_state(checkpoint_path, config: TrainConfig):
    """Load params + optimizer + epoch counter from a training checkpoint."""
    arrays = load_checkpoint(checkpoint_path)
    params = from_named_arrays({k: v for k, v in arrays.items() if not k.startswith(("opt.", "train."))})
    opt = make_optimizer(config)
    if any(k.startswith("opt.") for k in arrays):
        opt.load_state({k: v for k, v in arrays.items() if k.startswith("opt.")})
    epochs_done = int(arrays.get("train.epochs_done", np.float32(0.0)).item())
    return params, opt, epochs_done
