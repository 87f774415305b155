"""Command-line front end: train, eval, gradcheck, trace, warp.

Thread pinning must happen before numpy initialises its BLAS, so this module
imports nothing heavy at the top; each command pulls in what it needs after
the environment is set.  Configuration merges three layers with increasing
precedence: built-in defaults, a ``--config`` file (``key=value`` lines or a
previously written ``run.json``), then explicit command-line flags.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from pathlib import Path

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

# Config-file keys that belong to the command layer rather than TrainConfig.
_EXTRA_KEYS = {
    "dataset": str, "data_dir": str, "out_dir": str, "threads": int,
    "deterministic": bool, "checkpoint": str, "resume": str, "split": str,
    "index": int, "only": str,
}

_DATASET_CHANNELS = {"mnist": 1, "fashion_mnist": 1, "cifar10": 3}


class ConfigError(ValueError):
    pass


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean from {raw!r}")


def parse_config_file(path) -> dict:
    """Read key=value lines (# comments allowed) or a run.json replay file."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        obj = json.loads(text)
        if isinstance(obj.get("config"), dict):
            obj = obj["config"]
        return dict(obj)
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(key: str, raw, target_type) -> object:
    if not isinstance(raw, str):
        return raw
    try:
        if target_type is bool:
            return _parse_bool(raw)
        return target_type(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config key {key!r}: {e}") from e


def _merge_config(args, file_cfg: dict):
    """defaults < file < CLI.  Returns (TrainConfig, extras dict)."""
    import dataclasses

    from .training import TrainConfig

    defaults = TrainConfig()
    train_fields = {f.name: type(getattr(defaults, f.name)) for f in dataclasses.fields(TrainConfig)}
    merged = dataclasses.asdict(defaults)
    extras = {k: None for k in _EXTRA_KEYS}

    for key, raw in file_cfg.items():
        if key in train_fields:
            merged[key] = _coerce(key, raw, train_fields[key])
        elif key in _EXTRA_KEYS:
            extras[key] = _coerce(key, raw, _EXTRA_KEYS[key])
        else:
            raise ConfigError(f"unknown config key {key!r}")

    for key, value in vars(args).items():
        if value is None or key in ("command", "func", "config"):
            continue
        if key in train_fields:
            merged[key] = value
        elif key in _EXTRA_KEYS:
            extras[key] = value

    try:
        return TrainConfig(**merged), extras
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _build_id() -> str:
    try:
        proc = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        if proc.returncode == 0 and proc.stdout.strip():
            return proc.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _write_run_json(out_dir, command: str, config, extras: dict) -> None:
    import dataclasses

    payload = {
        "command": command,
        "build_id": _build_id(),
        "config": {**dataclasses.asdict(config),
                   **{k: v for k, v in extras.items() if v is not None}},
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.json").write_text(json.dumps(payload, indent=2) + "\n")


def _load_split(extras, split: str):
    from .data import load_dataset, resolve_data_dir

    name = extras["dataset"] or "mnist"
    return load_dataset(name, resolve_data_dir(extras["data_dir"]), split), name


def _model_for(extras, config, checkpoint=None):
    import numpy as np

    from .model import ModelConfig, from_named_arrays, init_params, load_checkpoint

    if checkpoint:
        arrays = load_checkpoint(checkpoint)
        params = from_named_arrays(
            {k: v for k, v in arrays.items() if not k.startswith(("opt.", "train."))}
        )
        return params
    name = extras["dataset"] or "mnist"
    mc = ModelConfig(in_channels=_DATASET_CHANNELS.get(name, 1))
    return init_params(np.random.default_rng(config.seed), mc)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args, file_cfg) -> int:
    config, extras = _merge_config(args, file_cfg)
    out_dir = extras["out_dir"] or f"runs/{extras['dataset'] or 'mnist'}"
    _write_run_json(out_dir, "train", config, extras)

    train_ds, _ = _load_split(extras, "train")
    test_ds, _ = _load_split(extras, "test")

    from .training import fit, resume_state

    start_epoch = 0
    optimizer = None
    if extras["resume"]:
        params, optimizer, start_epoch = resume_state(extras["resume"], config)
        if start_epoch >= config.epochs:
            print(f"checkpoint already covers {start_epoch} epochs "
                  f"(target {config.epochs}); nothing to do", file=sys.stderr)
            return 1
        print(f"resuming after epoch {start_epoch} from {extras['resume']}")
    else:
        params = _model_for(extras, config)

    fit(params, train_ds, test_ds, config, out_dir,
        optimizer=optimizer, start_epoch=start_epoch)
    print(f"artifacts in {out_dir}")
    return 0


def cmd_eval(args, file_cfg) -> int:
    config, extras = _merge_config(args, file_cfg)
    out_dir = extras["out_dir"] or "runs/eval"
    _write_run_json(out_dir, "eval", config, extras)

    import numpy as np

    from .sampler import default_grid_spec
    from .training import evaluate

    ds, name = _load_split(extras, extras["split"] or "test")
    params = _model_for(extras, config, extras["checkpoint"])
    if not extras["checkpoint"]:
        print("note: no checkpoint given, evaluating a random init")
    h, w = ds.images.shape[2], ds.images.shape[3]
    spec = default_grid_spec(h, w, config.patch_size, config.r_min)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(2, 0)))
    res = evaluate(ds, params, spec, config, rng)

    for s, acc in enumerate(res.accs, 1):
        print(f"saccade {s}: accuracy {acc:.4f}")
    print(f"final-saccade accuracy: {res.final_acc:.4f} (loss {res.loss:.4f}, n={res.n})")
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / "eval.json").write_text(json.dumps({
        "dataset": name, "split": extras["split"] or "test", "n": res.n,
        "loss": res.loss, "accs": res.accs, "final_acc": res.final_acc,
        "checkpoint": extras["checkpoint"],
    }, indent=2) + "\n")
    return 0


def cmd_gradcheck(args, file_cfg) -> int:
    config, extras = _merge_config(args, file_cfg)
    from .gradcheck import run_suite

    rows = run_suite(extras["only"], seed=config.seed)
    width = max(len(r[0]) for r in rows)
    ok = True
    for name, err, tol, passed in rows:
        ok &= passed
        print(f"{name:<{width}}  max rel err {err:.3e}  tol {tol:.0e}  "
              f"{'PASS' if passed else 'FAIL'}")
    if extras["out_dir"]:
        _write_run_json(extras["out_dir"], "gradcheck", config, extras)
        (Path(extras["out_dir"]) / "gradcheck.json").write_text(json.dumps(
            [{"name": n, "max_rel_err": e, "tol": t, "pass": p} for n, e, t, p in rows],
            indent=2) + "\n")
    return 0 if ok else 1


def _overlay_rgb(img: "np.ndarray"):
    import numpy as np

    rgb = (np.clip(img, 0, 1) * 255).round().astype(np.uint8)
    if rgb.shape[0] == 1:
        rgb = np.repeat(rgb, 3, axis=0)
    return rgb


def _burn_path(rgb, centers) -> None:
    import numpy as np

    _, h, w = rgb.shape
    color = np.array([255, 32, 32], dtype=np.uint8)
    for (x0, y0), (x1, y1) in zip(centers[:-1], centers[1:]):
        steps = int(4 * max(abs(x1 - x0), abs(y1 - y0))) + 2
        xs = np.clip(np.rint(np.linspace(x0, x1, steps)), 0, w - 1).astype(int)
        ys = np.clip(np.rint(np.linspace(y0, y1, steps)), 0, h - 1).astype(int)
        rgb[:, ys, xs] = color[:, None]
    for k, (x, y) in enumerate(centers):
        xi = int(np.clip(round(x), 1, w - 2))
        yi = int(np.clip(round(y), 1, h - 2))
        shade = np.array([32, 255 - min(k * 40, 200), 32], dtype=np.uint8)
        rgb[:, yi - 1:yi + 2, xi] = shade[:, None]
        rgb[:, yi, xi - 1:xi + 2] = shade[:, None]


def cmd_trace(args, file_cfg) -> int:
    config, extras = _merge_config(args, file_cfg)
    out_dir = Path(extras["out_dir"] or "runs/trace")
    _write_run_json(out_dir, "trace", config, extras)

    import numpy as np

    from .model import forward_aggregate
    from .ppm import write_ppm
    from .sampler import default_grid_spec
    from .training import sample_init_center

    ds, _ = _load_split(extras, extras["split"] or "test")
    index = extras["index"] or 0
    if not 0 <= index < len(ds):
        print(f"index {index} out of range for split of {len(ds)}", file=sys.stderr)
        return 1
    params = _model_for(extras, config, extras["checkpoint"])
    img = ds.images[index]
    h, w = img.shape[1], img.shape[2]
    spec = default_grid_spec(h, w, config.patch_size, config.r_min)
    if config.eval_center == "random":
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(3, index)))
        c0 = sample_init_center(rng, (h, w), config.margin)
    else:
        c0 = ((w - 1) / 2.0, (h - 1) / 2.0)
    probs, trace = forward_aggregate(
        img, c0, params, spec, config.saccades, config.phi_readout, keep_patches=True
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "trace_centers.csv", "w") as f:
        f.write("step,x,y,pred,p_pred\n")
        for k, c in enumerate(trace.centers):
            if 1 <= k <= len(trace.class_probs):
                p = trace.class_probs[k - 1]
                f.write(f"{k},{c.x!r},{c.y!r},{int(p.argmax())},{float(p.max())!r}\n")
            else:
                f.write(f"{k},{c.x!r},{c.y!r},,\n")
    for k, patch in enumerate(trace.patches):
        write_ppm(out_dir / f"patch_{k}.ppm", patch)
    rgb = _overlay_rgb(img)
    _burn_path(rgb, [(c.x, c.y) for c in trace.centers])
    write_ppm(out_dir / "overlay.ppm", rgb)
    print(f"label {int(ds.labels[index])}, predicted {int(probs.argmax())} "
          f"(p={float(probs.max()):.3f}); trace in {out_dir}")
    return 0


def cmd_warp(args, file_cfg) -> int:
    config, extras = _merge_config(args, file_cfg)

    import numpy as np

    from .ppm import read_ppm, write_ppm
    from .sampler import SamplerParams, default_grid_spec, warp

    img = read_ppm(args.input).astype(np.float32) / 255.0
    h, w = img.shape[1], img.shape[2]
    spec = default_grid_spec(h, w, config.patch_size, config.r_min)
    patch = warp(img, SamplerParams((args.cx, args.cy), spec))
    out = args.output or str(Path(args.input).with_suffix("")) + "_logpolar.ppm"
    write_ppm(out, patch)
    if extras["out_dir"]:
        _write_run_json(extras["out_dir"], "warp", config, extras)
    print(f"wrote {out} ({spec.h_prime}x{spec.w_prime} patch about "
          f"({args.cx}, {args.cy}))")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file or a previous run.json")
    p.add_argument("--threads", type=int, help="BLAS thread count (0 = library default)")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                   help="single-thread ordered arithmetic for bit-exact runs")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", choices=("mnist", "fashion_mnist", "cifar10"))
    p.add_argument("--data-dir", help="dataset root (default $RETINOTOPIC_DATA_DIR or ./data)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retinotopic",
        description="Log-polar saccadic glimpse classifier",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on a dataset")
    _add_common(t)
    _add_data(t)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--optimizer", choices=("adam", "sgd_momentum"))
    t.add_argument("--momentum", type=float)
    t.add_argument("--lambda-greedy", type=float)
    t.add_argument("--saccades", type=int)
    t.add_argument("--patch-size", type=int)
    t.add_argument("--r-min", type=float)
    t.add_argument("--margin", type=float)
    t.add_argument("--phi-readout", choices=("circular", "linear"))
    t.add_argument("--flip", action=argparse.BooleanOptionalAction)
    t.add_argument("--zoom", action=argparse.BooleanOptionalAction)
    t.add_argument("--color", action=argparse.BooleanOptionalAction)
    t.add_argument("--greedy-pretrain-epochs", type=int)
    t.add_argument("--eval-center", choices=("center", "random"))
    t.add_argument("--limit-train", type=int)
    t.add_argument("--limit-eval", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(e)
    _add_data(e)
    e.add_argument("--checkpoint")
    e.add_argument("--split", choices=("train", "test"))
    e.add_argument("--saccades", type=int)
    e.add_argument("--patch-size", type=int)
    e.add_argument("--r-min", type=float)
    e.add_argument("--phi-readout", choices=("circular", "linear"))
    e.add_argument("--eval-center", choices=("center", "random"))
    e.add_argument("--limit-eval", type=int)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    _add_common(g)
    g.add_argument("--only", help="substring filter for check names")
    g.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("trace", help="export one image's saccade trace")
    _add_common(r)
    _add_data(r)
    r.add_argument("--checkpoint")
    r.add_argument("--split", choices=("train", "test"))
    r.add_argument("--index", type=int, help="image index within the split")
    r.add_argument("--saccades", type=int)
    r.add_argument("--patch-size", type=int)
    r.add_argument("--r-min", type=float)
    r.add_argument("--phi-readout", choices=("circular", "linear"))
    r.add_argument("--eval-center", choices=("center", "random"))
    r.set_defaults(func=cmd_trace)

    w = sub.add_parser("warp", help="log-polar warp of a PPM image")
    _add_common(w)
    w.add_argument("input", help="P5/P6 netpbm file")
    w.add_argument("cx", type=float, help="fixation x (pixels, 0 = left)")
    w.add_argument("cy", type=float, help="fixation y (pixels, 0 = top)")
    w.add_argument("--patch-size", type=int)
    w.add_argument("--r-min", type=float)
    w.add_argument("--output")
    w.set_defaults(func=cmd_warp)

    return parser


def _setup_threads(args, file_cfg: dict) -> None:
    """Pin BLAS pools before numpy's first import."""
    det = getattr(args, "deterministic", None)
    if det is None and "deterministic" in file_cfg:
        det = _parse_bool(str(file_cfg["deterministic"]))
    threads = getattr(args, "threads", None)
    if threads is None and "threads" in file_cfg:
        threads = int(file_cfg["threads"])
    if det:
        threads = 1
    if threads and threads > 0:
        for var in _THREAD_VARS:
            os.environ[var] = str(threads)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_cfg = parse_config_file(args.config) if args.config else {}
        _setup_threads(args, file_cfg)
        return args.func(args, file_cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # keep CLI failures diagnosable without tracebacks
        from . import data, model, ppm, training

        known = (data.DataError, model.CheckpointError, ppm.PpmError,
                 training.TrainingDivergedError, ValueError)
        if isinstance(e, known):
            print(f"error: {e}", file=sys.stderr)
            return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
