"""Command-line entry point: gradient checks, training, ablations, attention export.

Config precedence is flags over config-file keys over built-in defaults.
Exit codes: 0 success, 1 a computation ran and failed its check (gradient
failure, divergence, corrupt artifact), 2 unusable arguments or config.
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gradsuite
from . import train as training
from .checkpoint import load_checkpoint, save_checkpoint
from .data import make_dataset, square_centers, N_CLASSES
from .errors import ArgumentError, DivergenceError
from .network import FUSION_MODES, backbone_forward, spatial_attention_map
from .tensor import bilinear_resize_2d

DEFAULT_SEED = 12345

# Per-command key sets; every key doubles as a config-file key and (with
# dashes) a command-line flag. Unknown config keys are rejected.
_TRAIN_KEYS = {
    "seed": DEFAULT_SEED,
    "out": None,
    "epochs": 30,
    "batch": 16,
    "lr": 0.01,
    "fusion": "concat_t",
    "train_size": 2000,
    "val_size": 400,
}
SCHEMAS = {
    "gradcheck": {"seed": 0, "out": None, "ops": None},
    "train": {**_TRAIN_KEYS, "direction": "bi"},
    "ablate": {**_TRAIN_KEYS, "seeds": 3},
    "attention": {"seed": DEFAULT_SEED, "out": None, "checkpoint": None, "clip_index": 0},
}
_TYPES = {
    "seed": int,
    "epochs": int,
    "batch": int,
    "train_size": int,
    "val_size": int,
    "seeds": int,
    "clip_index": int,
    "lr": float,
    "out": str,
    "ops": str,
    "fusion": str,
    "direction": str,
    "checkpoint": str,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cidc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, help="base RNG seed")
        p.add_argument("--out", help="output directory (required, flag or config key)")
        p.add_argument("--config", help="plain key=value config file")

    p = sub.add_parser("gradcheck", help="run gradient checks and write a report CSV")
    common(p)
    p.add_argument("--ops", help="comma-separated op names (default: every op + model)")

    def train_flags(p):
        common(p)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--fusion", choices=FUSION_MODES)
        p.add_argument("--train-size", type=int, dest="train_size")
        p.add_argument("--val-size", type=int, dest="val_size")

    p = sub.add_parser("train", help="train one model; write history.csv and model.ckpt")
    train_flags(p)
    p.add_argument("--direction", choices=training.DIRECTIONS)

    p = sub.add_parser("ablate", help="train all temporal variants over several seeds")
    train_flags(p)
    p.add_argument("--seeds", type=int, help="number of seeds (consecutive from --seed)")

    p = sub.add_parser("attention", help="export attention maps for one synthetic clip")
    common(p)
    p.add_argument("--checkpoint", help="trained model file")
    p.add_argument("--clip-index", type=int, dest="clip_index")
    return parser


def parse_config_file(path: str) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ArgumentError(f"cannot read config file: {exc}") from exc
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ArgumentError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        values[key.strip()] = value.strip()
    return values


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, config-file keys, and explicit flags for one command."""
    schema = SCHEMAS[args.command]
    merged = dict(schema)
    if args.config:
        for key, raw in parse_config_file(args.config).items():
            if key not in schema:
                raise ArgumentError(f"unknown config key {key!r} for {args.command}")
            try:
                merged[key] = _TYPES[key](raw)
            except ValueError as exc:
                raise ArgumentError(f"config key {key}: {exc}") from exc
    for key in schema:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if merged.get("fusion") is not None and merged["fusion"] not in FUSION_MODES:
        raise ArgumentError(f"fusion must be one of {FUSION_MODES}")
    if merged.get("direction") is not None and merged["direction"] not in training.DIRECTIONS:
        raise ArgumentError(f"direction must be one of {training.DIRECTIONS}")
    if merged["out"] is None:
        raise ArgumentError("an output directory is required (--out or config key out=)")
    return merged


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_pgm(path: Path, image: np.ndarray) -> None:
    """Binary 8-bit PGM; input values are clamped from [0, 1]."""
    gray = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def cmd_gradcheck(cfg: dict) -> int:
    names = None
    if cfg["ops"]:
        names = [n.strip() for n in cfg["ops"].split(",") if n.strip()]
        if not names:
            raise ArgumentError("--ops was given but names are empty")
    try:
        rows = gradsuite.run_suite(names, base_seed=cfg["seed"])
    except ValueError as exc:
        raise ArgumentError(str(exc)) from exc
    out = _out_dir(cfg)
    _write_csv(
        out / "gradcheck.csv",
        ["op", "seeds", "max_rel_error", "tolerance", "passed", "worst_seed", "worst_input", "worst_index"],
        [
            [r.op, r.seeds, repr(r.max_rel_error), repr(r.tolerance), int(r.passed), r.worst_seed, r.worst_input, r.worst_index]
            for r in rows
        ],
    )
    for r in rows:
        state = "PASS" if r.passed else "FAIL"
        print(f"{r.op:24s} seeds={r.seeds:3d} max_rel={r.max_rel_error:.3e} tol={r.tolerance:.0e} {state}")
    failed = [r for r in rows if not r.passed]
    if failed:
        worst = max(failed, key=lambda r: r.max_rel_error / r.tolerance)
        print(
            f"gradcheck: FAIL {len(failed)}/{len(rows)} ops;"
            f" worst {worst.op} (input {worst.worst_input}, element {worst.worst_index})"
        )
        return 1
    print(f"gradcheck: PASS ({len(rows)} ops)")
    return 0


def _train_config(cfg: dict, direction: str) -> training.TrainConfig:
    return training.TrainConfig(
        seed=cfg["seed"],
        epochs=cfg["epochs"],
        batch=cfg["batch"],
        train_size=cfg["train_size"],
        val_size=cfg["val_size"],
        lr=cfg["lr"],
        fusion=cfg["fusion"],
        direction=direction,
    )


def cmd_train(cfg: dict) -> int:
    out = _out_dir(cfg)

    def report(stats):
        print(
            f"epoch {stats.epoch:3d} loss {stats.loss:.4f}"
            f" train {stats.train_acc:.4f} val {stats.val_acc:.4f}",
            flush=True,
        )

    result = training.train(_train_config(cfg, cfg["direction"]), report)
    (out / "history.csv").write_text(training.history_csv(result.history), encoding="utf-8")
    save_checkpoint(out / "model.ckpt", result.model)
    print(f"final val accuracy {result.metrics['overall']:.4f}")
    return 0


_AGG_METRICS = ("overall", "pair_01", "pair_23", "axis")
_RUN_COLUMNS = (
    "variant", "overall", "class0", "class1", "class2", "class3", "pair_01", "pair_23", "axis",
)


def cmd_ablate(cfg: dict) -> int:
    if cfg["seeds"] < 1:
        raise ArgumentError("--seeds must be positive")
    out = _out_dir(cfg)
    run_rows = []
    per_variant: dict[str, list[dict]] = {v: [] for v in training.ABLATION_VARIANTS}
    for i in range(cfg["seeds"]):
        seed = cfg["seed"] + i

        def report(variant, stats, seed=seed):
            print(
                f"[seed {seed} {variant:4s}] epoch {stats.epoch:3d}"
                f" loss {stats.loss:.4f} val {stats.val_acc:.4f}",
                flush=True,
            )

        base = replace(_train_config(cfg, "bi"), seed=seed)
        results = training.ablate_directions(base, report)
        for row in training.ablation_table(results):
            per_variant[row["variant"]].append(row)
            run_rows.append([seed] + [row[c] if c == "variant" else repr(row[c]) for c in _RUN_COLUMNS])
    _write_csv(out / "ablation_runs.csv", ["seed", *_RUN_COLUMNS], run_rows)

    agg_header = ["variant", "seeds"]
    for m in _AGG_METRICS:
        agg_header += [f"{m}_mean", f"{m}_min", f"{m}_max"]
    agg_rows = []
    print(f"{'variant':8s} " + " ".join(f"{m:>20s}" for m in _AGG_METRICS))
    for variant in training.ABLATION_VARIANTS:
        rows = per_variant[variant]
        record = [variant, len(rows)]
        cells = []
        for m in _AGG_METRICS:
            series = [r[m] for r in rows]
            mean = float(np.mean(series))
            lo, hi = float(min(series)), float(max(series))
            record += [repr(mean), repr(lo), repr(hi)]
            cells.append(f"{mean:.3f} [{lo:.3f},{hi:.3f}]")
        agg_rows.append(record)
        print(f"{variant:8s} " + " ".join(f"{c:>20s}" for c in cells))
    _write_csv(out / "ablation.csv", agg_header, agg_rows)
    return 0


def cmd_attention(cfg: dict) -> int:
    if not cfg["checkpoint"]:
        raise ArgumentError("a trained model is required (--checkpoint or config key)")
    if cfg["clip_index"] < 0:
        raise ArgumentError("--clip-index must be nonnegative")
    try:
        model = load_checkpoint(cfg["checkpoint"])
    except OSError as exc:
        raise ArgumentError(f"cannot read checkpoint: {exc}") from exc
    out = _out_dir(cfg)

    idx = cfg["clip_index"]
    count = ((idx // N_CLASSES) + 1) * N_CLASSES
    rng = np.random.default_rng(cfg["seed"])
    clips, labels = make_dataset(count, rng, model.in_t, model.in_size)
    clip, label = clips[idx], int(labels[idx])

    stages = backbone_forward(clip, model)
    gates = spatial_attention_map(stages[-1]).output  # (T, H, W) at stage resolution
    t_stage = gates.shape[0]
    # Frame decimation composes multiplicatively, so slice s taps this frame.
    stride = int(np.prod([s.temporal_stride for s in model.stages]))
    centers = square_centers(label, model.in_t, model.in_size)

    gate_rows, summary_rows = [], []
    for s in range(t_stage):
        up = bilinear_resize_2d(gates[s], model.in_size, model.in_size)
        write_pgm(out / f"att_{s:02d}.pgm", up)
        for (i, j), v in np.ndenumerate(gates[s]):
            gate_rows.append([s, i, j, repr(float(v))])
        row, col = np.unravel_index(int(np.argmax(up)), up.shape)
        frame = s * stride
        c_row, c_col = centers[frame]
        dist = float(np.hypot(row - c_row, col - c_col))
        summary_rows.append(
            [s, frame, row, col, repr(float(c_row)), repr(float(c_col)), repr(dist)]
        )
        print(f"slice {s} (frame {frame}): argmax ({row},{col}), square center ({c_row:.1f},{c_col:.1f}), distance {dist:.2f}")
    _write_csv(out / "gates.csv", ["slice", "row", "col", "gate"], gate_rows)
    _write_csv(
        out / "summary.csv",
        ["slice", "frame", "argmax_row", "argmax_col", "center_row", "center_col", "distance"],
        summary_rows,
    )
    print(f"wrote {t_stage} attention maps for a class-{label} clip to {out}")
    return 0


COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "attention": cmd_attention,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
