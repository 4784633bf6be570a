"""Batch command-line surface: train, eval, ablate, importance,
validate-features, report.

Every run resolves its configuration from defaults, then an optional JSON
config file with flat dotted keys, then explicit flags, and writes the
fully-resolved config (plus the tool version) next to its outputs.
Rerunning from that config reproduces every output file byte for byte;
wall-clock timing goes to stderr only.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__, analysis
from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import DrexError
from .features import read_features, validate_manifest
from .model import FusionConfig
from .training import TrainConfig, evaluate, predict_manifest, render_report, train

_MODEL_KEYS = {
    "model.dino_dim": int,
    "model.resnet_dim": int,
    "model.proj_dim": int,
    "model.attn_hidden": int,
    "model.head_dims": list,
    "model.dropout_p": float,
    "model.tau_init": float,
    "model.alpha_init": float,
    "model.seed": int,
}
_TRAIN_KEYS = {
    "train.epochs": int,
    "train.batch_size": int,
    "train.max_lr": float,
    "train.ema_decay": float,
    "train.huber_delta": float,
    "train.seed": int,
    "train.pct_start": float,
    "train.div_factor": float,
    "train.final_div_factor": float,
    "train.beta1": float,
    "train.beta2": float,
    "train.adam_eps": float,
    "train.weight_decay": float,
    "train.eval_with_ema": bool,
}
_PATH_KEYS = {
    "paths.features": str,
    "paths.val": str,
    "paths.ckpt": str,
    "paths.out": str,
}
_RUN_KEYS = {
    "run.threads": int,
    "run.n_perm": int,
    "run.alpha": float,
    "run.mode": str,
}
KNOWN_KEYS = {**_MODEL_KEYS, **_TRAIN_KEYS, **_PATH_KEYS, **_RUN_KEYS}


class UsageError(Exception):
    """Bad flags or config keys; exits with the usage status code."""


def _load_config_file(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError("config file must hold a JSON object of dotted keys")
    out = {}
    for key, value in raw.items():
        if key not in KNOWN_KEYS:
            raise UsageError(f"unknown config key {key!r}")
        want = KNOWN_KEYS[key]
        if want is bool:
            if not isinstance(value, bool):
                raise UsageError(f"config key {key!r} must be a boolean")
        elif want is list:
            if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
                raise UsageError(f"config key {key!r} must be a list of integers")
        elif want is int:
            if not isinstance(value, int) or isinstance(value, bool):
                raise UsageError(f"config key {key!r} must be an integer")
        elif want is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise UsageError(f"config key {key!r} must be a number")
            value = float(value)
        elif want is str and not isinstance(value, str):
            raise UsageError(f"config key {key!r} must be a string")
        out[key] = value
    return out


def _resolve(args, command: str) -> dict:
    """defaults <- config file <- explicit flags; returns the flat key map."""
    cfg: dict = {}
    model_defaults = FusionConfig()
    train_defaults = TrainConfig()
    for name in ("dino_dim", "resnet_dim", "proj_dim", "attn_hidden", "dropout_p",
                 "tau_init", "alpha_init", "seed"):
        cfg[f"model.{name}"] = getattr(model_defaults, name)
    cfg["model.head_dims"] = list(model_defaults.head_dims)
    for name in ("epochs", "batch_size", "max_lr", "ema_decay", "huber_delta", "seed",
                 "pct_start", "div_factor", "final_div_factor", "beta1", "beta2",
                 "adam_eps", "weight_decay", "eval_with_ema"):
        cfg[f"train.{name}"] = getattr(train_defaults, name)
    for key in _PATH_KEYS:
        cfg[key] = None
    cfg.update({"run.threads": None, "run.n_perm": analysis.DEFAULT_N_PERM,
                "run.alpha": 0.01, "run.mode": None})

    if getattr(args, "config", None):
        cfg.update(_load_config_file(args.config))

    flag_map = {
        "features": "paths.features",
        "val": "paths.val",
        "ckpt": "paths.ckpt",
        "out": "paths.out",
        "threads": "run.threads",
        "n_perm": "run.n_perm",
        "alpha": "run.alpha",
        "mode": "run.mode",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "seed", None) is not None:
        cfg["model.seed"] = args.seed
        cfg["train.seed"] = args.seed
    if getattr(args, "no_ema_eval", False):
        cfg["train.eval_with_ema"] = False

    cfg["command"] = command
    cfg["tool"] = "drex"
    cfg["version"] = __version__
    return cfg


def _model_config(cfg: dict, manifest=None) -> FusionConfig:
    dino_dim = cfg["model.dino_dim"]
    resnet_dim = cfg["model.resnet_dim"]
    if manifest is not None:
        # Feature files carry their own geometry; trust it unless the
        # config explicitly disagrees (then fail fast in the trainer).
        if dino_dim == FusionConfig().dino_dim and manifest.dino_dim != dino_dim:
            dino_dim = manifest.dino_dim
        if resnet_dim == FusionConfig().resnet_dim and manifest.resnet_dim != resnet_dim:
            resnet_dim = manifest.resnet_dim
    return FusionConfig(
        dino_dim=dino_dim,
        resnet_dim=resnet_dim,
        proj_dim=cfg["model.proj_dim"],
        attn_hidden=cfg["model.attn_hidden"],
        head_dims=tuple(cfg["model.head_dims"]),
        dropout_p=cfg["model.dropout_p"],
        tau_init=cfg["model.tau_init"],
        alpha_init=cfg["model.alpha_init"],
        seed=cfg["model.seed"],
    )


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        max_lr=cfg["train.max_lr"],
        ema_decay=cfg["train.ema_decay"],
        huber_delta=cfg["train.huber_delta"],
        seed=cfg["train.seed"],
        pct_start=cfg["train.pct_start"],
        div_factor=cfg["train.div_factor"],
        final_div_factor=cfg["train.final_div_factor"],
        beta1=cfg["train.beta1"],
        beta2=cfg["train.beta2"],
        adam_eps=cfg["train.adam_eps"],
        weight_decay=cfg["train.weight_decay"],
        eval_with_ema=cfg["train.eval_with_ema"],
    )


def _out_paths(cfg: dict, default_csv: str | None = None) -> tuple[Path, Path | None]:
    """(output directory, csv path) honoring a --out that names a .csv file."""
    out = cfg.get("paths.out")
    if not out:
        raise UsageError("--out is required for this command")
    out_path = Path(out)
    if out_path.suffix == ".csv":
        out_dir = out_path.parent if str(out_path.parent) else Path(".")
        out_dir.mkdir(parents=True, exist_ok=True)
        return out_dir, out_path
    out_path.mkdir(parents=True, exist_ok=True)
    return out_path, (out_path / default_csv if default_csv else None)


def _write_resolved(cfg: dict, out_dir: Path) -> None:
    (out_dir / "resolved_config.json").write_text(
        json.dumps(cfg, sort_keys=True, indent=2) + "\n"
    )


def _use_ema_arg(args) -> bool | None:
    return False if getattr(args, "no_ema_eval", False) else None


def _require(cfg: dict, key: str, flag: str) -> str:
    value = cfg.get(key)
    if not value:
        raise UsageError(f"{flag} is required for this command")
    return value


def cmd_train(args) -> int:
    cfg = _resolve(args, "train")
    train_path = _require(cfg, "paths.features", "--features")
    val_path = _require(cfg, "paths.val", "--val")
    out_dir, _ = _out_paths(cfg)
    train_set = read_features(train_path)
    val_set = read_features(val_path)
    model_config = _model_config(cfg, train_set)
    cfg["model.dino_dim"] = model_config.dino_dim
    cfg["model.resnet_dim"] = model_config.resnet_dim
    checkpoint, report = train(model_config, _train_config(cfg), train_set, val_set)
    save_checkpoint(checkpoint, out_dir / "checkpoint.drxc")
    (out_dir / "train_report.txt").write_text(render_report(report))
    _write_resolved(cfg, out_dir)
    for i, secs in enumerate(report.epoch_seconds, start=1):
        print(f"epoch {i}: {secs:.2f}s", file=sys.stderr)
    if report.val_metrics is not None:
        print(report.val_metrics.format(), end="")
    print(f"checkpoint: {out_dir / 'checkpoint.drxc'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args, "eval")
    ckpt_path = _require(cfg, "paths.ckpt", "--ckpt")
    feat_path = _require(cfg, "paths.features", "--features")
    out_dir, _ = _out_paths(cfg)
    checkpoint = load_checkpoint(ckpt_path)
    eval_set = read_features(feat_path)
    use_ema = _use_ema_arg(args)
    metrics = evaluate(checkpoint, eval_set, use_ema=use_ema)
    preds, w_d = predict_manifest(checkpoint, eval_set, use_ema=use_ema)
    scores = [r.score for r in eval_set.records]
    with open(out_dir / "predictions.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "score", "prediction", "w_d"])
        for rec, s, p, w in zip(eval_set.records, scores, preds, w_d):
            writer.writerow([rec.id, "" if s is None else repr(s), repr(float(p)), repr(float(w))])
    (out_dir / "metrics.txt").write_text(metrics.format())
    _write_resolved(cfg, out_dir)
    print(metrics.format(), end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve(args, "ablate")
    mode = cfg.get("run.mode")
    if mode not in ("branch", "dino-dims", "resnet-blocks"):
        raise UsageError("--mode must be one of: branch, dino-dims, resnet-blocks")
    ckpt_path = _require(cfg, "paths.ckpt", "--ckpt")
    feat_path = _require(cfg, "paths.features", "--features")
    default_csv = {"branch": "branch_ablation.csv", "dino-dims": "dino_dims.csv",
                   "resnet-blocks": "resnet_blocks.csv"}[mode]
    out_dir, csv_path = _out_paths(cfg, default_csv)
    checkpoint = load_checkpoint(ckpt_path)
    eval_set = read_features(feat_path)
    kwargs = dict(
        n_perm=cfg["run.n_perm"],
        seed=cfg["model.seed"],
        use_ema=_use_ema_arg(args),
    )
    if mode == "branch":
        results = [
            analysis.ablate_branch(checkpoint, eval_set, b, **kwargs)
            for b in ("dino", "resnet")
        ]
    elif mode == "dino-dims":
        results = analysis.dino_dimension_sweep(
            checkpoint, eval_set, alpha=cfg["run.alpha"],
            threads=cfg["run.threads"], **kwargs,
        )
    else:
        results = analysis.resnet_block_sweep(
            checkpoint, eval_set, alpha=cfg["run.alpha"], **kwargs
        )
    analysis.write_ablation_csv(results, csv_path)
    report_path = out_dir / (Path(csv_path).stem + "_report.txt")
    report_path.write_text(analysis.render_ablation_report(results))
    _write_resolved(cfg, out_dir)
    print(analysis.render_ablation_report(results[: min(len(results), 8)]), end="")
    print(f"csv: {csv_path}")
    return 0


def cmd_importance(args) -> int:
    cfg = _resolve(args, "importance")
    ckpt_path = _require(cfg, "paths.ckpt", "--ckpt")
    feat_path = _require(cfg, "paths.features", "--features")
    out_dir, csv_path = _out_paths(cfg, "importance.csv")
    checkpoint = load_checkpoint(ckpt_path)
    eval_set = read_features(feat_path)
    profile = analysis.grad_importance(
        checkpoint, eval_set, seed=cfg["model.seed"], use_ema=_use_ema_arg(args)
    )
    analysis.write_importance_csv(profile, csv_path)
    (out_dir / "importance_report.txt").write_text(analysis.render_importance_report(profile))
    _write_resolved(cfg, out_dir)
    print(analysis.render_importance_report(profile), end="")
    return 0


def cmd_validate_features(args) -> int:
    manifest = read_features(args.path)
    violations = validate_manifest(manifest)
    for v in violations:
        print(str(v))
    print(f"{len(violations)} violations")
    return 0 if not violations else 1


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    if not run_dir.is_dir():
        raise UsageError(f"run directory not found: {run_dir}")
    resolved = run_dir / "resolved_config.json"
    if resolved.exists():
        print(f"== {resolved.name} ==")
        print(resolved.read_text(), end="")
    for txt in sorted(run_dir.glob("*.txt")):
        print(f"== {txt.name} ==")
        print(txt.read_text(), end="")
    for csv_file in sorted(run_dir.glob("*.csv")):
        with open(csv_file, newline="") as fh:
            rows = sum(1 for _ in fh)
        print(f"== {csv_file.name} == ({max(rows - 1, 0)} data rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drex",
        description="Train, evaluate, and analyze the fused-feature complexity regressor.",
    )
    parser.add_argument("--version", action="version", version=f"drex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, ckpt=False, features=True, val=False, out=True, analysis_flags=False):
        if features:
            p.add_argument("--features", help="DRXF feature file")
        if val:
            p.add_argument("--val", help="validation DRXF feature file")
        if ckpt:
            p.add_argument("--ckpt", help="checkpoint file")
        if out:
            p.add_argument("--out", help="output directory (or .csv path for ablate)")
        p.add_argument("--seed", type=int, help="master seed for init/shuffle/dropout")
        p.add_argument("--config", help="JSON config file with flat dotted keys")
        p.add_argument("--threads", type=int, help="worker cap (env DREX_THREADS as fallback)")
        p.add_argument("--no-ema-eval", action="store_true",
                       help="evaluate with raw weights instead of the EMA shadow")
        if analysis_flags:
            p.add_argument("--mode", choices=["branch", "dino-dims", "resnet-blocks"])
            p.add_argument("--n-perm", type=int, dest="n_perm",
                           help="permutations for significance tests")
            p.add_argument("--alpha", type=float, help="FDR level")

    p_train = sub.add_parser("train", help="train from precomputed features")
    common(p_train, val=True)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint against a feature file")
    common(p_eval, ckpt=True)
    p_eval.set_defaults(fn=cmd_eval)

    p_abl = sub.add_parser("ablate", help="branch / per-dimension / per-block ablations")
    common(p_abl, ckpt=True, analysis_flags=True)
    p_abl.set_defaults(fn=cmd_ablate)

    p_imp = sub.add_parser("importance", help="gradient-activation importance per dimension")
    common(p_imp, ckpt=True)
    p_imp.set_defaults(fn=cmd_importance)

    p_val = sub.add_parser("validate-features", help="check a DRXF file against its invariants")
    p_val.add_argument("path", help="DRXF feature file")
    p_val.set_defaults(fn=cmd_validate_features)

    p_rep = sub.add_parser("report", help="print the artifacts of a finished run")
    p_rep.add_argument("--run", required=True, help="run output directory")
    p_rep.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DrexError, OSError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
