"""Batch-experiment command line.

Verbs: gen-data, gradcheck, train, eval, compare, sweep-tau, fraction.
Exit codes: 0 success, 1 invariant or acceptance failure, 2 config error.
Every config-driven command echoes the effective configuration into the
output directory; re-running from that echo reproduces the outputs byte for
byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, default_config, load_config
from .datamodel import write_dataset
from .errors import ConfigError, DomainError, OracleError, ParseError, TrainingDivergence
from .experiments import (
    evaluate_trained,
    format_csv,
    get_dataset,
    run_compare,
    run_fraction,
    run_sweep_tau,
    run_training,
    training_log_csv,
)
from .losses import LOGIT_LOSS_IDS, check_loss_id
from .training import load_checkpoint, save_checkpoint
from .verification import check_gradients, write_reports


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "loss", None):
        cfg.override("loss.id", args.loss)
    return cfg


def _out_dir(args, cfg: ExperimentConfig | None = None) -> Path:
    out = args.out or (cfg["run.out"] if cfg else "runs")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(cfg: ExperimentConfig, out: Path) -> None:
    (out / "config_echo.txt").write_text(cfg.render(), encoding="utf-8")


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    if args.seed is not None:
        cfg.override("data.seed", args.seed)
    out = _out_dir(args, cfg)
    dataset = get_dataset(cfg)
    path = out / "dataset.txt"
    write_dataset(dataset, path)
    _echo_config(cfg, out)
    print(path)
    return 0


def cmd_gradcheck(args) -> int:
    check_loss_id(args.loss)
    tol = args.tol
    if tol is None:
        tol = 1e-6 if args.loss in LOGIT_LOSS_IDS else 1e-5
    reports = check_gradients(args.loss, args.trials, tol, args.seed)
    for r in reports:
        print(r.to_json())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_reports(reports, out / f"gradcheck_{args.loss}.jsonl")
    return 0 if all(r.passed for r in reports) else 1


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    dataset = get_dataset(cfg)
    result = run_training(dataset, cfg, seed=args.seed)
    save_checkpoint(result.model, out / "checkpoint.json", dataset_meta=dataset.meta)
    (out / "training_log.csv").write_text(training_log_csv(result.log), encoding="utf-8")
    _echo_config(cfg, out)
    print(out / "checkpoint.json")
    return 0


def cmd_eval(args) -> int:
    from .datamodel import read_dataset

    model, _ = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.dataset)
    cfg = _load_cfg(args)
    report, details = evaluate_trained(model, dataset, cfg)
    out = _out_dir(args, cfg)
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "eval_details.json").write_text(
        json.dumps(details, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(report.to_json())
    return 0


_COMPARE_HEADER = ["loss"] + [
    f"{m}_{s}"
    for m in ("micro_f1", "macro_f1", "hamming_x1000", "map", "align", "uniform")
    for s in ("mean", "std")
]


def cmd_compare(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    dataset = get_dataset(cfg)
    rows = run_compare(dataset, cfg)
    csv_text = format_csv(_COMPARE_HEADER, rows)
    (out / "compare.csv").write_text(csv_text, encoding="utf-8")
    _echo_config(cfg, out)
    print(csv_text, end="")
    return 0


def cmd_sweep_tau(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    dataset = get_dataset(cfg)
    rows = run_sweep_tau(dataset, cfg)
    csv_text = format_csv(["tau", "prr"], rows)
    (out / "sweep_tau.csv").write_text(csv_text, encoding="utf-8")
    _echo_config(cfg, out)
    print(csv_text, end="")
    return 0


def cmd_fraction(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    dataset = get_dataset(cfg)
    rows = run_fraction(dataset, cfg)
    csv_text = format_csv(["fraction", "loss", "macro_f1"], rows)
    (out / "fraction.csv").write_text(csv_text, encoding="utf-8")
    _echo_config(cfg, out)
    print(csv_text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlclab",
        description="Multi-label contrastive loss laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, loss_flag=True):
        p.add_argument("--config", help="config file of 'key = value' lines")
        p.add_argument("--out", help="output directory (default: run.out)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        if loss_flag:
            p.add_argument("--loss", help="loss id override")

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--loss", required=True, help="loss id to check")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=None,
                   help="max relative error (default 1e-5, logit losses 1e-6)")
    p.add_argument("--out", help="also write a JSON-lines report here")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train a model per the config")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    common(p, loss_flag=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="loss comparison table over seeds")
    common(p, loss_flag=False)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep-tau", help="PRR of a trained model across temperatures")
    common(p)
    p.set_defaults(func=cmd_sweep_tau)

    p = sub.add_parser("fraction", help="macro-F1 under shrinking train splits")
    common(p, loss_flag=False)
    p.set_defaults(func=cmd_fraction)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, OracleError, TrainingDivergence) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
