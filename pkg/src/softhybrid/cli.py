"""Command-line entry point.

Run-class commands (collect, run, matrix, sweep, ablate, baseline, plot) require
``--seed``. Every error ends the process with a nonzero status and one JSON
line on stderr of the form ``{"error": <type>, "message": <text>}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import dataset, harness, lstm
from .harness import ConfigError, ExperimentConfig

_CONFIG_FLAGS = {
    "plant": str, "controller": str, "weight": float, "trajectory": str, "step_count": int,
    "control_period": float, "trials": int, "output_dir": str, "weights_path": str,
}


class CliError(Exception):
    pass


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override its fields")
    for name, typ in _CONFIG_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--schedule", default=None,
                   help='weight schedule as JSON, e.g. "[[300, 1.0]]"')


def _seed_flag(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--seed", type=int, required=required, default=None if required else 0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softhybrid", description="Hybrid soft-robot controller experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="record a random-excitation dataset")
    p.add_argument("--plant", default="nominal")
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--max-delta", type=float, default=0.1)
    p.add_argument("--control-period", type=float, default=harness.DEFAULT_CONTROL_PERIOD)
    p.add_argument("--out", required=True)
    _seed_flag(p)

    p = sub.add_parser("train", help="fit the LSTM inverse model")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", default="4-10-128-0.1", help="layers-history-hidden-dropout")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--out", required=True)
    _seed_flag(p, required=False)

    p = sub.add_parser("eval", help="test-split error of trained weights")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--part", default="test", choices=("train", "val", "test"))

    for name, text in (("run", "run one condition"), ("matrix", "interchangeability matrix"),
                       ("sweep", "frequency and velocity adaptation sweep"), ("ablate", "kinematics-only ablation"),
                       ("plot", "run one condition and draw it")):
        p = sub.add_parser(name, help=text)
        _add_config_flags(p)
        _seed_flag(p)
        if name == "plot":
            p.add_argument("--data", help="dataset whose positions are drawn as the sample cloud")
        if name == "ablate":
            p.add_argument("--family", default="beta", choices=("nominal", "alpha", "beta"))

    p = sub.add_parser("baseline", help="25-robot comparison against the model-based controller")
    p.add_argument("--output-dir", default="runs")
    p.add_argument("--spec", default="2-10-32-0.1")
    _seed_flag(p)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = {k: getattr(args, k) for k in _CONFIG_FLAGS if getattr(args, k, None) is not None}
    if getattr(args, "schedule", None) is not None:
        try:
            overrides["schedule"] = tuple(tuple(p) for p in json.loads(args.schedule))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"bad --schedule: {exc}") from None
    overrides["seed"] = args.seed
    return replace(cfg, **overrides)


def _out_dir(cfg_or_path) -> Path:
    out = Path(cfg_or_path.output_dir if isinstance(cfg_or_path, ExperimentConfig) else cfg_or_path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def cmd_collect(args) -> None:
    params = harness.plant_from_spec(args.plant)
    ds = dataset.excite(params, args.samples, args.max_delta, args.seed, args.control_period, args.plant)
    dataset.save(ds, args.out)
    _emit({"records": len(ds), "out": args.out})


def cmd_train(args) -> None:
    ds = dataset.load(args.data)
    spec = lstm.LstmSpec.parse(args.spec, dim=ds.dim)
    weights, report = lstm.train(ds, spec, lstm.TrainConfig(max_epochs=args.epochs, patience=args.patience,
                                                            seed=args.seed))
    lstm.save_weights(weights, args.out)
    _emit({"spec": spec.label, "best_epoch": report.best_epoch, "epochs_run": report.epochs_run,
           "test_error": lstm.evaluate(weights, ds), "out": args.out})


def cmd_eval(args) -> None:
    ds = dataset.load(args.data)
    weights = lstm.load_weights(args.weights)
    _emit({"part": args.part, "error": lstm.evaluate(weights, ds, args.part)})


def cmd_run(args) -> None:
    cfg = resolve_config(args)
    logs, metric = harness.run_rollout(cfg)
    out = _out_dir(cfg)
    paths = harness.write_logs({f"run-{cfg.digest()}": logs}, out)
    _emit({"mean": metric.mean_error, "std": metric.std_error, "max": metric.max_error,
           "files": [str(p) for p in paths]})


def _report_cmd(args, runner, name: str) -> None:
    cfg = resolve_config(args)
    rep = runner(cfg)
    out = _out_dir(cfg)
    path = out / f"{name}-{cfg.digest()}.csv"
    rep.to_csv(path)
    _emit({"rows": rep.rows, "report": str(path)})


def cmd_matrix(args) -> None:
    _report_cmd(args, harness.run_interchangeability_matrix, "matrix")


def cmd_sweep(args) -> None:
    _report_cmd(args, harness.run_adaptation_sweep, "sweep")


def cmd_ablate(args) -> None:
    _report_cmd(args, lambda cfg: harness.run_ablation(cfg, family=args.family), "ablation")


def cmd_plot(args) -> None:
    cfg = resolve_config(args)
    logs, _ = harness.run_rollout(cfg)
    cloud = dataset.load(args.data).positions if args.data else None
    paths = harness.emit_plots({f"{cfg.plant.replace(':', '_')}-{cfg.controller}-{cfg.trajectory}": logs},
                               _out_dir(cfg), cloud)
    _emit({"files": [str(p) for p in paths]})


def cmd_baseline(args) -> None:
    rep, grid = harness.run_baseline_comparison(seed=args.seed, lstm_spec=args.spec)
    out = _out_dir(args.output_dir)
    path = out / f"baseline-seed{args.seed}.csv"
    grid.to_csv(path)
    wins, total = grid.off_center_wins()
    _emit({"cc_aggregate": grid.cc_aggregate, "hybrid_aggregate": grid.hybrid_aggregate,
           "gain_i": grid.gain_i, "hybrid_wins_off_center": wins, "off_center": total, "report": str(path)})


COMMANDS = {"collect": cmd_collect, "train": cmd_train, "eval": cmd_eval, "run": cmd_run,
            "matrix": cmd_matrix, "sweep": cmd_sweep, "ablate": cmd_ablate, "plot": cmd_plot,
            "baseline": cmd_baseline}


def _fail(exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _fail(CliError("invalid command line"), 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError, FloatingPointError, lstm.WeightFileError) as exc:
        return _fail(exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
