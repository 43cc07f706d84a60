"""Command-line entry point: ``cfdp {generate,fit,evaluate,rankdiff,demo-counterexample}``.

Exit codes: 0 success, 1 config or validation error, 2 I/O error.
"""
from __future__ import annotations

import argparse
from dataclasses import asdict
import json
import sys
from pathlib import Path

from .counterexample import render, verify_counterexample
from .estimators import Predictor
from .harness import (
    ConfigError,
    ExperimentConfig,
    dump_report,
    evaluate,
    fit_all,
    load_dataset,
    load_model,
    rankdiff,
    render_tables,
)
from .scm import ModelError, sample_dataset, split_indices

EXIT_CONFIG = 1
EXIT_IO = 2


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config (or a report.json, whose echoed config is reused)")
    p.add_argument("--model", help="model JSON path, or a shipped name: law_school, credit_default, healthcare")
    p.add_argument("--data", help="dataset CSV path")
    p.add_argument("--n", type=int, help="rows to sample from --model")
    p.add_argument("--seed", type=int, help="seed for sampling and the train/test split")
    p.add_argument("--estimators", help="comma list of level1,level2,level3,listing1,listing2,full,dp_wrapped:<base>")
    p.add_argument("--train-frac", type=float)
    p.add_argument("--epsilon", type=float, action="append", help="ACF threshold (repeatable)")
    p.add_argument("--group-col")
    p.add_argument("--outcome-col")
    p.add_argument("--listing-input", choices=["label", "full"], help="what Listing 1/2 transform")


def _config_from_args(args) -> ExperimentConfig:
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            try:
                base = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{args.config}: invalid JSON ({e})") from e
        base = dict(base.get("config", base))
    overrides = {
        "model": args.model,
        "data": args.data,
        "n": args.n,
        "seed": args.seed,
        "estimators": args.estimators.split(",") if args.estimators else None,
        "train_frac": args.train_frac,
        "epsilons": args.epsilon,
        "group_col": args.group_col,
        "outcome_col": args.outcome_col,
        "listing_input": args.listing_input,
        "out": getattr(args, "out", None),
        "tables": getattr(args, "tables", None),
    }
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    if args.model is not None:
        base.pop("data", None)
    if args.data is not None:
        base.pop("model", None)
    try:
        return ExperimentConfig.from_dict(base)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_generate(args) -> int:
    if args.n is None or args.n <= 0:
        raise ConfigError("--n must be a positive integer")
    data = sample_dataset(load_model(args.model), args.n, args.seed)
    _write(args.out, data.to_csv())
    return 0


def cmd_fit(args) -> int:
    config = _config_from_args(args)
    data = load_dataset(config)
    train_idx, _ = split_indices(data.n, config.train_frac, config.seed)
    fitted = fit_all(config, data.take(train_idx))
    payload = {"config": asdict(config), "predictors": {}, "errors": {}}
    for name, pred in fitted.items():
        if isinstance(pred, Exception):
            payload["errors"][name] = f"{type(pred).__name__}: {pred}"
        else:
            payload["predictors"][name] = pred.to_dict()
    _write(args.out, json.dumps(payload, indent=2) + "\n")
    return 0


def cmd_evaluate(args) -> int:
    config = _config_from_args(args)
    predictors = None
    if args.predictors:
        with open(args.predictors, encoding="utf-8") as f:
            stored = json.load(f)["predictors"]
        predictors = {name: Predictor.from_dict(d) for name, d in stored.items()}
    report = evaluate(config, predictors)
    _write(config.out or "report.json", dump_report(report))
    _write(config.tables or "tables.md", render_tables(report))
    return 0


def cmd_rankdiff(args) -> int:
    config = _config_from_args(args)
    seed = args.sample_seed if args.sample_seed is not None else config.seed
    _write(args.out, rankdiff(config, args.group, args.sample_size, seed))
    return 0


def cmd_demo_counterexample(args) -> int:
    report = verify_counterexample()
    if args.json:
        sys.stdout.write(json.dumps(report.to_dict(), indent=2) + "\n")
    else:
        sys.stdout.write(render(report) + "\n")
    ok = report.cf_holds and report.independence_holds and not report.order_preserved
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfdp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a dataset CSV from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit estimators on the train split and store them as JSON")
    _add_config_flags(p)
    p.add_argument("--out", help="predictors JSON path (stdout if omitted)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="fit and score estimators; write report.json and tables.md")
    _add_config_flags(p)
    p.add_argument("--predictors", help="predictors JSON from `cfdp fit` (skips fitting)")
    p.add_argument("--out", help="report JSON path (default report.json)")
    p.add_argument("--tables", help="markdown tables path (default tables.md)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rankdiff", help="rank trajectories of sampled individuals across estimators")
    _add_config_flags(p)
    p.add_argument("--group", required=True, help="group key, e.g. 'race=1;sex=1'")
    p.add_argument("--sample-size", type=int, default=40)
    p.add_argument("--sample-seed", type=int)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_rankdiff)

    p = sub.add_parser("demo-counterexample", help="print the two-person toy table and its three verdicts")
    p.add_argument("--json", action="store_true", help="print only the JSON verdicts")
    p.set_defaults(func=cmd_demo_counterexample)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModelError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
