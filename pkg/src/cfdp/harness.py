"""Config-driven experiment pipeline: data, fits, fairness report, rank trajectories."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import ESTIMATORS, FullLinear, Predictor, display_name, fit_estimator
from .metrics import acf_estimate, group_order_report, kruskal_wallis, rank_with_ties, rmse
from .scm import Dataset, StructuralModel, sample_dataset, split_indices, validate_model

SHIPPED_MODELS = ("law_school", "credit_default", "healthcare")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: str | None = None
    data: str | None = None
    n: int = 5000
    seed: int = 0
    estimators: list[str] = field(default_factory=lambda: list(ESTIMATORS))
    train_frac: float = 0.8
    epsilons: list[float] = field(default_factory=lambda: [0.0, 0.01, 0.1])
    group_col: str = "group"
    outcome_col: str = "y"
    listing_input: str = "label"
    out: str | None = None
    tables: str | None = None

    def __post_init__(self):
        if (self.model is None) == (self.data is None):
            raise ConfigError("exactly one of model or data must be given")
        if not 0 < self.train_frac < 1:
            raise ConfigError("train_frac must lie in (0, 1)")
        if self.model is not None and self.n <= 0:
            raise ConfigError("n must be positive")
        if not self.estimators:
            raise ConfigError("no estimators requested")
        if len(set(self.estimators)) != len(self.estimators):
            raise ConfigError("estimator list contains duplicates")
        for name in self.estimators:
            base = name.split(":", 1)[1] if name.startswith("dp_wrapped:") else name
            if base not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {name!r}")
        if self.listing_input not in ("label", "full"):
            raise ConfigError("listing_input must be 'label' or 'full'")
        if any(e < 0 for e in self.epsilons):
            raise ConfigError("epsilons must be >= 0")
        self.epsilons = [float(e) for e in self.epsilons]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if "config" in d and isinstance(d["config"], dict):
            d = d["config"]
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as f:
            try:
                return cls.from_dict(json.load(f))
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON ({e})") from e


def resolve_model_path(model: str):
    """Shipped model names (``law_school`` ...) resolve to bundled configs."""
    if model in SHIPPED_MODELS:
        return resources.files("cfdp") / "configs" / f"{model}.json"
    return Path(model)


def load_model(model: str) -> StructuralModel:
    path = resolve_model_path(model)
    text = path.read_text(encoding="utf-8")
    try:
        m = StructuralModel.from_dict(json.loads(text))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"{model}: invalid model file ({e})") from e
    result = validate_model(m)
    if not result.ok:
        raise ConfigError(f"{model}: " + "; ".join(str(v) for v in result.violations))
    return m


def load_dataset(config: ExperimentConfig) -> Dataset:
    if config.model is not None:
        data = sample_dataset(load_model(config.model), config.n, config.seed)
    else:
        try:
            data = Dataset.from_csv(config.data, config.group_col, config.outcome_col)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    if len(data.levels) < 2:
        raise ConfigError("fairness tests require >= 2 groups")
    return data


def _latent_rows(name: str, pred: Predictor, test: Dataset) -> dict:
    out = {}
    for key, values in pred.latent(test).items():
        if pred.kind == "Level3":
            label = f"{display_name(name)} Latent {key}"
        else:
            label = f"{display_name(name)} Latent Variable"
        out[label] = kruskal_wallis(values, test.groups).to_dict()
    return out


def evaluate_predictor(name: str, pred: Predictor, test: Dataset, epsilons) -> dict:
    yhat = pred.predict(test)
    entry = {
        "display_name": display_name(name),
        "kind": pred.kind,
        "kw_predictions": kruskal_wallis(yhat, test.groups).to_dict(),
        "kw_latent": _latent_rows(name, pred, test),
        "rmse": rmse(yhat, test.outcome),
        "acf": [acf_estimate(pred, test, e).to_dict() for e in epsilons],
        "order": group_order_report(test.outcome, yhat, test.groups).to_dict(),
    }
    if isinstance(pred, FullLinear):
        entry["group_effects"] = pred.group_effects
    if pred.kind in ("Listing1", "Listing2"):
        entry["transform"] = True
    return entry


def fit_all(config: ExperimentConfig, train: Dataset) -> dict[str, Predictor | Exception]:
    out: dict[str, Predictor | Exception] = {}
    for name in config.estimators:
        try:
            out[name] = fit_estimator(name, train, config.listing_input)
        except Exception as e:  # one failure must not void the comparison
            out[name] = e
    return out


def evaluate(config: ExperimentConfig, predictors: dict[str, Predictor] | None = None) -> dict:
    """Fit every requested estimator on the train split and score it on the test split."""
    data = load_dataset(config)
    train_idx, test_idx = split_indices(data.n, config.train_frac, config.seed)
    train, test = data.take(train_idx), data.take(test_idx)
    if predictors is None:
        fitted = fit_all(config, train)
    else:
        missing = [n for n in config.estimators if n not in predictors]
        if missing:
            raise ConfigError(f"no fitted predictor for {missing}")
        fitted = {n: predictors[n] for n in config.estimators}
    results = {}
    for name in config.estimators:
        pred = fitted[name]
        try:
            if isinstance(pred, Exception):
                raise pred
            results[name] = evaluate_predictor(name, pred, test, config.epsilons)
        except Exception as e:
            results[name] = {"display_name": display_name(name), "error": f"{type(e).__name__}: {e}"}

    def counts(d: Dataset) -> dict:
        return {a: int(np.sum(d.groups == a)) for a in d.levels}

    # output locations are not part of the experiment, so identical runs written
    # to different files still produce identical reports
    echo = {k: v for k, v in asdict(config).items() if k not in ("out", "tables")}
    return {
        "toolkit": {"name": "cfdp", "version": __version__},
        "config": echo,
        "dataset": {
            "source": config.model if config.model is not None else config.data,
            "rows": data.n,
            "train_rows": train.n,
            "test_rows": test.n,
            "features": list(data.feature_names),
            "outcome": data.outcome_name,
            "group_counts": counts(data),
            "test_group_counts": counts(test),
        },
        "metadata": {
            "latent_point_estimate": "posterior mean",
            "listing_input": config.listing_input,
            "order_baseline": "observed test labels",
            "kw_one_sided": "a small p is evidence against demographic parity; a large p is not proof of it",
        },
        "estimators": results,
    }


def sig3(x: float) -> str:
    """Three significant figures, the reporting convention of the tables."""
    return f"{x:.3g}"


def render_tables(report: dict) -> str:
    lines = ["## Kruskal-Wallis H test", "", "| Variable | H Statistic | p-value |", "|---|---|---|"]
    rows = [(label, kw) for e in report["estimators"].values() if "error" not in e for label, kw in e["kw_latent"].items()]
    rows += [(f"{e['display_name']} Predictions", e["kw_predictions"]) for e in report["estimators"].values() if "error" not in e]
    for label, kw in rows:
        lines.append(f"| {label} | {sig3(kw['H'])} | {sig3(kw['p'])} |")
    lines += ["", "## Root mean squared error", ""]
    ests = list(report["estimators"].values())
    lines.append("| " + " | ".join(e["display_name"] for e in ests) + " |")
    lines.append("|" + "---|" * len(ests))
    lines.append("| " + " | ".join(sig3(e["rmse"]) if "error" not in e else "error" for e in ests) + " |")
    errors = [f"- {e['display_name']}: {e['error']}" for e in ests if "error" in e]
    if errors:
        lines += ["", "## Errors", "", *errors]
    return "\n".join(lines) + "\n"


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def rankdiff(config: ExperimentConfig, group: str, sample_size: int, seed: int) -> str:
    """Within-sample prediction ranks of individuals drawn from one group.

    Individuals are drawn without replacement from the training split, where
    every predictor has been fitted, so the quantile transforms see labels
    inside their own empirical CDFs and produce no artificial ties.
    """
    data = load_dataset(config)
    if group not in data.levels:
        raise ConfigError(f"unknown group {group!r}; available: {list(data.levels)}")
    train_idx, _ = split_indices(data.n, config.train_frac, config.seed)
    train = data.take(train_idx)
    members = np.flatnonzero(train.groups == group)
    if not 1 <= sample_size <= len(members):
        raise ConfigError(f"sample_size must be in [1, {len(members)}] for group {group!r}")
    chosen = np.sort(np.random.default_rng(seed).choice(members, size=sample_size, replace=False))
    sample = train.take(chosen)
    columns = {}
    for name, pred in fit_all(config, train).items():
        if isinstance(pred, Exception):
            raise ConfigError(f"{name}: {pred}")
        columns[name] = rank_with_ties(pred.predict(sample))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["individual_id", *columns])
    for i, row_id in enumerate(train_idx[chosen]):
        w.writerow([int(row_id), *(_fmt_rank(columns[name][i]) for name in columns)])
    return buf.getvalue()


def _fmt_rank(r: float) -> str:
    return str(int(r)) if float(r).is_integer() else repr(float(r))
