"""The six predictors compared in the experiments, plus the identity wrapper
that turns any demographic-parity predictor into a counterfactually fair one.

Every predictor works on whole :class:`~cfdp.scm.Dataset` objects:

* ``predict(data)`` evaluates each row with its observed group.
* ``predict_counterfactual(data, group)`` evaluates each row under the
  intervention ``A <- group``. Latent-based predictors (Level 2, Level 3 and
  the wrapper) estimate the latent from the factual row first and then apply
  the intervention downstream; the others simply re-evaluate with the group
  replaced.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .latent_em import LatentModelParams, fit_em, posterior_latent
from .scm import Dataset, UnseenGroupError, group_index

RIDGE = 1e-8

ESTIMATORS = ("level1", "level2", "level3", "listing1", "listing2", "full")
DISPLAY_NAMES = {
    "level1": "Level 1",
    "level2": "Level 2",
    "level3": "Level 3",
    "listing1": "Listing 1",
    "listing2": "Listing 2",
    "full": "Full",
}


@dataclass(frozen=True, eq=False)
class LinearFit:
    """Ridge-regularized least squares with an unpenalized intercept."""

    names: tuple[str, ...]
    coef: np.ndarray
    intercept: float
    ridge: float = RIDGE

    @classmethod
    def fit(cls, design, y, names, ridge: float = RIDGE) -> "LinearFit":
        z = np.asarray(design, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        y = np.asarray(y, dtype=float).ravel()
        n, k = z.shape
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite values in regression inputs")
        # Stacking sqrt(ridge) * I under the design solves the ridge normal
        # equations without squaring the condition number.
        a = np.vstack([np.column_stack([np.ones(n), z]), np.column_stack([np.zeros(k), np.sqrt(ridge) * np.eye(k)])])
        b = np.concatenate([y, np.zeros(k)])
        sol, *_ = np.linalg.lstsq(a, b, rcond=None)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError("least-squares solution is not finite")
        return cls(tuple(names), sol[1:], float(sol[0]), ridge)

    def predict(self, design) -> np.ndarray:
        z = np.asarray(design, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        return self.intercept + z @ self.coef

    def to_dict(self) -> dict:
        return {"names": list(self.names), "coef": self.coef.tolist(), "intercept": self.intercept, "ridge": self.ridge}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearFit":
        return cls(tuple(d["names"]), np.asarray(d["coef"], dtype=float), float(d["intercept"]), float(d["ridge"]))


def one_hot(groups, levels) -> np.ndarray:
    idx = group_index(groups, levels)
    out = np.zeros((len(idx), len(levels)))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def _broadcast_groups(data: Dataset, group) -> np.ndarray:
    return np.broadcast_to(np.asarray(group, dtype=object), (data.n,))


def _check_schema(data: Dataset, feature_names) -> None:
    if tuple(data.feature_names) != tuple(feature_names):
        raise ValueError(f"schema mismatch: fitted on {list(feature_names)}, got {list(data.feature_names)}")


_REGISTRY: dict[str, type] = {}


class Predictor:
    kind: ClassVar[str]
    levels: tuple[str, ...]

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        _REGISTRY[cls.kind] = cls

    def predict(self, data: Dataset) -> np.ndarray:
        return self.predict_counterfactual(data, data.groups)

    def predict_counterfactual(self, data: Dataset, group) -> np.ndarray:
        raise NotImplementedError

    def latent(self, data: Dataset) -> dict[str, np.ndarray]:
        """Named latent estimates used by the predictor (empty if it has none)."""
        return {}

    def to_dict(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_dict(d: dict) -> "Predictor":
        return _REGISTRY[d["kind"]]._from_payload(d)


@dataclass(frozen=True, eq=False)
class Level1(Predictor):
    """Fairness through unawareness: regress Y on the features only."""

    kind: ClassVar[str] = "Level1"
    fit_: LinearFit
    levels: tuple[str, ...]

    def predict_counterfactual(self, data, group):
        _check_schema(data, self.fit_.names)
        group_index(_broadcast_groups(data, group), self.levels)  # unused, but must be a known group
        return self.fit_.predict(data.features)

    def to_dict(self):
        return {"kind": self.kind, "levels": list(self.levels), "fit": self.fit_.to_dict()}

    @classmethod
    def _from_payload(cls, d):
        return cls(LinearFit.from_dict(d["fit"]), tuple(d["levels"]))


@dataclass(frozen=True, eq=False)
class Level2(Predictor):
    """Regress Y on the posterior mean of a scalar latent fitted by EM."""

    kind: ClassVar[str] = "Level2"
    params: LatentModelParams
    fit_: LinearFit

    @property
    def levels(self):
        return self.params.levels

    def posterior_mean(self, data: Dataset) -> np.ndarray:
        _check_schema(data, self.params.feature_names)
        return posterior_latent(self.params, data.groups, data.features)[0]

    def predict_counterfactual(self, data, group):
        group_index(_broadcast_groups(data, group), self.levels)
        # u is abducted from the factual row; A <- a' has no path to the output.
        return self.fit_.predict(self.posterior_mean(data))

    def latent(self, data):
        return {"u": self.posterior_mean(data)}

    def to_dict(self):
        return {"kind": self.kind, "params": self.params.to_dict(), "fit": self.fit_.to_dict()}

    @classmethod
    def _from_payload(cls, d):
        return cls(LatentModelParams.from_dict(d["params"]), LinearFit.from_dict(d["fit"]))


@dataclass(frozen=True, eq=False)
class Level3(Predictor):
    """Regress Y on explanation terms: features minus their group-determined part."""

    kind: ClassVar[str] = "Level3"
    feature_fits: tuple[LinearFit, ...]
    fit_: LinearFit
    feature_names: tuple[str, ...]
    levels: tuple[str, ...]

    def explanation(self, data: Dataset) -> np.ndarray:
        _check_schema(data, self.feature_names)
        onehot = one_hot(data.groups, self.levels)
        return np.column_stack(
            [data.features[:, j] - f.predict(onehot) for j, f in enumerate(self.feature_fits)]
        ).reshape(data.n, len(self.feature_fits))

    def predict_counterfactual(self, data, group):
        group_index(_broadcast_groups(data, group), self.levels)
        return self.fit_.predict(self.explanation(data))

    def latent(self, data):
        e = self.explanation(data)
        return {name: e[:, j] for j, name in enumerate(self.feature_names)}

    def to_dict(self):
        return {
            "kind": self.kind,
            "levels": list(self.levels),
            "feature_names": list(self.feature_names),
            "feature_fits": [f.to_dict() for f in self.feature_fits],
            "fit": self.fit_.to_dict(),
        }

    @classmethod
    def _from_payload(cls, d):
        return cls(
            tuple(LinearFit.from_dict(f) for f in d["feature_fits"]),
            LinearFit.from_dict(d["fit"]),
            tuple(d["feature_names"]),
            tuple(d["levels"]),
        )


@dataclass(frozen=True, eq=False)
class GroupStats:
    mu: float
    sigma: float
    mu_a: dict[str, float]
    sigma_a: dict[str, float]

    @classmethod
    def of(cls, labels, groups) -> "GroupStats":
        y = np.asarray(labels, dtype=float)
        groups = np.asarray(groups, dtype=object)
        levels = sorted(set(groups))
        return cls(
            float(y.mean()),
            float(y.std()),
            {a: float(y[groups == a].mean()) for a in levels},
            {a: float(y[groups == a].std()) for a in levels},
        )


def _unfair_labels(base: "Predictor | None", data: Dataset, group=None) -> np.ndarray:
    if base is None:
        return data.outcome
    if group is None:
        return base.predict(data)
    return base.predict_counterfactual(data, group)


@dataclass(frozen=True, eq=False)
class Listing1(Predictor):
    """Per-group standardization mapped onto the population mean and std.

    Input labels are the row's observed outcome, or the output of ``base`` when
    one is given.
    """

    kind: ClassVar[str] = "Listing1"
    stats: GroupStats
    base: "Predictor | None" = None

    @property
    def levels(self):
        return tuple(self.stats.mu_a)

    def transform(self, labels, groups) -> np.ndarray:
        y = np.asarray(labels, dtype=float)
        groups = np.asarray(groups, dtype=object)
        idx = group_index(groups, self.levels)
        mu_a = np.array([self.stats.mu_a[a] for a in self.levels])[idx]
        sigma_a = np.array([self.stats.sigma_a[a] for a in self.levels])[idx]
        return self.stats.mu + self.stats.sigma * (y - mu_a) / sigma_a

    def predict(self, data):
        return self.transform(_unfair_labels(self.base, data), data.groups)

    def predict_counterfactual(self, data, group):
        groups = _broadcast_groups(data, group)
        return self.transform(_unfair_labels(self.base, data, groups), groups)

    def to_dict(self):
        return {
            "kind": self.kind,
            "mu": self.stats.mu,
            "sigma": self.stats.sigma,
            "mu_a": self.stats.mu_a,
            "sigma_a": self.stats.sigma_a,
            "base": None if self.base is None else self.base.to_dict(),
        }

    @classmethod
    def _from_payload(cls, d):
        base = None if d.get("base") is None else Predictor.from_dict(d["base"])
        return cls(GroupStats(d["mu"], d["sigma"], dict(d["mu_a"]), dict(d["sigma_a"])), base)


@dataclass(frozen=True, eq=False)
class EcdfMap:
    """Sorted samples backing the population and per-group empirical CDFs."""

    population: np.ndarray
    by_group: dict[str, np.ndarray]

    @staticmethod
    def cdf_count(sample: np.ndarray, y) -> np.ndarray:
        return np.searchsorted(sample, y, side="right")

    def quantile_map(self, labels, groups) -> np.ndarray:
        """Population value at each label's within-group quantile.

        ``CDF_a(y) = c / n_a``; the result is the smallest population value
        ``v`` with ``CDF(v) >= c / n_a``, i.e. order statistic
        ``ceil(c * n / n_a)``. Integer arithmetic avoids rounding at the
        boundaries.
        """
        y = np.asarray(labels, dtype=float)
        groups = np.asarray(groups, dtype=object)
        n = len(self.population)
        out = np.empty(len(y))
        for a in set(groups):
            if a not in self.by_group:
                raise UnseenGroupError(f"group {a!r} was not seen during fitting")
            mask = groups == a
            sample = self.by_group[a]
            c = self.cdf_count(sample, y[mask]).astype(np.int64)
            k = -((-c * n) // len(sample))
            out[mask] = self.population[np.clip(k - 1, 0, n - 1)]
        return out


@dataclass(frozen=True, eq=False)
class Listing2(Predictor):
    """Quantile matching: within-group ECDF, then the population inverse ECDF."""

    kind: ClassVar[str] = "Listing2"
    ecdf: EcdfMap
    base: "Predictor | None" = None

    @property
    def levels(self):
        return tuple(self.ecdf.by_group)

    def predict(self, data):
        return self.ecdf.quantile_map(_unfair_labels(self.base, data), data.groups)

    def predict_counterfactual(self, data, group):
        groups = _broadcast_groups(data, group)
        return self.ecdf.quantile_map(_unfair_labels(self.base, data, groups), groups)

    def to_dict(self):
        return {
            "kind": self.kind,
            "population": self.ecdf.population.tolist(),
            "by_group": {a: s.tolist() for a, s in self.ecdf.by_group.items()},
            "base": None if self.base is None else self.base.to_dict(),
        }

    @classmethod
    def _from_payload(cls, d):
        base = None if d.get("base") is None else Predictor.from_dict(d["base"])
        ecdf = EcdfMap(np.asarray(d["population"], dtype=float), {a: np.asarray(s, dtype=float) for a, s in d["by_group"].items()})
        return cls(ecdf, base)


@dataclass(frozen=True, eq=False)
class FullLinear(Predictor):
    """Unconstrained regression of Y on one-hot groups and all features."""

    kind: ClassVar[str] = "FullLinear"
    fit_: LinearFit
    levels: tuple[str, ...]

    @property
    def group_effects(self) -> dict[str, float]:
        return {a: float(c) for a, c in zip(self.levels, self.fit_.coef[: len(self.levels)])}

    def predict_counterfactual(self, data, group):
        _check_schema(data, self.fit_.names[len(self.levels):])
        design = np.column_stack([one_hot(_broadcast_groups(data, group), self.levels), data.features])
        return self.fit_.predict(design)

    def to_dict(self):
        return {"kind": self.kind, "levels": list(self.levels), "fit": self.fit_.to_dict()}

    @classmethod
    def _from_payload(cls, d):
        return cls(LinearFit.from_dict(d["fit"]), tuple(d["levels"]))


@dataclass(frozen=True, eq=False)
class DpWrapped(Predictor):
    """Latent estimate ``u = base(x, a)`` followed by the identity predictor.

    Every intervention returns ``u`` unchanged, so the result is
    counterfactually fair by construction; it satisfies demographic parity
    exactly when ``base`` does.
    """

    kind: ClassVar[str] = "DpWrapped"
    base: Predictor

    @property
    def levels(self):
        return self.base.levels

    def predict(self, data):
        return self.base.predict(data)

    def predict_counterfactual(self, data, group):
        group_index(_broadcast_groups(data, group), self.levels)
        return self.base.predict(data)

    def latent(self, data):
        return {"u": self.base.predict(data)}

    def to_dict(self):
        return {"kind": self.kind, "base": self.base.to_dict()}

    @classmethod
    def _from_payload(cls, d):
        return cls(Predictor.from_dict(d["base"]))


def _require_features(train: Dataset) -> None:
    if train.features.shape[1] < 1:
        raise ValueError("at least one feature column is required")


def fit_level1(train: Dataset) -> Level1:
    _require_features(train)
    return Level1(LinearFit.fit(train.features, train.outcome, train.feature_names), train.levels)


def fit_level2(train: Dataset, max_iter: int = 500, tol: float = 1e-8) -> Level2:
    params = fit_em(train, max_iter=max_iter, tol=tol)
    m, _ = posterior_latent(params, train.groups, train.features)
    return Level2(params, LinearFit.fit(m, train.outcome, ("u",)))


def fit_level3(train: Dataset) -> Level3:
    _require_features(train)
    levels = train.levels
    onehot = one_hot(train.groups, levels)
    names = tuple(f"a={a}" for a in levels)
    fits = tuple(LinearFit.fit(onehot, train.features[:, j], names) for j in range(train.features.shape[1]))
    e = np.column_stack([train.features[:, j] - f.predict(onehot) for j, f in enumerate(fits)])
    fit = LinearFit.fit(e, train.outcome, tuple(f"e_{x}" for x in train.feature_names))
    return Level3(fits, fit, train.feature_names, levels)


def fit_listing1(train: Dataset, base: Predictor | None = None) -> Listing1:
    labels = _unfair_labels(base, train)
    stats = GroupStats.of(labels, train.groups)
    for a in stats.mu_a:
        if np.sum(train.groups == a) < 2:
            raise ValueError(f"group {a!r} needs at least 2 rows")
        if stats.sigma_a[a] <= 0:
            raise ValueError(f"group {a!r} has zero label variance; cannot standardize")
    return Listing1(stats, base)


def fit_listing2(train: Dataset, base: Predictor | None = None) -> Listing2:
    labels = np.asarray(_unfair_labels(base, train), dtype=float)
    ecdf = EcdfMap(
        np.sort(labels),
        {a: np.sort(labels[train.groups == a]) for a in train.levels},
    )
    return Listing2(ecdf, base)


def fit_full(train: Dataset) -> FullLinear:
    levels = train.levels
    design = np.column_stack([one_hot(train.groups, levels), train.features])
    names = tuple(f"a={a}" for a in levels) + train.feature_names
    return FullLinear(LinearFit.fit(design, train.outcome, names), levels)


def wrap_dp_as_cf(base: Predictor) -> DpWrapped:
    return DpWrapped(base)


_FITTERS = {
    "level1": fit_level1,
    "level2": fit_level2,
    "level3": fit_level3,
    "listing1": fit_listing1,
    "listing2": fit_listing2,
    "full": fit_full,
}


def fit_estimator(name: str, train: Dataset, listing_input: str = "label") -> Predictor:
    """Fit an estimator by config name (one of ``ESTIMATORS`` or ``dp_wrapped:<name>``).

    ``listing_input="full"`` feeds Listing 1/2 the full linear model's
    predictions instead of the observed labels.
    """
    if name.startswith("dp_wrapped:"):
        return wrap_dp_as_cf(fit_estimator(name.split(":", 1)[1], train, listing_input))
    if name not in _FITTERS:
        raise ValueError(f"unknown estimator {name!r}; expected one of {ESTIMATORS} or dp_wrapped:<base>")
    if name in ("listing1", "listing2") and listing_input != "label":
        if listing_input != "full":
            raise ValueError(f"listing_input must be 'label' or 'full', got {listing_input!r}")
        return _FITTERS[name](train, base=fit_full(train))
    return _FITTERS[name](train)


def display_name(name: str) -> str:
    if name.startswith("dp_wrapped:"):
        return f"DP-wrapped {display_name(name.split(':', 1)[1])}"
    return DISPLAY_NAMES.get(name, name)
