"""Structural causal models with generalized-linear governing equations.

A model is an ordered collection of :class:`NodeSpec` entries. Each node is
either protected (A), latent (U), observed (X) or the outcome (Y), and is
generated from its parents through ``link(intercept + sum(coeff * parent))``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

ROLES = ("Protected", "Latent", "Observed", "Outcome")
FAMILIES = ("Gaussian", "Poisson", "Bernoulli", "Categorical")
LINKS = ("Identity", "Exp", "Logit")

_LEGAL_LINK = {
    "Gaussian": "Identity",
    "Poisson": "Exp",
    "Bernoulli": "Logit",
    "Categorical": "Logit",
}

MAX_WORLDS = 10**6


class ModelError(ValueError):
    """Raised when a model fails validation or cannot be used for an operation."""


@dataclass(frozen=True)
class NodeSpec:
    name: str
    role: str
    family: str = "Gaussian"
    link: str = "Identity"
    parents: tuple[str, ...] = ()
    intercept: float = 0.0
    coeffs: tuple[float, ...] = ()
    noise_variance: float | None = None
    categories: int | None = None
    # Categorical only: category probabilities (uniform when omitted).
    probs: tuple[float, ...] | None = None
    # Set by intervene(); the node then ignores its equation.
    fixed: float | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> "NodeSpec":
        probs = d.get("probs")
        return cls(
            name=str(d["name"]),
            role=str(d["role"]),
            family=str(d.get("family", "Gaussian")),
            link=str(d.get("link", _LEGAL_LINK.get(d.get("family", "Gaussian"), "Identity"))),
            parents=tuple(d.get("parents", ())),
            intercept=float(d.get("intercept", 0.0)),
            coeffs=tuple(float(c) for c in d.get("coeffs", ())),
            noise_variance=None if d.get("noise_variance") is None else float(d["noise_variance"]),
            categories=None if d.get("categories") is None else int(d["categories"]),
            probs=None if probs is None else tuple(float(p) for p in probs),
            fixed=None if d.get("fixed") is None else float(d["fixed"]),
        )

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "role": self.role,
            "family": self.family,
            "link": self.link,
            "parents": list(self.parents),
            "intercept": self.intercept,
            "coeffs": list(self.coeffs),
        }
        if self.noise_variance is not None:
            d["noise_variance"] = self.noise_variance
        if self.categories is not None:
            d["categories"] = self.categories
        if self.probs is not None:
            d["probs"] = list(self.probs)
        if self.fixed is not None:
            d["fixed"] = self.fixed
        return d

    @property
    def support_size(self) -> int | None:
        """Number of outcomes for discrete/deterministic nodes, None if continuous."""
        if self.fixed is not None:
            return 1
        if self.family == "Bernoulli":
            return 2
        if self.family == "Categorical":
            return self.categories
        if self.family == "Gaussian" and not self.noise_variance:
            return 1
        return None


@dataclass(frozen=True)
class Violation:
    node: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.node}: {self.rule} ({self.message})"


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def raise_if_invalid(self) -> None:
        if not self.ok:
            raise ModelError("invalid model: " + "; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class StructuralModel:
    nodes: tuple[NodeSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))

    @classmethod
    def from_dict(cls, d: Mapping) -> "StructuralModel":
        return cls(tuple(NodeSpec.from_dict(n) for n in d["nodes"]))

    @classmethod
    def load(cls, path: str | Path) -> "StructuralModel":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return {"nodes": [n.to_dict() for n in self.nodes]}

    def node(self, name: str) -> NodeSpec:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(f"unknown node {name!r}")

    @property
    def names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def by_role(self, role: str) -> list[NodeSpec]:
        return [n for n in self.nodes if n.role == role]

    def topological_order(self) -> list[str]:
        """Node names ordered parents-first; ties keep declaration order."""
        graph = {n.name: set(n.parents) for n in self.nodes}
        ts = TopologicalSorter(graph)
        ts.prepare()
        position = {name: i for i, name in enumerate(self.names)}
        order = []
        while ts.is_active():
            ready = sorted(ts.get_ready(), key=lambda s: position.get(s, len(position)))
            order.extend(ready)
            ts.done(*ready)
        return order


def _coeff_count(model: StructuralModel, node: NodeSpec) -> int:
    total = 0
    for p in node.parents:
        parent = model.node(p)
        total += parent.categories if parent.family == "Categorical" else 1
    return total


def validate_model(model: StructuralModel) -> ValidationResult:
    """Check the structural assumptions every model in this package relies on."""
    out: list[Violation] = []
    names = model.names
    seen = set()
    for n in model.nodes:
        if n.name in seen:
            out.append(Violation(n.name, "duplicate name", "node names must be unique"))
        seen.add(n.name)

    for n in model.nodes:
        if n.role not in ROLES:
            out.append(Violation(n.name, "unknown role", f"{n.role!r} not in {ROLES}"))
        if n.family not in FAMILIES:
            out.append(Violation(n.name, "unknown family", f"{n.family!r} not in {FAMILIES}"))
            continue
        if n.link != _LEGAL_LINK[n.family]:
            out.append(Violation(n.name, "illegal link", f"{n.family} requires {_LEGAL_LINK[n.family]} link, got {n.link}"))
        if n.family == "Gaussian":
            if n.noise_variance is None or n.noise_variance < 0 or not math.isfinite(n.noise_variance):
                out.append(Violation(n.name, "noise variance", "Gaussian nodes need a finite noise_variance >= 0"))
        elif n.noise_variance is not None:
            out.append(Violation(n.name, "noise variance", f"{n.family} nodes carry no noise_variance"))
        if n.family == "Categorical":
            if n.categories is None or n.categories < 2:
                out.append(Violation(n.name, "categories", "Categorical nodes need categories >= 2"))
            elif n.probs is not None and (len(n.probs) != n.categories or min(n.probs) < 0 or sum(n.probs) <= 0):
                out.append(Violation(n.name, "categories", "probs must be nonnegative, one per category"))
            if n.parents:
                out.append(Violation(n.name, "categorical parents", "Categorical nodes must be parentless"))
        elif n.categories is not None:
            out.append(Violation(n.name, "categories", f"{n.family} nodes carry no category count"))
        for p in n.parents:
            if p not in names:
                out.append(Violation(n.name, "unknown parent", f"parent {p!r} is not a node"))
        if n.role == "Latent" and n.parents:
            out.append(Violation(n.name, "Latent node has parent", f"parents {list(n.parents)}"))
        if n.role == "Protected" and n.parents:
            out.append(Violation(n.name, "Protected node has parent", f"parents {list(n.parents)}"))

    outcomes = model.by_role("Outcome")
    if len(outcomes) != 1:
        out.append(Violation("<model>", "outcome count", f"exactly one Outcome node required, found {len(outcomes)}"))

    if all(p in names for n in model.nodes for p in n.parents):
        try:
            model.topological_order()
        except CycleError as e:
            cycle = e.args[1] if len(e.args) > 1 else []
            out.append(Violation(str(cycle[0]) if cycle else "<model>", "cycle", " -> ".join(map(str, cycle))))
        for n in model.nodes:
            if n.family in FAMILIES and n.family != "Categorical" and n.fixed is None:
                expected = _coeff_count(model, n)
                if len(n.coeffs) != expected:
                    out.append(Violation(n.name, "coeff count", f"expected {expected} coeffs, got {len(n.coeffs)}"))
    return ValidationResult(tuple(out))


def intervene(model: StructuralModel, assignments: Mapping[str, float]) -> StructuralModel:
    """Return a copy of ``model`` with the assigned nodes held constant.

    Incoming edges of the assigned nodes are removed; all other equations are
    unchanged.
    """
    for name in assignments:
        model.node(name)
    nodes = []
    for n in model.nodes:
        if n.name in assignments:
            n = replace(n, parents=(), coeffs=(), fixed=float(assignments[n.name]))
        nodes.append(n)
    return StructuralModel(tuple(nodes))


def _node_seed(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), key]))


def _linear_predictor(model: StructuralModel, node: NodeSpec, values: Mapping[str, np.ndarray]) -> np.ndarray:
    eta = np.full(len(next(iter(values.values()))) if values else 1, node.intercept, dtype=float)
    k = 0
    for p in node.parents:
        parent = model.node(p)
        v = values[p]
        if parent.family == "Categorical":
            for c in range(parent.categories):
                eta = eta + node.coeffs[k] * (v == c)
                k += 1
        else:
            eta = eta + node.coeffs[k] * v
            k += 1
    return eta


def _expit(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(eta, dtype=float)))


def _category_probs(node: NodeSpec) -> np.ndarray:
    if node.probs is None:
        return np.full(node.categories, 1.0 / node.categories)
    p = np.asarray(node.probs, dtype=float)
    return p / p.sum()


def sample_nodes(model: StructuralModel, n: int, seed: int) -> dict[str, np.ndarray]:
    """Draw ``n`` joint samples of every node; returns a column per node name.

    Each node draws from its own generator derived from ``(seed, node name)``,
    so adding or removing an unrelated node leaves other columns' noise intact.
    """
    if n <= 0:
        raise ModelError("sample size must be positive")
    validate_model(model).raise_if_invalid()
    values: dict[str, np.ndarray] = {}
    for name in model.topological_order():
        node = model.node(name)
        rng = _node_seed(seed, name)
        if node.fixed is not None:
            col = np.full(n, node.fixed, dtype=float)
        elif node.family == "Categorical":
            col = rng.choice(node.categories, size=n, p=_category_probs(node)).astype(float)
        else:
            eta = _linear_predictor(model, node, values) if values else np.full(n, node.intercept)
            eta = np.broadcast_to(eta, (n,)).astype(float)
            if node.family == "Gaussian":
                col = eta + math.sqrt(node.noise_variance) * rng.standard_normal(n)
            elif node.family == "Poisson":
                col = rng.poisson(np.exp(eta)).astype(float)
            else:
                col = (rng.random(n) < _expit(eta)).astype(float)
        col.setflags(write=False)
        values[name] = col
    return {name: values[name] for name in model.names}


def _fmt_value(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def group_keys(model: StructuralModel, values: Mapping[str, np.ndarray]) -> np.ndarray:
    """Flatten every protected node into one categorical key, e.g. ``race=1;sex=0``."""
    protected = model.by_role("Protected")
    if not protected:
        raise ModelError("model has no Protected node")
    n = len(values[protected[0].name])
    parts = [[f"{p.name}={_fmt_value(v)}" for v in values[p.name]] for p in protected]
    return np.array([";".join(col[i] for col in parts) for i in range(n)], dtype=object)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed table: one group key per row, feature matrix, outcome vector.

    ``latent`` carries the true latent draws for synthetic data; it is never
    written to disk since latents are unobserved by definition.
    """

    groups: np.ndarray
    features: np.ndarray
    outcome: np.ndarray
    feature_names: tuple[str, ...]
    outcome_name: str = "y"
    group_name: str = "group"
    latent: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        groups = np.asarray([str(g) for g in np.asarray(self.groups).ravel()], dtype=object)
        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        outcome = np.asarray(self.outcome, dtype=float).ravel()
        n = len(groups)
        if features.shape[0] != n or outcome.shape[0] != n:
            raise ValueError(f"column lengths differ: groups {n}, features {features.shape[0]}, outcome {outcome.shape[0]}")
        if features.shape[1] != len(self.feature_names):
            raise ValueError("feature_names does not match feature columns")
        for arr in (groups, features, outcome):
            arr.setflags(write=False)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self) -> int:
        return len(self.groups)

    @property
    def n(self) -> int:
        return len(self.groups)

    @property
    def levels(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.groups)))

    def column(self, name: str) -> np.ndarray:
        if name == self.outcome_name:
            return self.outcome
        return self.features[:, self.feature_names.index(name)]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(
            self,
            groups=self.groups[idx],
            features=self.features[idx],
            outcome=self.outcome[idx],
            latent={k: v[idx] for k, v in self.latent.items()},
        )

    def with_groups(self, groups) -> "Dataset":
        groups = np.broadcast_to(np.asarray(groups, dtype=object), (self.n,))
        return replace(self, groups=groups)

    def split(self, train_frac: float = 0.8, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Deterministic shuffled train/test split."""
        train, test = split_indices(self.n, train_frac, seed)
        return self.take(train), self.take(test)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.group_name, *self.feature_names, self.outcome_name])
        for i in range(self.n):
            w.writerow([self.groups[i], *(repr(float(v)) for v in self.features[i]), repr(float(self.outcome[i]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, path: str | Path, group_col: str = "group", outcome_col: str = "y") -> "Dataset":
        with open(path, encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
        if not rows:
            raise ValueError(f"{path}: empty file")
        header, body = rows[0], rows[1:]
        for col in (group_col, outcome_col):
            if col not in header:
                raise ValueError(f"{path}: missing column {col!r}")
        gi, yi = header.index(group_col), header.index(outcome_col)
        fi = [i for i in range(len(header)) if i not in (gi, yi)]
        try:
            feats = np.array([[float(r[i]) for i in fi] for r in body], dtype=float).reshape(len(body), len(fi))
            y = np.array([float(r[yi]) for r in body])
        except (ValueError, IndexError) as e:
            raise ValueError(f"{path}: malformed row ({e})") from e
        return cls(
            groups=[r[gi] for r in body],
            features=feats,
            outcome=y,
            feature_names=tuple(header[i] for i in fi),
            outcome_name=outcome_col,
            group_name=group_col,
        )


def split_indices(n: int, train_frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of a seeded shuffle split, each part in ascending order."""
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(train_frac * n))
    if k == 0 or k == n:
        raise ValueError("split leaves an empty partition")
    return np.sort(perm[:k]), np.sort(perm[k:])


def sample_dataset(model: StructuralModel, n: int, seed: int) -> Dataset:
    """Sample ``n`` rows and package observed columns as a :class:`Dataset`."""
    values = sample_nodes(model, n, seed)
    observed = model.by_role("Observed")
    outcome = model.by_role("Outcome")[0]
    return Dataset(
        groups=group_keys(model, values),
        features=np.column_stack([values[o.name] for o in observed]) if observed else np.empty((n, 0)),
        outcome=values[outcome.name],
        feature_names=tuple(o.name for o in observed),
        outcome_name=outcome.name,
        latent={u.name: values[u.name] for u in model.by_role("Latent")},
    )


def _node_distribution(model: StructuralModel, node: NodeSpec, assignment: Mapping[str, float]) -> list[tuple[float, Fraction]]:
    if node.fixed is not None:
        return [(node.fixed, Fraction(1))]
    if node.family == "Categorical":
        probs = [Fraction(p) for p in (node.probs or [1] * node.categories)]
        total = sum(probs)
        return [(float(c), p / total) for c, p in enumerate(probs) if p]
    eta = float(_linear_predictor(model, node, {k: np.array([v]) for k, v in assignment.items()})[0])
    if node.family == "Gaussian":
        return [(eta, Fraction(1))]
    p1 = Fraction(float(_expit(eta)))
    return [(v, p) for v, p in ((0.0, 1 - p1), (1.0, p1)) if p]


def enumerate_worlds(model: StructuralModel) -> list[tuple[dict[str, float], Fraction]]:
    """Exact joint distribution of a small discrete model.

    Probabilities are :class:`fractions.Fraction`; zero-probability worlds are
    dropped. Deterministic Gaussian nodes (variance 0) are allowed.
    """
    validate_model(model).raise_if_invalid()
    size = 1
    for n in model.nodes:
        s = n.support_size
        if s is None:
            raise ModelError(f"{n.name}: {n.family} node is not discrete; cannot enumerate")
        size *= s
        if size > MAX_WORLDS:
            raise ModelError(f"state space exceeds {MAX_WORLDS} worlds")
    worlds: list[tuple[dict[str, float], Fraction]] = [({}, Fraction(1))]
    for name in model.topological_order():
        node = model.node(name)
        nxt = []
        for assignment, prob in worlds:
            for value, p in _node_distribution(model, node, assignment):
                nxt.append(({**assignment, name: value}, prob * p))
        worlds = nxt
    order = model.names
    return [({k: a[k] for k in order}, p) for a, p in worlds]


def marginal(worlds: Iterable[tuple[Mapping[str, float], Fraction]], names: Sequence[str]) -> dict[tuple, Fraction]:
    """Marginal distribution of ``names`` over enumerated worlds."""
    out: dict[tuple, Fraction] = {}
    for a, p in worlds:
        key = tuple(a[k] for k in names)
        out[key] = out.get(key, Fraction(0)) + p
    return out


class UnseenGroupError(ValueError):
    """A group key was not present when the artifact was fitted."""


def group_index(groups, levels: Sequence[str]) -> np.ndarray:
    """Map group keys to positions in ``levels``; unknown keys raise."""
    lookup = {g: i for i, g in enumerate(levels)}
    groups = np.asarray(groups, dtype=object).ravel()
    try:
        return np.fromiter((lookup[str(g)] for g in groups), dtype=np.intp, count=len(groups))
    except KeyError as e:
        raise UnseenGroupError(f"group {e.args[0]!r} was not seen during fitting") from None
