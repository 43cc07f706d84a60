"""Fairness and accuracy measurements."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .special import chi2_sf


def rank_with_ties(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of the positions they occupy."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot rank an empty sequence")
    if np.isnan(x).any():
        raise ValueError("cannot rank NaN values")
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # run boundaries of equal values in sorted order
    starts = np.concatenate([[True], xs[1:] != xs[:-1]])
    run_id = np.cumsum(starts) - 1
    first = np.flatnonzero(starts)
    last = np.concatenate([first[1:], [len(xs)]]) - 1
    midrank = (first + last) / 2.0 + 1.0
    ranks = np.empty_like(x)
    ranks[order] = midrank[run_id]
    return ranks


@dataclass(frozen=True)
class KWResult:
    H: float
    p: float
    N: int
    g: int
    df: int
    n_i: dict[str, int]

    def to_dict(self) -> dict:
        return asdict(self)


def kruskal_wallis(values, groups) -> KWResult:
    """Kruskal-Wallis H test of equal location across groups.

    Uses the ratio form ``(N-1) * sum n_i (rbar_i - rbar)^2 / sum (r_ij - rbar)^2``
    on midranks, which already accounts for ties. All-equal input gives
    ``H = 0, p = 1``.
    """
    x = np.asarray(values, dtype=float).ravel()
    groups = np.asarray([str(g) for g in np.asarray(groups, dtype=object).ravel()], dtype=object)
    if len(x) != len(groups):
        raise ValueError(f"length mismatch: {len(x)} values, {len(groups)} group labels")
    levels, gidx = np.unique(groups, return_inverse=True)
    if len(levels) < 2:
        raise ValueError("fairness tests require >= 2 groups")
    if len(x) < 3:
        raise ValueError("Kruskal-Wallis needs at least 3 observations")
    r = rank_with_ties(x)
    n_i = np.bincount(gidx, minlength=len(levels))
    rbar = (len(x) + 1) / 2.0
    rbar_i = np.bincount(gidx, weights=r, minlength=len(levels)) / n_i
    denom = float(np.sum((r - rbar) ** 2))
    if denom == 0.0:
        H, p = 0.0, 1.0
    else:
        H = (len(x) - 1) * float(np.sum(n_i * (rbar_i - rbar) ** 2)) / denom
        H = max(H, 0.0)
        p = chi2_sf(H, len(levels) - 1)
    return KWResult(
        H=H,
        p=p,
        N=int(len(x)),
        g=int(len(levels)),
        df=int(len(levels) - 1),
        n_i={str(k): int(c) for k, c in zip(levels, n_i)},
    )


def rmse(predictions, labels) -> float:
    yhat = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if yhat.shape != y.shape:
        raise ValueError(f"length mismatch: {yhat.size} predictions, {y.size} labels")
    if y.size == 0:
        raise ValueError("rmse of empty vectors")
    return float(math.sqrt(np.mean((yhat - y) ** 2)))


@dataclass(frozen=True)
class ACFResult:
    epsilon: float
    delta: float
    rows: int
    interventions: int

    def to_dict(self) -> dict:
        return asdict(self)


def counterfactual_gaps(pred, data) -> np.ndarray:
    """|factual - counterfactual| for every row and every other known group.

    Returns an ``(n, n_levels)`` array with NaN where the intervention equals
    the row's own group.
    """
    factual = np.asarray(pred.predict(data), dtype=float)
    own = np.asarray(data.groups, dtype=object)
    gaps = np.full((len(factual), len(pred.levels)), np.nan)
    for k, level in enumerate(pred.levels):
        cf = np.asarray(pred.predict_counterfactual(data, level), dtype=float)
        mask = own != level
        gaps[mask, k] = np.abs(factual[mask] - cf[mask])
    return gaps


def acf_estimate(pred, data, epsilon: float) -> ACFResult:
    """Smallest delta such that the predictor is (epsilon, delta)-ACF on ``data``.

    Every row is intervened on with every group other than its own; delta is
    the fraction of those (row, group) pairs whose prediction moves by more
    than ``epsilon``.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    gaps = counterfactual_gaps(pred, data)
    valid = ~np.isnan(gaps)
    total = int(valid.sum())
    exceed = int(np.sum(gaps[valid] > epsilon))
    return ACFResult(float(epsilon), exceed / total if total else 0.0, int(len(gaps)), total)


def dp_test(pred, data) -> KWResult:
    """Kruskal-Wallis test of predictions grouped by protected group.

    A small p-value is evidence against demographic parity and therefore
    against counterfactual fairness. A large one proves neither: the test only
    detects differences in location.
    """
    return kruskal_wallis(pred.predict(data), data.groups)


@dataclass(frozen=True)
class GroupOrder:
    n: int
    concordant: int
    discordant: int
    prediction_ties: int
    tau: float

    @property
    def preserved(self) -> bool:
        return self.discordant == 0


@dataclass(frozen=True)
class OrderReport:
    groups: dict[str, GroupOrder] = field(default_factory=dict)

    @property
    def concordant(self) -> int:
        return sum(g.concordant for g in self.groups.values())

    @property
    def discordant(self) -> int:
        return sum(g.discordant for g in self.groups.values())

    @property
    def preserved(self) -> bool:
        return self.discordant == 0

    @property
    def tau(self) -> float:
        pairs = sum(g.concordant + g.discordant + g.prediction_ties for g in self.groups.values())
        return (self.concordant - self.discordant) / pairs if pairs else 1.0

    def to_dict(self) -> dict:
        return {
            "preserved": self.preserved,
            "concordant": self.concordant,
            "discordant": self.discordant,
            "tau": self.tau,
            "groups": {k: {**asdict(v), "preserved": v.preserved} for k, v in self.groups.items()},
        }


def _count_pairs(base: np.ndarray, pred: np.ndarray) -> tuple[int, int, int]:
    """Concordant, discordant and prediction-tied counts over pairs with distinct baselines.

    Sweeps rows by increasing baseline with a Fenwick tree over prediction
    ranks; rows sharing a baseline value are queried before any is inserted so
    they never pair with each other.
    """
    _, pr = np.unique(pred, return_inverse=True)
    size = int(pr.max()) + 1 if len(pr) else 0
    tree = [0] * (size + 1)

    def prefix(i: int) -> int:
        s = 0
        while i > 0:
            s += tree[i]
            i -= i & -i
        return s

    def add(i: int) -> None:
        i += 1
        while i <= size:
            tree[i] += 1
            i += i & -i

    order = np.lexsort((pr, base))
    bs, ps = base[order], pr[order]
    conc = disc = ties = 0
    inserted = 0
    i = 0
    n = len(bs)
    while i < n:
        j = i
        while j < n and bs[j] == bs[i]:
            j += 1
        for k in range(i, j):
            below = prefix(int(ps[k]))
            upto = prefix(int(ps[k]) + 1)
            conc += below
            disc += inserted - upto
            ties += upto - below
        for k in range(i, j):
            add(int(ps[k]))
        inserted += j - i
        i = j
    return conc, disc, ties


def group_order_report(baseline_labels, predictions, groups) -> OrderReport:
    """Within-group agreement between the baseline ordering and the predicted ordering.

    Only pairs strictly ordered by the baseline count. A pair whose predictions
    tie is neither concordant nor discordant, but still enters the tau
    denominator.
    """
    base = np.asarray(baseline_labels, dtype=float).ravel()
    pred = np.asarray(predictions, dtype=float).ravel()
    groups = np.asarray([str(g) for g in np.asarray(groups, dtype=object).ravel()], dtype=object)
    if not (len(base) == len(pred) == len(groups)):
        raise ValueError("baseline, predictions and groups must have equal length")
    out = {}
    for level in sorted(set(groups)):
        mask = groups == level
        c, d, t = _count_pairs(base[mask], pred[mask])
        pairs = c + d + t
        out[level] = GroupOrder(int(mask.sum()), c, d, t, (c - d) / pairs if pairs else 1.0)
    return OrderReport(out)

