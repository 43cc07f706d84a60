"""Two-person toy world: a counterfactually fair predictor with a latent
independent of the protected attribute that still reorders individuals
within a group.

Teal and Lucas share one coin flip: in world A Teal is not charming and Lucas
is, in world B the reverse. Height is the protected attribute. The predictor
returns charm when short and its negation when tall. Everything is computed
by exact enumeration of the structural model.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from fractions import Fraction

from .scm import NodeSpec, StructuralModel, enumerate_worlds, intervene, marginal

PERSONS = ("Teal", "Lucas")
WORLDS = ("A", "B")
HEIGHTS = ("short", "tall")


def toy_model() -> StructuralModel:
    """Which person we look at, which world we live in, and their height; each a fair coin.

    The outcome node is a deterministic placeholder: the toy only studies the
    predictor, never the true success label.
    """
    return StructuralModel(
        (
            NodeSpec("person", "Observed", "Bernoulli", "Logit"),
            NodeSpec("world", "Latent", "Bernoulli", "Logit"),
            NodeSpec("height", "Protected", "Bernoulli", "Logit"),
            NodeSpec("success", "Outcome", "Gaussian", "Identity", noise_variance=0.0),
        )
    )


def charm(person: int, world: int) -> int:
    # u_Teal ~ Bernoulli(1/2), u_Lucas = 1 - u_Teal; world A (0) has Teal at 0.
    return world if person == 0 else 1 - world


def toy_predict(u: int, height: int) -> int:
    """Prediction under A <- height: u when short, NOT u when tall."""
    return u if height == 0 else 1 - u


def toy_table() -> list[dict]:
    """One row per person with (u, y_hat) for every height and world."""
    rows = []
    for p, person in enumerate(PERSONS):
        row = {"person": person}
        for h, height in enumerate(HEIGHTS):
            for w, world in enumerate(WORLDS):
                u = charm(p, w)
                row[f"{height}/{world}/u"] = u
                row[f"{height}/{world}/y_hat"] = toy_predict(u, h)
        rows.append(row)
    return rows


@dataclass(frozen=True)
class CounterexampleReport:
    cf_holds: bool
    independence_holds: bool
    order_preserved: bool
    p_success: dict[str, dict[str, str]]
    p_charm_and_height: dict[str, str]
    p_charm: str
    p_tall: str
    inversions: list[str]
    total_probability: str

    def to_dict(self) -> dict:
        return asdict(self)


def _success_distribution(model: StructuralModel, height: int) -> dict[int, Fraction]:
    """Pr(y_hat = 1 | person) under the intervention height <- ``height``."""
    worlds = enumerate_worlds(intervene(model, {"height": height}))
    out = {}
    for p in (0, 1):
        joint = sum(pr for a, pr in worlds if a["person"] == p and toy_predict(charm(p, int(a["world"])), height) == 1)
        total = sum(pr for a, pr in worlds if a["person"] == p)
        out[p] = joint / total
    return out


def verify_counterexample() -> CounterexampleReport:
    model = toy_model()
    worlds = enumerate_worlds(model)
    total = sum(p for _, p in worlds)

    # counterfactual fairness: each person's success distribution is the same under both interventions
    by_height = {h: _success_distribution(model, h) for h in (0, 1)}
    cf_holds = all(by_height[0][p] == by_height[1][p] for p in (0, 1))

    # latent independent of protected attribute: Pr(u, a) = Pr(u) Pr(a) over the 8 cells
    cells = [({**a, "u": float(charm(int(a["person"]), int(a["world"])))}, p) for a, p in worlds]
    joint = marginal(cells, ["u", "height"])
    pu = marginal(cells, ["u"])
    pa = marginal(cells, ["height"])
    independence_holds = all(
        joint.get((u, a), Fraction(0)) == pu[(u,)] * pa[(a,)] for u in (0.0, 1.0) for a in (0.0, 1.0)
    )

    # within-group order: compare Teal vs Lucas in the same world across interventions
    inversions = []
    for w, world in enumerate(WORLDS):
        signs = {}
        for h, height in enumerate(HEIGHTS):
            teal = toy_predict(charm(0, w), h)
            lucas = toy_predict(charm(1, w), h)
            signs[height] = (teal > lucas) - (teal < lucas)
        if signs["short"] * signs["tall"] < 0:
            inversions.append(
                f"world {world}: Teal {'behind' if signs['short'] < 0 else 'ahead of'} Lucas when short, "
                f"{'behind' if signs['tall'] < 0 else 'ahead of'} when tall"
            )

    return CounterexampleReport(
        cf_holds=cf_holds,
        independence_holds=independence_holds,
        order_preserved=not inversions,
        p_success={
            PERSONS[p]: {HEIGHTS[h]: str(by_height[h][p]) for h in (0, 1)} for p in (0, 1)
        },
        p_charm_and_height={
            f"u={int(u)},{HEIGHTS[int(a)]}": _eighths(joint.get((u, a), Fraction(0))) for u in (0.0, 1.0) for a in (0.0, 1.0)
        },
        p_charm=_eighths(pu[(1.0,)]),
        p_tall=_eighths(pa[(1.0,)]),
        inversions=inversions,
        total_probability=str(total),
    )


def _eighths(p: Fraction) -> str:
    """Render with denominator 8, the natural unit of the 8 equiprobable cells."""
    return f"{p * 8}/8" if (p * 8).denominator == 1 else str(p)


def format_toy_table() -> str:
    cols = [f"{h}/{w}" for h in HEIGHTS for w in WORLDS]
    lines = [
        "| person | " + " | ".join(f"{c} u | {c} y_hat" for c in cols) + " |",
        "|---" * (1 + 2 * len(cols)) + "|",
    ]
    for row in toy_table():
        cells = []
        for c in cols:
            cells += [str(row[f"{c}/u"]), str(row[f"{c}/y_hat"])]
        lines.append(f"| {row['person']} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def render(report: CounterexampleReport) -> str:
    return format_toy_table() + "\n\n" + json.dumps(report.to_dict(), indent=2)
