import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfdp.estimators import (
    ESTIMATORS,
    LinearFit,
    Predictor,
    fit_estimator,
    fit_full,
    fit_level1,
    fit_level2,
    fit_level3,
    fit_listing1,
    fit_listing2,
    wrap_dp_as_cf,
)
from cfdp.metrics import acf_estimate, dp_test, group_order_report, kruskal_wallis, rmse
from cfdp.scm import Dataset, UnseenGroupError

from conftest import linear_gaussian_data


def labels_only(groups, y):
    """Dataset whose only information is the label; features are a dummy column."""
    return Dataset(groups, np.zeros((len(y), 1)), y, ("x",))


@pytest.fixture(scope="module")
def law_split(law_school_data):
    return law_school_data.split(0.8, 7)


@pytest.fixture(scope="module")
def law_fits(law_split):
    train, _ = law_split
    return {name: fit_estimator(name, train) for name in ESTIMATORS}


# linear fits


def test_linear_fit_recovers_exact_line():
    x = np.linspace(-3, 3, 50)
    fit = LinearFit.fit(x, 2 * x - 1, ("x",))
    assert abs(fit.coef[0] - 2) < 1e-8 and abs(fit.intercept + 1) < 1e-8


def test_linear_fit_handles_collinear_columns():
    x = np.linspace(0, 1, 30)
    fit = LinearFit.fit(np.column_stack([x, x]), x, ("a", "b"))
    assert np.all(np.isfinite(fit.coef))
    np.testing.assert_allclose(fit.predict(np.column_stack([x, x])), x, atol=1e-6)


# Level 1


def test_level1_exact_fit():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 2))
    data = Dataset(rng.choice(["a", "b"], 200), x, x[:, 0], ("x1", "x2"))
    pred = fit_level1(data)
    np.testing.assert_allclose(pred.fit_.coef, [1.0, 0.0], atol=1e-8)
    assert abs(pred.fit_.intercept) < 1e-8


def test_level1_group_only_outcome_gives_mean():
    rng = np.random.default_rng(1)
    g = rng.integers(0, 2, 5000)
    data = Dataset([f"g{k}" for k in g], rng.normal(size=(5000, 1)), 3.0 * g, ("x",))
    yhat = fit_level1(data).predict(data)
    assert np.ptp(yhat) < 0.2
    assert abs(yhat.mean() - data.outcome.mean()) < 1e-9
    assert rmse(yhat, data.outcome) == pytest.approx(data.outcome.std(), rel=1e-3)


def test_level1_ignores_group():
    data = linear_gaussian_data(300, [1.0, 0.5], [1.0, 1.0], seed=2)
    pred = fit_level1(data)
    for a in data.levels:
        assert np.array_equal(pred.predict_counterfactual(data, a), pred.predict(data))


def test_level1_law_school_fails_parity(law_fits, law_split):
    assert dp_test(law_fits["level1"], law_split[1]).p < 1e-6


# Level 2 and Level 3


@pytest.mark.parametrize("name", ["level2", "level3"])
def test_latent_levels_are_zero_zero_acf(name, law_fits, law_split):
    pred, test = law_fits[name], law_split[1]
    for a in test.levels:
        assert np.array_equal(pred.predict_counterfactual(test, a), pred.predict(test))
    assert acf_estimate(pred, test, 0.0).delta == 0.0


def test_level2_tracks_true_latent():
    data = linear_gaussian_data(10**4, [1.0, 0.8, 1.2], [0.5, 0.5, 0.5], offsets=[[0, 1], [0, -1], [0, 2]], seed=3)
    train, test = data.split(0.8, 3)
    pred = fit_level2(train)
    assert np.corrcoef(pred.predict(test), test.latent["u"])[0, 1] > 0.7


def test_level2_law_school_parity(law_fits, law_split):
    assert dp_test(law_fits["level2"], law_split[1]).p > 0.05


def test_level3_without_group_structure_matches_level1():
    data = linear_gaussian_data(2000, [1.0, 0.5], [1.0, 1.0], seed=4)
    l1, l3 = fit_level1(data).predict(data), fit_level3(data).predict(data)
    # residualizing on group means only moves the intercept when x is independent of the group
    assert np.corrcoef(l1, l3)[0, 1] > 0.99


def test_level3_pure_group_features_give_constant():
    rng = np.random.default_rng(5)
    g = rng.integers(0, 3, 1000)
    x = np.column_stack([1.0 * g, -2.0 * g])
    data = Dataset([f"g{k}" for k in g], x, g + rng.normal(size=1000), ("x1", "x2"))
    pred = fit_level3(data)
    assert np.max(np.abs(pred.explanation(data))) < 1e-6
    assert np.ptp(pred.predict(data)) < 1e-5


# Listing 1


def test_listing1_single_group_is_identity():
    y = np.array([1.0, 4.0, 2.5, 9.0])
    data = labels_only(["a"] * 4, y)
    np.testing.assert_allclose(fit_listing1(data).predict(data), y, atol=1e-12)


def test_listing1_hand_case():
    data = labels_only(["A", "A", "B", "B"], [0.0, 2.0, 10.0, 14.0])
    pred = fit_listing1(data)
    assert pred.stats.mu == 6.5
    assert pred.stats.sigma == pytest.approx(np.sqrt(32.75), abs=1e-12)
    out = pred.predict(data)
    np.testing.assert_allclose(out, [0.7772, 12.2228, 0.7772, 12.2228], atol=1e-3)


@given(st.integers(0, 10**6))
def test_listing1_matches_population_moments(seed):
    rng = np.random.default_rng(seed)
    g = np.repeat(["a", "b", "c"], [30, 50, 70])
    y = rng.normal(size=150) * np.repeat([1.0, 3.0, 0.5], [30, 50, 70]) + np.repeat([0.0, 5.0, -2.0], [30, 50, 70])
    data = labels_only(g, y)
    out = fit_listing1(data).predict(data)
    for a in "abc":
        assert abs(out[g == a].mean() - y.mean()) < 1e-9
        assert abs(out[g == a].std() - y.std()) < 1e-9


def test_listing1_parity_on_shifted_gaussians():
    rng = np.random.default_rng(6)
    g = np.repeat(["a", "b"], 2000)
    y = np.concatenate([rng.normal(0, 1, 2000), rng.normal(2, 1.5, 2000)])
    data = labels_only(g, y)
    assert kruskal_wallis(fit_listing1(data).predict(data), g).p > 0.5


def test_listing1_rejects_degenerate_group():
    with pytest.raises(ValueError, match="'b'"):
        fit_listing1(labels_only(["a", "a", "b", "b"], [0.0, 1.0, 3.0, 3.0]))
    with pytest.raises(ValueError, match="at least 2 rows"):
        fit_listing1(labels_only(["a", "a", "b"], [0.0, 1.0, 3.0]))


# Listing 2


def test_listing2_hand_case():
    data = labels_only(["A"] * 3 + ["B"] * 3, [1.0, 2.0, 3.0, 10.0, 20.0, 30.0])
    pred = fit_listing2(data)
    assert pred.predict(data).tolist() == [2.0, 10.0, 30.0, 2.0, 10.0, 30.0]
    probe = labels_only(["A", "B"], [2.0, 20.0])
    assert pred.predict(probe).tolist() == [10.0, 10.0]


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60))
def test_listing2_single_group_is_identity(y):
    data = labels_only(["a"] * len(y), y)
    assert fit_listing2(data).predict(data).tolist() == [float(v) for v in y]


def test_listing2_distribution_free_where_listing1_is_not():
    rng = np.random.default_rng(0)
    g = np.repeat(["a", "b"], 2000)
    y = np.concatenate([rng.lognormal(0, 0.25, 2000), rng.lognormal(1, 1.0, 2000)])
    data = labels_only(g, y)
    p1 = kruskal_wallis(fit_listing1(data).predict(data), g).p
    p2 = kruskal_wallis(fit_listing2(data).predict(data), g).p
    assert p2 > 0.5
    assert p1 < p2


def test_listing2_ties_map_together():
    data = labels_only(["a"] * 4 + ["b"] * 2, [1.0, 1.0, 2.0, 3.0, 5.0, 6.0])
    out = fit_listing2(data).predict(data)
    assert out[0] == out[1]


@pytest.mark.parametrize("fit", [fit_listing1, fit_listing2])
def test_listings_strictly_monotone_within_group(fit):
    rng = np.random.default_rng(7)
    g = rng.choice(["a", "b", "c"], 500)
    y = rng.gamma(2.0, 1.0, 500) + (g == "b") * 3
    data = labels_only(g, y)
    out = fit(data).predict(data)
    for a in "abc":
        order = np.argsort(y[g == a])
        assert np.all(np.diff(out[g == a][order]) > 0)
    assert group_order_report(y, out, g).preserved


# Full linear model


def test_full_perfect_fit_on_group_indicator():
    g = np.array(["a", "b"] * 50)
    data = Dataset(g, np.random.default_rng(8).normal(size=(100, 1)), (g == "b").astype(float), ("x",))
    pred = fit_full(data)
    assert rmse(pred.predict(data), data.outcome) < 1e-6


def test_full_counterfactual_shift_equals_coefficient_gap(law_fits, law_split):
    pred, test = law_fits["full"], law_split[1]
    effects = pred.group_effects
    for a in test.levels:
        for b in test.levels:
            gap = pred.predict_counterfactual(test, b) - pred.predict_counterfactual(test, a)
            np.testing.assert_allclose(gap, effects[b] - effects[a], atol=1e-9)


def test_full_law_school(law_fits, law_split):
    test = law_split[1]
    assert dp_test(law_fits["full"], test).p < 1e-6
    scores = {name: rmse(pred.predict(test), test.outcome) for name, pred in law_fits.items()}
    assert scores["full"] == min(scores.values())


def test_rmse_ordering_on_law_school(law_fits, law_split):
    test = law_split[1]
    s = {name: rmse(law_fits[name].predict(test), test.outcome) for name in ("full", "listing1", "listing2", "level2")}
    assert s["full"] <= s["listing1"] <= s["level2"]
    assert s["full"] <= s["listing2"] <= s["level2"]


# identity wrapper


@pytest.mark.parametrize("base", ["level1", "full", "listing1", "listing2"])
def test_wrapper_is_intervention_invariant(base, law_school_model):
    from cfdp.scm import sample_dataset

    data = sample_dataset(law_school_model, 10**4, 11)
    inner = fit_estimator(base, data)
    wrapped = wrap_dp_as_cf(inner)
    factual = wrapped.predict(data)
    assert np.array_equal(factual, inner.predict(data))
    for a in data.levels:
        assert np.array_equal(wrapped.predict_counterfactual(data, a), factual)
    for eps in (0.0, 0.1, 10.0):
        assert acf_estimate(wrapped, data, eps).delta == 0.0


def test_wrapped_listing1_has_identical_kw(law_fits, law_split):
    test = law_split[1]
    a, b = dp_test(law_fits["listing1"], test), dp_test(wrap_dp_as_cf(law_fits["listing1"]), test)
    assert (a.H, a.p) == (b.H, b.p)


def test_intervention_invariant_with_independent_latent_passes_parity():
    # any predictor that is a fixed function of a group-independent latent
    data = linear_gaussian_data(10**4, [1.0, 1.0], [0.3, 0.3], offsets=[[0, 2], [0, -3]], seed=12)
    for name in ("level2", "level3"):
        pred = fit_estimator(name, data)
        for a in data.levels:
            assert np.array_equal(pred.predict_counterfactual(data, a), pred.predict(data))
        assert kruskal_wallis(next(iter(pred.latent(data).values())), data.groups).p > 0.01
        assert dp_test(pred, data).p > 0.01


# contract


@pytest.mark.parametrize("name", [*ESTIMATORS, "dp_wrapped:listing2"])
def test_serialization_round_trip(name, law_fits, law_split):
    train, test = law_split
    pred = law_fits[name] if name in law_fits else fit_estimator(name, train)
    again = Predictor.from_dict(json.loads(json.dumps(pred.to_dict())))
    assert again.kind == pred.kind
    assert np.array_equal(again.predict(test), pred.predict(test))
    a = test.levels[-1]
    assert np.array_equal(again.predict_counterfactual(test, a), pred.predict_counterfactual(test, a))


@pytest.mark.parametrize("name", ESTIMATORS)
def test_refit_is_bit_identical(name, law_split):
    train, _ = law_split
    assert json.dumps(fit_estimator(name, train).to_dict()) == json.dumps(fit_estimator(name, train).to_dict())


@pytest.mark.parametrize("name", ESTIMATORS)
def test_unseen_group_is_an_error(name, law_fits, law_split):
    test = law_split[1]
    with pytest.raises(UnseenGroupError):
        law_fits[name].predict_counterfactual(test, "race=9;sex=9")


def test_schema_mismatch_is_an_error(law_fits, law_split):
    test = law_split[1]
    renamed = Dataset(test.groups, test.features, test.outcome, tuple(reversed(test.feature_names)))
    with pytest.raises(ValueError, match="schema"):
        law_fits["full"].predict(renamed)


def test_listing_input_full_uses_full_predictions(law_split):
    train, test = law_split
    full = fit_full(train).predict(test)
    for name in ("listing1", "listing2"):
        out = fit_estimator(name, train, listing_input="full").predict(test)
        assert group_order_report(full, out, test.groups).preserved


def test_unknown_estimator():
    with pytest.raises(ValueError, match="unknown estimator"):
        fit_estimator("level4", linear_gaussian_data(10, [1.0], [1.0]))
