import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from smm.data import Dataset, Schema, Variable, WeightedDataset, uniform_weights
from smm.tree import (
    BIC,
    ML,
    Branch,
    Gaussian,
    Leaf,
    LearningError,
    Multinomial,
    ScoreKind,
    Split,
    TreeModel,
    candidate_split_points,
    default_variance_floor,
    learn_tree,
    model_score,
    split_points,
    weighted_leaf_fit,
)


def binary_schema(n_pred):
    return Schema(tuple(Variable(f"X{j}", ("0", "1")) for j in range(n_pred)) + (Variable("Y", ("0", "1")),))


def weighted(schema, values, w=None):
    d = Dataset(schema, np.asarray(values, dtype=float))
    return uniform_weights(d) if w is None else WeightedDataset(d, w)


# -- leaf fitting ---------------------------------------------------------


def test_multinomial_leaf_without_smoothing():
    leaf = weighted_leaf_fit([0, 0, 0, 1], [1, 1, 1, 1], 2, alpha=0.0)
    np.testing.assert_allclose(leaf.probs, [0.75, 0.25], rtol=0, atol=1e-15)


def test_multinomial_leaf_add_one():
    leaf = weighted_leaf_fit([0, 0, 0, 1], [1, 1, 1, 1], 2, alpha=1.0)
    np.testing.assert_allclose(leaf.probs, [4 / 6, 2 / 6], rtol=0, atol=1e-15)


def test_fractional_counts_enter_the_leaf():
    leaf = weighted_leaf_fit([0, 1, 1], [0.5, 0.25, 0.25], 2, alpha=0.0)
    np.testing.assert_allclose(leaf.probs, [0.5, 0.5])


def test_gaussian_leaf_ml_variance():
    leaf = weighted_leaf_fit(np.array([0.0, 2.0]), [1, 1], None, floor=1e-9)
    assert leaf.mean == 1.0 and leaf.var == 1.0


def test_gaussian_leaf_floor_and_zero_count():
    leaf = weighted_leaf_fit(np.array([3.0, 3.0]), [1, 1], None, floor=0.01)
    assert leaf.var == 0.01
    with pytest.raises(LearningError):
        weighted_leaf_fit(np.array([3.0]), [0.0], None)


def test_variance_floor_rule():
    assert default_variance_floor([5.0, 5.0]) == 1e-9
    col = np.array([0.0, 2000.0])
    assert default_variance_floor(col) == pytest.approx(1e-6 * np.var(col))


@settings(max_examples=60, deadline=None)
@given(
    y=st.lists(st.integers(0, 3), min_size=1, max_size=30),
    alpha=st.floats(0.01, 5.0),
    data=st.data(),
)
def test_multinomial_leaf_on_simplex(y, alpha, data):
    w = data.draw(st.lists(st.floats(0.0, 1.0), min_size=len(y), max_size=len(y)))
    leaf = weighted_leaf_fit(y, w, 4, alpha)
    assert abs(leaf.probs.sum() - 1.0) <= 1e-12
    assert np.all(leaf.probs > 0)
    np.testing.assert_allclose(leaf.probs, oracles.multinomial_leaf(y, w, 4, alpha), rtol=1e-12)


# -- model score ----------------------------------------------------------


def _half_tree():
    schema = Schema((Variable("Y", ("0", "1")),))
    return schema, TreeModel(schema, 0, Leaf(Multinomial(np.array([0.5, 0.5]))))


def test_ml_of_uniform_leaf():
    schema, tree = _half_tree()
    wd = weighted(schema, [[0], [1], [0], [1]])
    assert model_score(tree, wd, ML) == pytest.approx(4 * math.log(0.5), abs=1e-12)
    assert round(model_score(tree, wd, ML), 4) == -2.7726


def test_bic_of_uniform_leaf():
    schema, tree = _half_tree()
    wd = weighted(schema, [[0], [1], [0], [1]])
    expected = 4 * math.log(0.5) - 0.5 * math.log(4)
    assert model_score(tree, wd, BIC) == pytest.approx(expected, abs=1e-12)
    assert round(model_score(tree, wd, BIC), 4) == -3.4657
    assert model_score(tree, wd, ScoreKind.parse("bic-fractional")) == pytest.approx(expected)


def test_bic_sample_size_variants_differ_on_fractional_data():
    schema, tree = _half_tree()
    wd = weighted(schema, [[0], [1], [0], [1]], [0.5, 0.5, 0.5, 0.5])
    ml = model_score(tree, wd, ML)
    assert model_score(tree, wd, BIC) == pytest.approx(ml - 0.5 * math.log(4))
    assert model_score(tree, wd, ScoreKind.parse("bic-fractional")) == pytest.approx(ml - 0.5 * math.log(2))


def test_penalized_with_kappa_one_is_ml():
    schema, tree = _half_tree()
    wd = weighted(schema, [[0], [1], [1]])
    assert model_score(tree, wd, ScoreKind("penalized", kappa=1.0)) == model_score(tree, wd, ML)
    k = ScoreKind.parse("penalized:0.5")
    assert model_score(tree, wd, k) == pytest.approx(model_score(tree, wd, ML) + math.log(0.5))


def test_score_kind_validation():
    for bad in ("nope", "penalized:0", "penalized:1.5"):
        with pytest.raises(ValueError):
            ScoreKind.parse(bad)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_unit_weight_ml_is_plain_log_likelihood(seed):
    rng = np.random.default_rng(seed)
    schema = binary_schema(2)
    values = rng.integers(0, 2, size=(12, 3))
    tree = learn_tree(weighted(schema, values), "Y", max_leaves=3)
    direct = sum(
        math.log(tree.predict_proba(row[None, :])[0, int(row[2])]) for row in values.astype(float)
    )
    assert model_score(tree, weighted(schema, values), ML) == pytest.approx(direct, abs=1e-10)


# -- split points ---------------------------------------------------------


def test_split_points_for_one_to_seven():
    assert split_points(np.arange(1.0, 8.0), np.ones(7)) == [1.5, 2.5, 3.5, 4.5, 5.5, 6.5]


def test_split_points_follow_the_weights():
    # CDF = 1/8, 2/8, 3/8, 1: levels from 4/8 on land on the maximum
    assert split_points([1.0, 2.0, 3.0, 4.0], [1, 1, 1, 5]) == [1.5, 2.5, 3.5]


def test_split_points_degenerate_cases():
    assert split_points([2.0, 2.0, 2.0], [1, 1, 1]) == []
    assert split_points([0.0, 1.0, 0.0, 1.0], [1, 1, 1, 1]) == [0.5]
    assert split_points([0.0, 9.0, 1.0], [1, 0, 1]) == [0.5]
    with pytest.raises(LearningError):
        split_points([0.0, 1.0], [0, 0])


def test_candidate_split_points_needs_continuous_variable():
    schema = Schema((Variable("A", ("a", "b")), Variable("X")))
    wd = weighted(schema, [[0, 1.0], [1, 2.0]])
    assert candidate_split_points(wd, "X") == [1.5]
    with pytest.raises(ValueError):
        candidate_split_points(wd, "A")


@settings(max_examples=80, deadline=None)
@given(
    x=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60),
    data=st.data(),
)
def test_split_points_are_few_sorted_and_interior(x, data):
    w = data.draw(st.lists(st.floats(0.01, 1.0), min_size=len(x), max_size=len(x)))
    pts = split_points(x, w)
    assert len(pts) <= 7
    assert pts == sorted(set(pts))
    for t in pts:
        assert min(x) < t < max(x) or min(x) <= t <= max(x)
        assert any(v < t for v in x) and any(v >= t for v in x)


# -- learn_tree -----------------------------------------------------------


def test_learns_the_determining_predictor():
    schema = binary_schema(2)
    values = [[a, b, a] for a, b in [(0, 0), (0, 1), (1, 0), (1, 1)] * 2]
    tree = learn_tree(weighted(schema, values), "Y", max_leaves=2, alpha=0.0)
    assert isinstance(tree.root, Branch) and tree.root.split.var == 0
    for leaf in tree.leaves:
        assert max(leaf.dist.probs) == 1.0
    best, argmax, _ = oracles.exhaustive_first_split(
        np.array(values)[:, :2], np.array(values)[:, 2], np.ones(8), 2, 0.0
    )
    assert argmax == {0}
    assert model_score(tree, weighted(schema, values), ML) == pytest.approx(best, abs=1e-12)


def test_one_leaf_bound_gives_marginal():
    schema = binary_schema(2)
    values = [[a, b, a] for a, b in [(0, 0), (0, 1), (1, 0), (1, 1)]]
    tree = learn_tree(weighted(schema, values), "Y", max_leaves=1)
    assert tree.leaf_count == 1 and isinstance(tree.root, Leaf)


def test_empty_predictor_set_and_zero_weight():
    schema = binary_schema(1)
    tree = learn_tree(weighted(schema, [[0, 1], [1, 0]]), "Y", predictors=[], max_leaves=4)
    assert tree.leaf_count == 1
    with pytest.raises(LearningError):
        learn_tree(weighted(schema, [[0, 1], [1, 0]], [0.0, 0.0]), "Y")


def test_ties_go_to_the_earlier_predictor():
    schema = binary_schema(3)
    values = [[a, 1 - a, a, a] for a in (0, 1, 0, 1, 0, 1)]
    tree = learn_tree(weighted(schema, values), "Y", max_leaves=2)
    assert tree.root.split.var == 0


def test_min_split_weight_blocks_thin_children():
    schema = binary_schema(1)
    values = [[0, 0]] * 6 + [[1, 1]]
    assert learn_tree(weighted(schema, values), "Y", min_split_weight=1.0).leaf_count == 2
    assert learn_tree(weighted(schema, values), "Y", min_split_weight=2.0).leaf_count == 1


def test_regression_tree_on_a_step():
    schema = Schema((Variable("X"), Variable("Y")))
    x = np.linspace(0, 1, 40)
    y = np.where(x < 0.5, -3.0, 3.0) + 0.01 * np.sin(40 * x)
    tree = learn_tree(weighted(schema, np.column_stack([x, y])), "Y", max_leaves=2)
    assert tree.root.split.var == 0 and 0.4 < tree.root.split.threshold < 0.6
    means = sorted(leaf.dist.mean for leaf in tree.leaves)
    assert means[0] == pytest.approx(-3.0, abs=0.02) and means[1] == pytest.approx(3.0, abs=0.02)


def test_continuous_predictor_discrete_target():
    schema = Schema((Variable("X"), Variable("Y", ("a", "b"))))
    x = np.arange(16.0)
    values = np.column_stack([x, (x >= 8).astype(float)])
    tree = learn_tree(weighted(schema, values), "Y", max_leaves=4, alpha=0.0)
    assert tree.root.split.threshold == 7.5


def test_target_cannot_split_on_itself():
    schema = binary_schema(1)
    with pytest.raises(ValueError):
        learn_tree(weighted(schema, [[0, 0], [1, 1]]), "Y", predictors=["Y"])


def test_split_on_target_variable_rejected_in_model():
    schema = binary_schema(1)
    leaf = Leaf(Multinomial(np.array([0.5, 0.5])))
    with pytest.raises(ValueError):
        TreeModel(schema, 1, Branch(Split(1, state=0), leaf, leaf))


def _random_instance(rng, n_pred, n_cases):
    x = rng.integers(0, 2, size=(n_cases, n_pred))
    y = rng.integers(0, 2, size=n_cases)
    w = rng.uniform(0.05, 1.0, size=n_cases)
    return x, y, w


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), n_pred=st.integers(1, 4), n_cases=st.integers(2, 16))
def test_first_split_matches_exhaustive_search(seed, n_pred, n_cases):
    rng = np.random.default_rng(seed)
    x, y, w = _random_instance(rng, n_pred, n_cases)
    schema = binary_schema(n_pred)
    wd = weighted(schema, np.column_stack([x, y]), w)
    tree = learn_tree(wd, n_pred, max_leaves=2, alpha=1.0, min_split_weight=0.5)
    best, argmax, root = oracles.exhaustive_first_split(x, y, w, 2, 1.0, gamma=0.5)
    if best - root > 1e-10:
        assert tree.leaf_count == 2 and tree.root.split.var in argmax
    else:
        assert tree.leaf_count == 1
    assert model_score(tree, wd, ML) == pytest.approx(max(best, root), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 100_000),
    leaves=st.integers(1, 8),
    scale=st.floats(0.05, 0.95),
)
def test_scale_invariance_of_greedy_path(seed, leaves, scale):
    rng = np.random.default_rng(seed)
    schema = Schema((Variable("A", ("0", "1", "2")), Variable("X"), Variable("Y", ("0", "1"))))
    n = 40
    values = np.column_stack(
        [rng.integers(0, 3, n), rng.normal(size=n), rng.integers(0, 2, n)]
    ).astype(float)
    w = rng.uniform(0.1, 1.0, n)
    a = learn_tree(weighted(schema, values, w), "Y", max_leaves=leaves, alpha=0.0, min_split_weight=0.0)
    b = learn_tree(weighted(schema, values, w * scale), "Y", max_leaves=leaves, alpha=0.0, min_split_weight=0.0)
    assert a.to_text() == b.to_text()
    assert model_score(b, weighted(schema, values, w * scale)) == pytest.approx(
        scale * model_score(a, weighted(schema, values, w)), rel=1e-9
    )


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), leaves=st.integers(1, 10))
def test_leaf_bound_monotone_refit_and_consistent_paths(seed, leaves):
    rng = np.random.default_rng(seed)
    schema = Schema((Variable("A", ("0", "1", "2")), Variable("X"), Variable("Y", ("0", "1", "2"))))
    n = 60
    values = np.column_stack(
        [rng.integers(0, 3, n), rng.normal(size=n), rng.integers(0, 3, n)]
    ).astype(float)
    wd = weighted(schema, values, rng.uniform(0.0, 1.0, n))
    tree = learn_tree(wd, "Y", max_leaves=leaves)
    assert tree.leaf_count == len(tree.leaves) <= leaves
    single = learn_tree(wd, "Y", max_leaves=1)
    assert model_score(tree, wd) >= model_score(single, wd) - 1e-12
    smaller = learn_tree(wd, "Y", max_leaves=max(1, leaves - 1))
    assert model_score(tree, wd) >= model_score(smaller, wd) - 1e-12
    # every leaf is reachable by at least one training case
    assert set(np.unique(tree.apply(values))) == set(range(tree.leaf_count))


@pytest.mark.parametrize("scale", [1.0, 0.5, 0.3, 0.9])
def test_mirrored_discrete_split_breaks_tie_by_state(scale):
    # A takes only states 0 and 2 here, so "A == 0" and "A == 2" are the same partition
    rng = np.random.default_rng(3373)
    schema = Schema((Variable("A", ("0", "1", "2")), Variable("Y", ("0", "1"))))
    a = rng.choice([0, 2], size=30)
    y = np.where(rng.random(30) < 0.8, a == 2, a == 0).astype(int)
    w = rng.uniform(0.1, 1.0, 30) * scale
    tree = learn_tree(weighted(schema, np.column_stack([a, y]).astype(float), w), "Y", max_leaves=2, alpha=0.0,
                      min_split_weight=0.0)
    assert tree.to_text().splitlines()[0] == "if A == 0"
