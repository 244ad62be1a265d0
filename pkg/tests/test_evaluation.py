import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from smm.bayesnet import BayesNetComponent
from smm.data import Dataset, Schema, Variable, holdout_split, uniform_weights
from smm.evaluation import (
    TuneConfig,
    accuracy,
    conditional_log_score,
    curve_experiment,
    learn_baseline,
    log_score,
    predict_proba,
    task_score,
    tune,
    tune_baseline,
    write_curves,
)
from smm.mixture import AddComponentConfig, LearnerConfig, StagedMixture, fit_smm
from smm.synth import random_product_spec, sample
from smm.tree import Gaussian, Leaf, Multinomial, TreeModel, learn_tree

CLS = Schema((Variable("A", ("0", "1")), Variable("Y", ("0", "1"))), target="Y")


def test_constant_density_scores_minus_one():
    schema = Schema((Variable("X"),))
    # a Gaussian with variance 1/(2 pi) has density 1 at its mean; shift by ln e
    var = math.exp(2.0) / (2 * math.pi)
    comp = BayesNetComponent(schema, [TreeModel(schema, 0, Leaf(Gaussian(0.0, var)))])
    t = Dataset(schema, np.zeros((5, 1)))
    assert log_score(comp, t) == pytest.approx(-1.0, abs=1e-12)


def test_uniform_over_four_states():
    schema = Schema((Variable("A", ("0", "1")), Variable("B", ("0", "1"))))
    comp = BayesNetComponent(
        schema, [TreeModel(schema, j, Leaf(Multinomial(np.array([0.5, 0.5])))) for j in range(2)]
    )
    m = StagedMixture(schema, [comp], [1.0])
    t = Dataset(schema, np.array([[0, 0], [1, 0], [1, 1]], dtype=float))
    assert log_score(m, t) == pytest.approx(math.log(0.25), abs=1e-15)


def test_conditional_scores_for_trees():
    half = TreeModel(CLS, 1, Leaf(Multinomial(np.array([0.5, 0.5]))))
    t = Dataset(CLS, np.array([[0, 0], [1, 1], [0, 1]], dtype=float))
    assert conditional_log_score(half, t) == pytest.approx(math.log(0.5))
    perfect = learn_tree(uniform_weights(t.subset([0, 1])), "Y", max_leaves=2, alpha=0.0)
    assert conditional_log_score(perfect, t.subset([0, 1])) == 0.0
    assert accuracy(perfect, t.subset([0, 1])) == 1.0


def test_conditional_score_of_a_joint_model_normalizes_over_the_target():
    schema = Schema((Variable("A", ("0", "1")), Variable("Y", ("0", "1"))))
    rng = np.random.default_rng(0)
    a = rng.integers(0, 2, 200)
    y = np.where(rng.random(200) < 0.8, a, 1 - a)
    d = Dataset(schema, np.column_stack([a, y]))
    joint = fit_smm(d, 1, AddComponentConfig(learner=LearnerConfig(max_leaves=2)))[0]
    labelled = Dataset(Schema(schema.variables, target="Y"), d.values)
    scores = np.exp([conditional_log_score(joint, labelled.subset([i])) for i in range(4)])
    p = predict_proba(joint, labelled.values[:4], target=1)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    np.testing.assert_allclose(scores, p[np.arange(4), y[:4].astype(int)])


def test_accuracy_ties_pick_lowest_class():
    flat = TreeModel(CLS, 1, Leaf(Multinomial(np.array([0.5, 0.5]))))
    t = Dataset(CLS, np.array([[0, 0], [1, 0], [0, 1]], dtype=float))
    assert accuracy(flat, t) == pytest.approx(2 / 3)


def test_accuracy_needs_a_target():
    schema = Schema((Variable("A", ("0", "1")),))
    comp = BayesNetComponent(schema, [TreeModel(schema, 0, Leaf(Multinomial(np.array([0.5, 0.5]))))])
    with pytest.raises(ValueError):
        accuracy(comp, Dataset(schema, np.zeros((2, 1))))


def test_mixture_no_worse_than_its_first_component_on_held_out_data():
    spec = random_product_spec(6, 3, 3, 0.85, seed=8)
    train, test = sample(spec, 3000, seed=1), sample(spec, 1000, seed=2)
    stages = fit_smm(train, 4, AddComponentConfig(learner=LearnerConfig(max_leaves=4), pi_init=0.5))
    assert log_score(stages[-1], test) >= log_score(stages[0], test) - 0.01


# -- tuning ---------------------------------------------------------------


def _data(n=800, seed=0):
    spec = random_product_spec(5, 3, 3, 0.85, seed=seed)
    return sample(spec, n, seed=seed)


def test_singleton_grid():
    d = _data()
    res = tune(d, TuneConfig(leaf_grid=(2,), pi_grid=(0.3,), n_components=3))
    assert (res.best_leaves, res.best_pi) == (2, 0.3) and len(res.table) == 1
    train, hold = holdout_split(d, 0.7, 0)
    cfg = AddComponentConfig(learner=LearnerConfig(max_leaves=2), pi_init=0.3)
    cfg = replace(cfg, schedule=replace(cfg.schedule, max_outer=5))
    assert res.table[0][2] == task_score(fit_smm(train, 3, cfg)[-1], hold)


def test_tune_returns_the_best_cell_and_is_deterministic(tmp_path):
    d = _data(600, seed=4)
    cfg = TuneConfig(leaf_grid=(1, 4), pi_grid=(0.05, 0.5), n_components=3, seed=2)
    a = tune(d, cfg)
    b = tune(d, cfg)
    assert a.table == b.table
    best = max(row[2] for row in a.table)
    assert (a.best_leaves, a.best_pi, best) in a.table
    a.write_table(tmp_path / "t.csv")
    a.write_surface(tmp_path / "s.csv")
    surface = list(csv.reader(open(tmp_path / "s.csv")))
    assert surface[0] == ["pi_init", "n1", "n2", "n3"]
    assert [r[0] for r in surface[1:]] == ["0.05", "0.5"]


def test_tune_parallel_matches_serial():
    d = _data(400, seed=6)
    base = TuneConfig(leaf_grid=(2, 3), pi_grid=(0.2, 0.4), n_components=2)
    serial = tune(d, base)
    parallel = tune(d, replace(base, n_jobs=2))
    assert serial.table == parallel.table


def test_tune_config_validation():
    with pytest.raises(ValueError):
        TuneConfig(leaf_grid=())
    with pytest.raises(ValueError):
        TuneConfig(n_components=0)


# -- curves ---------------------------------------------------------------


def test_curve_experiment_one_stage_equals_first_component(tmp_path):
    train, test = _data(500, 1), _data(200, 2)
    cfg = AddComponentConfig(learner=LearnerConfig(max_leaves=2))
    curves = curve_experiment(train, test, cfg, n_components=1)
    first = fit_smm(train, 1, cfg)[0]
    assert len(curves) == 1 and len(curves[0].records) == 1
    assert curves[0].records[0].test_log_score == log_score(first, test)


def test_curve_experiment_schedules_and_backfit_modes(tmp_path):
    train, test = _data(500, 1), _data(200, 2)
    cfg = AddComponentConfig(learner=LearnerConfig(max_leaves=2))
    curves = curve_experiment(
        train, test, cfg, n_components=3, schedules=["SMM", "1-1-1"], backfit_modes=["none", "weights"]
    )
    assert [(c.schedule, c.backfit) for c in curves] == [
        ("SMM", "none"), ("SMM", "weights"), ("1-1-1", "none"), ("1-1-1", "weights"),
    ]
    assert all([r.n_components for r in c.records] == [1, 2, 3] for c in curves)
    write_curves(curves, tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["schedule", "backfit", "n_components", "train_log_score", "test_log_score", "test_accuracy"]
    assert len(rows) == 13
    write_curves(curves, tmp_path / "t.csv", timing=True)
    assert next(csv.reader(open(tmp_path / "t.csv")))[-1] == "wall_time"


# -- baseline -------------------------------------------------------------


def test_baseline_with_kappa_one_grows_until_no_gain():
    rng = np.random.default_rng(0)
    schema = Schema(tuple(Variable(f"X{j}", ("0", "1")) for j in range(4)) + (Variable("Y", ("0", "1")),), target="Y")
    d = Dataset(schema, rng.integers(0, 2, size=(200, 5)))
    full = learn_baseline(d, kappa=1.0, gamma=1.0, alpha=1.0)
    assert full.leaf_count > 2
    unbounded = learn_tree(uniform_weights(d), "Y", max_leaves=10_000)
    assert full.to_text() == unbounded.to_text()


def test_smaller_kappa_means_fewer_leaves():
    d = _data(1000, 3)
    sizes = []
    for kappa in (1.0, 0.5, 0.01):
        bn = learn_baseline(d, kappa=kappa, gamma=1.0)
        sizes.append(sum(t.leaf_count for t in bn.trees))
    assert sizes[0] >= sizes[1] >= sizes[2] and sizes[0] > sizes[2]


def test_tune_baseline_picks_from_its_table():
    d = _data(600, 5)
    kappa, gamma, table = tune_baseline(d, kappas=(0.1, 0.9), gammas=(1, 25))
    assert len(table) == 4
    assert max(r[2] for r in table) == next(r[2] for r in table if r[:2] == (kappa, gamma))


def test_smm_beats_baseline_on_mixture_data():
    spec = random_product_spec(8, 3, 3, 0.9, seed=1)
    train, test = sample(spec, 4000, seed=1), sample(spec, 1000, seed=2)
    base = learn_baseline(train, *tune_baseline(train)[:2])
    smm = fit_smm(train, 8, AddComponentConfig(learner=LearnerConfig(max_leaves=8), pi_init=0.5))[-1]
    assert log_score(smm, test) >= log_score(base, test)
