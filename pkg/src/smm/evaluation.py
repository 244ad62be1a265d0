"""Metrics, holdout tuning, curve experiments and single-model baselines."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from joblib import Parallel, delayed

from .backfit import mixture_weight_backfit, structure_backfit
from .bayesnet import BayesNetComponent, learn_bayesnet
from .data import Dataset, holdout_split, uniform_weights
from .mixture import (
    NAMED_SCHEDULES,
    AddComponentConfig,
    Schedule,
    StagedMixture,
    fit_smm,
)
from .tree import ScoreKind, TreeModel, learn_tree

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Metrics


def _log_scores(model, values: np.ndarray) -> np.ndarray:
    if isinstance(model, StagedMixture):
        return model.log_predictive(values)
    if isinstance(model, (TreeModel, BayesNetComponent)):
        return model.log_prob(values)
    from .synth import GenerativeSpec, true_log_density

    if isinstance(model, GenerativeSpec):
        return true_log_density(model, values)
    raise TypeError(f"cannot score a {type(model).__name__}")


def _is_conditional(model) -> bool:
    return isinstance(model, TreeModel) or (
        isinstance(model, StagedMixture) and model.task == "classification"
    )


def log_score(model, t: Dataset) -> float:
    """Mean natural-log density of the test cases."""
    if len(t) == 0:
        raise ValueError("empty test set")
    return math.fsum(_log_scores(model, t.values)) / len(t)


def conditional_log_scores(model, t: Dataset) -> np.ndarray:
    """Per-case ln p(target | inputs).

    Classifiers score directly; joint density models are conditioned by
    normalising over the target's states.
    """
    if _is_conditional(model):
        return _log_scores(model, t.values)
    ti = t.schema.target_index
    if ti is None:
        raise ValueError("conditional scoring needs a schema target")
    joint = _joint_over_target(model, t.values, ti)
    y = t.values[:, ti].astype(np.intp)
    m = joint.max(axis=1)
    norm = m + np.log(np.exp(joint - m[:, None]).sum(axis=1))
    return joint[np.arange(len(t)), y] - norm


def _joint_over_target(model, values: np.ndarray, ti: int) -> np.ndarray:
    k = model.schema[ti].n_states
    out = np.empty((len(values), k))
    v = values.copy()
    for s in range(k):
        v[:, ti] = s
        out[:, s] = _log_scores(model, v)
    return out


def conditional_log_score(model, t: Dataset) -> float:
    if len(t) == 0:
        raise ValueError("empty test set")
    return math.fsum(conditional_log_scores(model, t)) / len(t)


def predict_proba(model, values: np.ndarray, target: int | None = None) -> np.ndarray:
    """Class probabilities; a joint density model is normalised over the
    ``target`` column (default: its schema's target)."""
    if _is_conditional(model):
        return model.predict_proba(values)
    ti = model.schema.target_index if target is None else target
    if ti is None:
        raise ValueError("a joint model needs a target column to predict")
    joint = _joint_over_target(model, values, ti)
    joint -= joint.max(axis=1, keepdims=True)
    p = np.exp(joint)
    return p / p.sum(axis=1, keepdims=True)


def accuracy(model, t: Dataset) -> float:
    """Fraction of cases whose most probable class is the label (ties go to
    the lowest class index)."""
    ti = t.schema.target_index
    if ti is None:
        raise ValueError("accuracy needs a classification schema")
    pred = np.argmax(predict_proba(model, t.values, ti), axis=1)
    return float(np.mean(pred == t.values[:, ti].astype(np.intp)))


def task_score(model, t: Dataset) -> float:
    """Conditional log-score for classification models, log-score otherwise."""
    if _is_conditional(model):
        return conditional_log_score(model, t)
    return log_score(model, t)


# ---------------------------------------------------------------------------
# Tuning


@dataclass(frozen=True)
class TuneConfig:
    leaf_grid: tuple = (2, 4, 8, 16)
    pi_grid: tuple = (0.05, 0.1, 0.2, 0.3, 0.5)
    fraction: float = 0.7
    seed: int = 0
    n_components: int = 8
    max_outer: int = 5
    n_jobs: int = 1

    def __post_init__(self):
        if not self.leaf_grid or not self.pi_grid:
            raise ValueError("tuning grids must be non-empty")
        if self.n_components < 1 or self.max_outer < 1:
            raise ValueError("n_components and max_outer must be >= 1")


@dataclass
class TuneResult:
    best_leaves: int
    best_pi: float
    # one row per grid cell: (max_leaves, pi_init, holdout score at the last stage)
    table: list
    # (max_leaves, pi_init) -> holdout score after each stage
    stage_scores: dict

    def write_table(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["max_leaves", "pi_init", "holdout_score"])
            for leaves, pi, score in self.table:
                w.writerow([leaves, repr(pi), repr(score)])

    def write_surface(self, path: str | Path, max_leaves: int | None = None) -> None:
        """Holdout score by initial weight (rows) and component count (columns)."""
        leaves = self.best_leaves if max_leaves is None else max_leaves
        rows = sorted((pi, s) for (lv, pi), s in self.stage_scores.items() if lv == leaves)
        n = max(len(s) for _, s in rows)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pi_init"] + [f"n{k}" for k in range(1, n + 1)])
            for pi, scores in rows:
                w.writerow([repr(pi)] + [repr(s) for s in scores])


def _tune_cell(train, hold, base: AddComponentConfig, leaves, pi, n_components, max_outer):
    sched = replace(base.schedule, max_outer=max_outer)
    cfg = replace(
        base,
        learner=replace(base.learner, max_leaves=leaves, floors=None),
        pi_init=pi,
        schedule=sched,
    )
    stages = fit_smm(train, n_components, cfg)
    return [task_score(m, hold) for m in stages]


def tune(d: Dataset, cfg: TuneConfig, base: AddComponentConfig | None = None) -> TuneResult:
    """Grid search over (max leaves, initial weight) on a holdout split.

    Each cell fits ``cfg.n_components`` stages on the training part and
    scores the final stage on the holdout part with the task metric. Cells
    are independent and run in parallel when ``cfg.n_jobs != 1``; results
    do not depend on the degree of parallelism.
    """
    base = base or AddComponentConfig()
    train, hold = holdout_split(d, cfg.fraction, cfg.seed)
    cells = [(lv, pi) for lv in cfg.leaf_grid for pi in cfg.pi_grid]
    results = Parallel(n_jobs=cfg.n_jobs)(
        delayed(_tune_cell)(train, hold, base, lv, pi, cfg.n_components, cfg.max_outer)
        for lv, pi in cells
    )
    table = [(lv, pi, scores[-1]) for (lv, pi), scores in zip(cells, results)]
    stage_scores = {cell: scores for cell, scores in zip(cells, results)}
    # first cell wins ties, so grid order is the tie-break
    best = max(range(len(table)), key=lambda i: (table[i][2], -i))
    return TuneResult(table[best][0], table[best][1], table, stage_scores)


# ---------------------------------------------------------------------------
# Curves


@dataclass
class CurveRecord:
    n_components: int
    train_log_score: float
    test_log_score: float | None
    test_accuracy: float | None
    wall_time: float


@dataclass
class CurveResult:
    schedule: str
    backfit: str
    records: list = field(default_factory=list)

    @property
    def test_scores(self) -> list[float]:
        return [r.test_log_score for r in self.records]

    @property
    def train_scores(self) -> list[float]:
        return [r.train_log_score for r in self.records]


CURVE_HEADER = [
    "schedule", "backfit", "n_components", "train_log_score", "test_log_score", "test_accuracy",
]


def write_curves(curves: Iterable[CurveResult], path: str | Path, timing: bool = False) -> None:
    """Long-format CSV, one row per (schedule, backfit, stage).

    Wall time is only written with ``timing=True`` so that default reports
    are byte-identical across reruns.
    """
    header = CURVE_HEADER + (["wall_time"] if timing else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for c in curves:
            for r in c.records:
                row = [
                    c.schedule,
                    c.backfit,
                    r.n_components,
                    repr(r.train_log_score),
                    "" if r.test_log_score is None else repr(r.test_log_score),
                    "" if r.test_accuracy is None else repr(r.test_accuracy),
                ]
                if timing:
                    row.append(f"{r.wall_time:.3f}")
                w.writerow(row)


def _backfit(m: StagedMixture, train: Dataset, mode: str, cfg: AddComponentConfig):
    if mode == "none":
        return m
    if mode == "weights":
        return mixture_weight_backfit(m, train)
    if mode == "structure":
        return structure_backfit(m, train, cfg.schedule, cfg.learner, cfg.gate_score)
    raise ValueError(f"unknown backfit mode {mode!r}")


def _record(k, m, train, test, t0):
    has_target = train.schema.target_index is not None
    return CurveRecord(
        k,
        task_score(m, train),
        None if test is None else task_score(m, test),
        accuracy(m, test) if test is not None and has_target else None,
        time.perf_counter() - t0,
    )


def stage_curve(
    stages: Sequence[StagedMixture],
    train: Dataset,
    test: Dataset | None,
    schedule: str,
    backfit: str = "none",
    t0: float | None = None,
) -> CurveResult:
    """Score a list of per-stage mixtures."""
    t0 = time.perf_counter() if t0 is None else t0
    curve = CurveResult(schedule, backfit)
    for k, m in enumerate(stages, 1):
        curve.records.append(_record(k, m, train, test, t0))
    return curve


def curve_experiment(
    train: Dataset,
    test: Dataset | None,
    cfg: AddComponentConfig,
    n_components: int = 16,
    schedules: Sequence[str] | None = None,
    backfit_modes: Sequence[str] = ("none",),
    gate: str | None = None,
) -> list[CurveResult]:
    """Score every intermediate mixture for each schedule and backfit mode.

    Backfitting is applied to each stage's staged mixture after the fact, so
    curves for different modes share the same underlying SMM run.
    """
    schedules = list(schedules) if schedules else [cfg.schedule.label()]
    curves = []
    for name in schedules:
        sched = NAMED_SCHEDULES.get(name) or Schedule.parse(name)
        sched = replace(sched, conv_tol=cfg.schedule.conv_tol)
        run_cfg = replace(cfg, schedule=sched)
        t0 = time.perf_counter()
        stages = fit_smm(train, n_components, run_cfg, gate=gate)
        for mode in backfit_modes:
            fitted = [_backfit(m, train, mode, run_cfg) for m in stages]
            curves.append(stage_curve(fitted, train, test, name, mode, t0))
    return curves


# ---------------------------------------------------------------------------
# Baseline


def learn_baseline(
    train: Dataset,
    kappa: float = 0.5,
    gamma: float = 1.0,
    task: str | None = None,
    alpha: float = 1.0,
    max_leaves: int | None = None,
):
    """A single unbounded tree (classification) or tree-structured Bayesian
    network (density) grown under an ML + d ln(kappa) score."""
    task = task or ("classification" if train.schema.target is not None else "density")
    score = ScoreKind("penalized", kappa=kappa)
    wd = uniform_weights(train)
    limit = max_leaves or max(2, len(train))
    if task == "classification":
        return learn_tree(wd, train.schema.target_index, None, limit, score, alpha,
                          min_split_weight=gamma)
    return learn_bayesnet(wd, limit, score, alpha, min_split_weight=gamma)


def tune_baseline(
    d: Dataset,
    kappas: Sequence[float] = (0.1, 0.5, 0.9),
    gammas: Sequence[float] = (1, 5, 25),
    fraction: float = 0.7,
    seed: int = 0,
    task: str | None = None,
    alpha: float = 1.0,
):
    """Pick (kappa, gamma) on a holdout split; returns (kappa, gamma, table)."""
    train, hold = holdout_split(d, fraction, seed)
    table = []
    for k in kappas:
        for g in gammas:
            model = learn_baseline(train, k, g, task, alpha)
            table.append((k, g, task_score(model, hold)))
    best = max(range(len(table)), key=lambda i: (table[i][2], -i))
    return table[best][0], table[best][1], table
