"""Staged mixture models grown with structural EM.

A mixture is ``p(y|x) = sum_i pi_i p_i(y|x)``. Classification components are
trees over the target; density components are tree-structured Bayesian
networks over every variable. Earlier components stay frozen while a new
one is added: its structure is relearned from membership-weighted data and
its mixture weight re-estimated, with the relative weights of the earlier
components held fixed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .bayesnet import BayesNetComponent, learn_bayesnet, learn_marginal, variance_floors
from .data import Dataset, Schema, WeightedDataset, uniform_weights
from .tree import (
    BIC,
    ML,
    Gaussian,
    Leaf,
    LearningError,
    Multinomial,
    ScoreKind,
    TreeModel,
    learn_tree,
)

log = logging.getLogger(__name__)

Component = TreeModel | BayesNetComponent


class NumericError(ArithmeticError):
    """Raised when a case has zero predictive density under the mixture."""


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.sum(np.exp(a - safe[:, None]), axis=1))


def _safe_log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _weighted_ll(w: np.ndarray, lp: np.ndarray) -> float:
    pos = w > 0
    return math.fsum(w[pos] * lp[pos])


class StagedMixture:
    """Ordered components and their mixture weights (immutable)."""

    def __init__(self, schema: Schema, components: Sequence[Component], weights):
        components = tuple(components)
        weights = np.array(weights, dtype=np.float64)
        if len(components) == 0 or len(components) != len(weights):
            raise ValueError("need one weight per component and at least one component")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must lie on the simplex, got {weights}")
        kinds = {type(c) for c in components}
        if len(kinds) != 1:
            raise ValueError("all components must be of one kind")
        for c in components:
            if c.schema != schema:
                raise ValueError("component schema differs from mixture schema")
        weights.setflags(write=False)
        self.schema = schema
        self.components = components
        self.weights = weights

    @property
    def task(self) -> str:
        return "classification" if isinstance(self.components[0], TreeModel) else "density"

    @property
    def n_components(self) -> int:
        return len(self.components)

    def __len__(self) -> int:
        return len(self.components)

    @property
    def n_params(self) -> int:
        return sum(c.n_params for c in self.components) + len(self.components) - 1

    def component_log_probs(self, values: np.ndarray) -> np.ndarray:
        """(N, n) matrix of ln p_i(y|x) (classification) or ln p_i(z) (density)."""
        values = np.asarray(values, dtype=np.float64)
        return np.column_stack([c.log_prob(values) for c in self.components])

    def log_predictive(self, values: np.ndarray) -> np.ndarray:
        """ln sum_i pi_i p_i for every row, via log-sum-exp."""
        lp = self.component_log_probs(values)
        return _logsumexp_rows(lp + _safe_log(self.weights)[None, :])

    def log_likelihood(self, d: Dataset) -> float:
        return math.fsum(self.log_predictive(d.values))

    def bic(self, d: Dataset) -> float:
        return self.log_likelihood(d) - 0.5 * self.n_params * math.log(len(d))

    def predict_proba(self, values: np.ndarray) -> np.ndarray:
        if self.task != "classification":
            raise ValueError("predict_proba needs a classification mixture")
        values = np.asarray(values, dtype=np.float64)
        out = np.zeros((len(values), self.schema[self.schema.target_index].n_states))
        for w, c in zip(self.weights, self.components):
            if w > 0:
                out += w * c.predict_proba(values)
        return out

    def __repr__(self) -> str:
        return f"StagedMixture(task={self.task!r}, weights={np.round(self.weights, 4).tolist()})"


def mixture_log_predictive(m: StagedMixture, case) -> float:
    return float(m.log_predictive(np.asarray(case, dtype=np.float64).reshape(1, -1))[0])


def membership_matrix(m: StagedMixture, d: Dataset) -> np.ndarray:
    """(N, n) posterior p(C=i | case); each row sums to one."""
    lp = m.component_log_probs(d.values) + _safe_log(m.weights)[None, :]
    total = _logsumexp_rows(lp)
    bad = np.flatnonzero(~np.isfinite(total))
    if len(bad):
        raise NumericError(f"case {int(bad[0])} has zero predictive density under the mixture")
    return np.exp(lp - total[:, None])


def membership_weights(m: StagedMixture, i: int, d: Dataset) -> WeightedDataset:
    """Weighted data set for component ``i``: each case weighted by its
    membership probability."""
    if not -m.n_components <= i < m.n_components:
        raise IndexError(f"component index {i} out of range")
    w = membership_matrix(m, d)[:, i]
    return WeightedDataset(d, np.clip(w, 0.0, 1.0))


def _rescale(weights: np.ndarray, new_last: float) -> np.ndarray:
    """Set the last weight, scaling the others so their ratios are unchanged."""
    prev = weights[:-1]
    s = prev.sum()
    out = np.empty_like(weights)
    out[:-1] = prev / s * (1.0 - new_last) if s > 0 else prev
    out[-1] = new_last
    return out / out.sum()


def maximize_new_weight(m: StagedMixture, d: Dataset) -> StagedMixture:
    """One EM M-step for the newest component's weight only."""
    if m.n_components < 2:
        raise ValueError("need at least two components")
    pi_new = float(np.mean(membership_matrix(m, d)[:, -1]))
    return StagedMixture(m.schema, m.components, _rescale(m.weights, pi_new))


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class Schedule:
    """Structural EM schedule for adding one component.

    ``s1`` structure-search steps and ``s2`` weight steps per outer
    iteration; at most ``min(s3, max_outer)`` outer iterations, stopping
    early once the convergence ratio drops below ``conv_tol``.
    """

    s1: int = 5
    s2: int = 5
    s3: int = 20
    max_outer: int = 20
    conv_tol: float = 1e-5

    def __post_init__(self):
        if self.s1 < 0 or self.s2 < 0 or self.s3 < 1 or self.max_outer < 1:
            raise ValueError(f"invalid schedule {self}")

    @property
    def outer(self) -> int:
        return min(self.s3, self.max_outer)

    @classmethod
    def parse(cls, text: str, **kw) -> "Schedule":
        """``"5-5-20"`` style; ``"SMM"`` means 5-5-20."""
        if text.upper() == "SMM":
            text = "5-5-20"
        s1, s2, s3 = (int(p) for p in text.split("-"))
        return cls(s1, s2, s3, max_outer=max(s3, kw.pop("max_outer", 20)), **kw)

    def label(self) -> str:
        return f"{self.s1}-{self.s2}-{self.s3}"


NAMED_SCHEDULES = {
    "SMM": Schedule(5, 5, 20),
    "20-1-1": Schedule(20, 1, 1),
    "1-20-1": Schedule(1, 20, 1),
    "1-1-1": Schedule(1, 1, 1),
}


@dataclass(frozen=True)
class LearnerConfig:
    """Fractional-data learner for one component."""

    task: str = "density"
    max_leaves: int = 8
    score: ScoreKind = BIC
    alpha: float = 1.0
    min_split_weight: float = 1.0
    floors: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.task not in ("density", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.max_leaves < 1:
            raise ValueError("max_leaves must be >= 1")
        if self.alpha < 0 or self.min_split_weight < 0:
            raise ValueError("alpha and min_split_weight must be >= 0")

    def with_floors(self, d: Dataset) -> "LearnerConfig":
        if self.floors is not None:
            return self
        return replace(self, floors=variance_floors(d.values, d.schema))

    def learn(self, wd: WeightedDataset) -> Component:
        floors = self.floors if self.floors is not None else variance_floors(wd.values, wd.schema)
        if self.task == "classification":
            t = wd.schema.target_index
            if t is None:
                raise ValueError("classification needs a schema target")
            return learn_tree(
                wd, t, None, self.max_leaves, self.score, self.alpha, floors.get(t),
                self.min_split_weight,
            )
        return learn_bayesnet(
            wd, self.max_leaves, self.score, self.alpha, floors, self.min_split_weight
        )


@dataclass(frozen=True)
class AddComponentConfig:
    """Settings for one application of Add-Component."""

    learner: LearnerConfig = field(default_factory=LearnerConfig)
    pi_init: float = 0.2
    initial: str = "marginal"
    schedule: Schedule = field(default_factory=Schedule)
    gate_score: ScoreKind = BIC

    def __post_init__(self):
        if not 0.0 < self.pi_init < 1.0:
            raise ValueError(f"pi_init must lie in (0, 1), got {self.pi_init}")
        if self.initial not in ("marginal", "uniform"):
            raise ValueError(f"unknown initial component {self.initial!r}")


def initial_component(kind: str, d: Dataset, learner: LearnerConfig) -> Component:
    """The starting guess for a new component.

    ``"marginal"`` fits every variable independently to the equally weighted
    data. ``"uniform"`` puts equal mass on every discrete state and, for a
    continuous variable, a Gaussian with the data mean and ten times the
    data variance.
    """
    schema = d.schema
    wd = uniform_weights(d)
    if kind == "marginal":
        return learn_marginal(wd, learner.alpha, learner.floors)

    def uniform_tree(v: int) -> TreeModel:
        var = schema[v]
        if var.is_discrete:
            dist = Multinomial(np.full(var.n_states, 1.0 / var.n_states), learner.alpha)
        else:
            col = d.values[:, v]
            floor = (learner.floors or {}).get(v, 1e-9)
            dist = Gaussian(float(col.mean()), float(max(10.0 * col.var(), floor)))
        return TreeModel(schema, v, Leaf(dist))

    if learner.task == "classification":
        return uniform_tree(schema.target_index)
    return BayesNetComponent(schema, [uniform_tree(v) for v in range(schema.arity)])


# ---------------------------------------------------------------------------
# Add-Component


def _two_way(log_pi: float, log_rest: float, lp_new: np.ndarray, lp_prev: np.ndarray):
    a = log_pi + lp_new
    b = log_rest + lp_prev
    total = np.logaddexp(a, b)
    if not np.all(np.isfinite(total)):
        bad = int(np.flatnonzero(~np.isfinite(total))[0])
        raise NumericError(f"case {bad} has zero predictive density under the mixture")
    with np.errstate(invalid="ignore"):
        w = np.exp(a - total)
    return math.fsum(total), np.nan_to_num(w, nan=0.0)


def add_component(
    cfg: AddComponentConfig,
    prev: StagedMixture,
    d: Dataset,
    history: list | None = None,
    initial: Component | None = None,
) -> StagedMixture:
    """Add one component to ``prev`` with structural EM.

    0. append the initial component with weight ``pi_init``;
    1. up to ``s1`` times: reweight the data by membership in the new
       component, relearn it, and keep the relearned model only if its gate
       score on that weighted data beats the current one's (else go to 2);
    2. ``s2`` EM updates of the new weight;
    3. repeat 1-2 until converged or the outer limit is reached.

    ``history``, when given, receives one dict per event with the training
    log-likelihood and BIC of the current mixture.
    """
    learner = cfg.learner.with_floors(d)
    sched = cfg.schedule
    values = d.values
    n = len(d)
    lp_prev = prev.log_predictive(values)
    prev_params = prev.n_params

    comp = initial if initial is not None else initial_component(cfg.initial, d, learner)
    lp_new = comp.log_prob(values)
    pi = cfg.pi_init

    def state(pi_):
        return _two_way(_safe_log(pi_), _safe_log(1.0 - pi_), lp_new, lp_prev)

    def record(event, ll, outer):
        if history is not None:
            d_total = prev_params + comp.n_params + 1
            history.append(
                {
                    "stage": prev.n_components + 1,
                    "outer": outer,
                    "event": event,
                    "ll": ll,
                    "bic": ll - 0.5 * d_total * math.log(n),
                    "pi": pi,
                }
            )

    ll, w = state(pi)
    ll_initial = ll
    record("init", ll, 0)

    for outer in range(1, sched.outer + 1):
        # step 1: structure search on membership-weighted data
        for _ in range(sched.s1):
            if not np.any(w > 0):
                break
            wd = WeightedDataset(d, np.clip(w, 0.0, 1.0))
            try:
                cand = learner.learn(wd)
            except LearningError as exc:
                log.debug("relearn skipped: %s", exc)
                break
            lp_cand = cand.log_prob(values)
            pen = cfg.gate_score.per_param_penalty(n, wd.fractional_count)
            old_score = _weighted_ll(w, lp_new) - comp.n_params * pen
            new_score = _weighted_ll(w, lp_cand) - cand.n_params * pen
            if not new_score > old_score + 1e-12 * abs(old_score):
                break
            comp, lp_new = cand, lp_cand
            ll, w = state(pi)
            record("structure", ll, outer)
        ll_step1 = ll

        # step 2: EM on the new component's weight
        for _ in range(sched.s2):
            pi = float(np.mean(w))
            ll, w = state(pi)
            record("weight", ll, outer)

        denom = abs(ll - ll_initial)
        if denom == 0.0 or abs(ll_step1 - ll) / denom < sched.conv_tol:
            break

    weights = np.append(prev.weights * (1.0 - pi), pi)
    return StagedMixture(prev.schema, prev.components + (comp,), weights / weights.sum())


def fit_smm(
    d: Dataset,
    n_components: int,
    cfg: AddComponentConfig | Callable[[int], AddComponentConfig] | None = None,
    gate: str | None = None,
    history: list | None = None,
    callback: Callable[[int, StagedMixture], None] | None = None,
) -> list[StagedMixture]:
    """Grow a staged mixture to ``n_components`` and return every stage.

    The first component is the fractional-data learner applied to the
    equally weighted data; stage k adds one component to stage k-1. ``cfg``
    may be a callable giving per-stage settings. With ``gate`` set to
    ``"bic"`` or ``"ml"``, a stage that does not improve the overall
    training score is rejected; since refitting is deterministic, the
    previous mixture is then carried forward for every remaining stage.
    """
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if gate not in (None, "bic", "ml"):
        raise ValueError(f"unknown gate {gate!r}")
    cfg_for = cfg if callable(cfg) else (lambda k, c=cfg or AddComponentConfig(): c)

    def overall(m):
        return m.bic(d) if gate == "bic" else m.log_likelihood(d)

    first_cfg = cfg_for(1)
    learner = first_cfg.learner.with_floors(d)
    mixture = StagedMixture(d.schema, [learner.learn(uniform_weights(d))], [1.0])
    if history is not None:
        ll = mixture.log_likelihood(d)
        history.append(
            {"stage": 1, "outer": 0, "event": "first", "ll": ll, "bic": mixture.bic(d), "pi": 1.0}
        )
    stages = [mixture]
    if callback:
        callback(1, mixture)
    stopped = False
    for k in range(2, n_components + 1):
        if not stopped:
            stage_cfg = cfg_for(k)
            stage_cfg = replace(stage_cfg, learner=stage_cfg.learner.with_floors(d))
            cand = add_component(stage_cfg, mixture, d, history)
            if gate is not None and not overall(cand) > overall(mixture):
                log.info("stage %d rejected by %s gate", k, gate)
                stopped = True
            else:
                mixture = cand
        stages.append(mixture)
        if callback:
            callback(k, mixture)
    return stages
