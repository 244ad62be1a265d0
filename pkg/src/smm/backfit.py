"""Backfitting variants that relax the freeze on earlier stages."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, WeightedDataset
from .mixture import (
    LearnerConfig,
    NumericError,
    Schedule,
    StagedMixture,
    _logsumexp_rows,
    _safe_log,
    _weighted_ll,
)
from .tree import BIC, LearningError, ScoreKind


@dataclass
class BackfitReport:
    """Per-iteration training log-likelihood and weight vector."""

    rows: list = field(default_factory=list)

    def append(self, iteration: int, train_ll: float, weights) -> None:
        self.rows.append((iteration, float(train_ll), [float(w) for w in weights]))

    @property
    def train_ll(self) -> list[float]:
        return [r[1] for r in self.rows]

    def to_csv(self, path: str | Path) -> None:
        n = max((len(r[2]) for r in self.rows), default=0)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "train_ll"] + [f"pi_{i + 1}" for i in range(n)])
            for it, ll, pis in self.rows:
                w.writerow([it, repr(ll)] + [repr(p) for p in pis])


def _em_weights(lp: np.ndarray, weights: np.ndarray):
    joint = lp + _safe_log(weights)[None, :]
    total = _logsumexp_rows(joint)
    if not np.all(np.isfinite(total)):
        raise NumericError("a case has zero predictive density under the mixture")
    resp = np.exp(joint - total[:, None])
    return math.fsum(total), resp


def mixture_weight_backfit(
    m: StagedMixture,
    d: Dataset,
    max_iters: int = 100,
    tol: float = 1e-6,
    report: BackfitReport | None = None,
) -> StagedMixture:
    """EM on all mixture weights with the components frozen.

    Iterates ``pi_i <- mean_j p(C=i | case j)`` until the relative change in
    training log-likelihood drops below ``tol``.
    """
    if m.n_components == 1:
        if report is not None:
            report.append(0, m.log_likelihood(d), m.weights)
        return m
    lp = m.component_log_probs(d.values)
    weights = m.weights.copy()
    ll, resp = _em_weights(lp, weights)
    if report is not None:
        report.append(0, ll, weights)
    for it in range(1, max_iters + 1):
        weights = resp.mean(axis=0)
        weights /= weights.sum()
        new_ll, resp = _em_weights(lp, weights)
        if report is not None:
            report.append(it, new_ll, weights)
        done = abs(new_ll - ll) <= tol * abs(ll)
        ll = new_ll
        if done:
            break
    return StagedMixture(m.schema, m.components, weights)


def structure_backfit(
    m: StagedMixture,
    d: Dataset,
    schedule: Schedule = Schedule(),
    learner: LearnerConfig | None = None,
    gate_score: ScoreKind = BIC,
    report: BackfitReport | None = None,
) -> StagedMixture:
    """Structural EM over every component, oldest first.

    Each sweep relearns each component on its membership-weighted data (up
    to ``schedule.s1`` gated attempts, as in Add-Component step 1) and then
    runs ``schedule.s2`` EM updates of all weights. Sweeps repeat up to
    ``schedule.outer`` times or until the relative change in training
    log-likelihood falls below ``schedule.conv_tol``.
    """
    learner = (learner or LearnerConfig(task=m.task)).with_floors(d)
    values = d.values
    n = len(d)
    comps = list(m.components)
    lp = m.component_log_probs(values)
    weights = m.weights.copy()
    ll, resp = _em_weights(lp, weights)
    if report is not None:
        report.append(0, ll, weights)

    for sweep in range(1, schedule.outer + 1):
        ll_start = ll
        for i in range(len(comps)):
            for _ in range(schedule.s1):
                w = np.clip(resp[:, i], 0.0, 1.0)
                if not np.any(w > 0):
                    break
                wd = WeightedDataset(d, w)
                try:
                    cand = learner.learn(wd)
                except LearningError:
                    break
                lp_cand = cand.log_prob(values)
                pen = gate_score.per_param_penalty(n, wd.fractional_count)
                old = _weighted_ll(w, lp[:, i]) - comps[i].n_params * pen
                new = _weighted_ll(w, lp_cand) - cand.n_params * pen
                if not new > old + 1e-12 * abs(old):
                    break
                comps[i] = cand
                lp[:, i] = lp_cand
                ll, resp = _em_weights(lp, weights)
        for _ in range(schedule.s2):
            weights = resp.mean(axis=0)
            weights /= weights.sum()
            ll, resp = _em_weights(lp, weights)
        if report is not None:
            report.append(sweep, ll, weights)
        if abs(ll - ll_start) <= schedule.conv_tol * abs(ll_start):
            break
    return StagedMixture(m.schema, comps, weights)
