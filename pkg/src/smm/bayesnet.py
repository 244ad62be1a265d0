"""Bayesian networks whose local distributions are trees.

A network holds one ``TreeModel`` per variable. Its edges are never stored
separately: X -> Y exactly when X appears in a split of Y's tree.
"""

from __future__ import annotations

import graphlib
import math
from typing import Sequence

import numpy as np

from .data import Schema, WeightedDataset
from .tree import (
    ML,
    LearningError,
    ScoreKind,
    TreeGrower,
    TreeModel,
    default_variance_floor,
    learn_tree,
    model_score,
)


class BayesNetComponent:
    """A full-evidence density over every schema variable."""

    def __init__(self, schema: Schema, trees: Sequence[TreeModel]):
        trees = tuple(trees)
        if len(trees) != schema.arity:
            raise ValueError(f"need one tree per variable ({schema.arity}), got {len(trees)}")
        for v, t in enumerate(trees):
            if t.target != v:
                raise ValueError(f"tree {v} models variable {t.target}")
        self.schema = schema
        self.trees = trees
        self.parents = tuple(frozenset(t.split_variables()) for t in trees)
        if not is_acyclic(self.parents):
            raise ValueError("local trees induce a directed cycle")

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted((u, v) for v, ps in enumerate(self.parents) for u in ps)

    @property
    def n_params(self) -> int:
        return sum(t.n_params for t in self.trees)

    @property
    def is_marginal(self) -> bool:
        return all(t.leaf_count == 1 for t in self.trees)

    def log_density(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        out = np.zeros(len(values))
        for t in self.trees:
            out += t.log_prob(values)
        return out

    def log_prob(self, values: np.ndarray) -> np.ndarray:
        return self.log_density(values)

    def __repr__(self) -> str:
        names = self.schema.names
        edges = ", ".join(f"{names[u]}->{names[v]}" for u, v in self.edges)
        return f"BayesNetComponent(leaves={[t.leaf_count for t in self.trees]}, edges=[{edges}])"


def is_acyclic(parents: Sequence[Sequence[int]]) -> bool:
    ts = graphlib.TopologicalSorter({v: set(ps) for v, ps in enumerate(parents)})
    try:
        tuple(ts.static_order())
    except graphlib.CycleError:
        return False
    return True


def _reaches(children: list[set[int]], src: int, dst: int) -> bool:
    """Whether ``dst`` is reachable from ``src`` along directed edges."""
    if src == dst:
        return True
    seen = {src}
    stack = [src]
    while stack:
        node = stack.pop()
        for c in children[node]:
            if c == dst:
                return True
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return False


def bn_log_density(bn: BayesNetComponent, case) -> float:
    """Log-density of a single case (a row of state indices / values)."""
    return float(bn.log_density(np.asarray(case, dtype=np.float64).reshape(1, -1))[0])


def network_score(bn: BayesNetComponent, wd: WeightedDataset, kind: ScoreKind = ML) -> float:
    return math.fsum(model_score(t, wd, kind) for t in bn.trees)


def variance_floors(values: np.ndarray, schema: Schema) -> dict[int, float]:
    return {
        j: default_variance_floor(values[:, j])
        for j, v in enumerate(schema.variables)
        if not v.is_discrete
    }


def learn_marginal(
    wd: WeightedDataset,
    alpha: float = 1.0,
    floors: dict[int, float] | None = None,
) -> BayesNetComponent | TreeModel:
    """Fully independent model: one single-leaf tree per variable.

    For a classification schema this is the univariate marginal of the
    target, returned as a single-leaf ``TreeModel``.
    """
    if wd.fractional_count <= 0:
        raise LearningError("cannot learn from a zero fractional count")
    schema = wd.schema
    floors = floors if floors is not None else variance_floors(wd.values, schema)
    if schema.target is not None:
        t = schema.target_index
        return learn_tree(wd, t, [], max_leaves=1, alpha=alpha, floor=floors.get(t))
    trees = [
        learn_tree(wd, v, [], max_leaves=1, alpha=alpha, floor=floors.get(v))
        for v in range(schema.arity)
    ]
    return BayesNetComponent(schema, trees)


def learn_bayesnet(
    wd: WeightedDataset,
    max_leaves: int = 8,
    score: ScoreKind = ML,
    alpha: float = 1.0,
    floors: dict[int, float] | None = None,
    min_split_weight: float = 1.0,
    trace: list | None = None,
) -> BayesNetComponent:
    """Greedy structure search over a global pool of tree splits.

    Each step applies the single best-improving legal split over all local
    trees. A split of v's tree on X is legal when X is already a parent of
    v or when adding X -> v keeps the graph acyclic. Ties go to the lowest
    variable index, then to the tree learner's own tie-break.

    ``trace``, when given, receives ``(v, u, score, parents)`` after every
    accepted split: the split tree, the split variable, the summed network
    score and a snapshot of the parent sets.
    """
    if max_leaves < 1:
        raise ValueError("max_leaves must be >= 1")
    if wd.fractional_count <= 0:
        raise LearningError("cannot learn from a zero fractional count")
    schema = wd.schema
    p = schema.arity
    floors = floors if floors is not None else variance_floors(wd.values, schema)
    codes = {
        j: wd.values[:, j].astype(np.intp) for j, v in enumerate(schema.variables) if v.is_discrete
    }
    growers = [
        TreeGrower(
            wd,
            v,
            [u for u in range(p) if u != v],
            max_leaves,
            score,
            alpha,
            floors.get(v),
            min_split_weight,
            codes,
        )
        for v in range(p)
    ]
    parents: list[set[int]] = [set() for _ in range(p)]
    children: list[set[int]] = [set() for _ in range(p)]

    while True:
        best = None
        for v, g in enumerate(growers):

            def legal(u, v=v):
                return u in parents[v] or not _reaches(children, v, u)

            cand = g.best_split(legal)
            if cand is not None and (best is None or cand[0] > best[1][0]):
                best = (v, cand)
        if best is None:
            break
        v, (_, leaf_pos, u, _) = best
        growers[v].apply_split(leaf_pos, u)
        if u not in parents[v]:
            parents[v].add(u)
            children[u].add(v)
            assert is_acyclic(parents), "accepted split created a cycle"
        if trace is not None:
            score_now = math.fsum(g.total_score() for g in growers)
            trace.append((v, u, score_now, tuple(frozenset(ps) for ps in parents)))

    return BayesNetComponent(schema, [g.to_model() for g in growers])
