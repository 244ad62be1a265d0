"""Decision/regression trees learned from fractionally weighted data.

Trees are binary. Internal nodes test ``x[var] == state`` (discrete) or
``x[var] < threshold`` (continuous); cases passing the test go to the
``true`` child. Leaves hold a multinomial (discrete target) or Gaussian
(continuous target) distribution.

Greedy growth is best-first: every current leaf keeps its best candidate
split and the globally best one is applied until the leaf bound is hit or
nothing improves the score. Ties are broken by the lowest predictor index,
then the lowest split ordinal, then the oldest leaf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import Schema, WeightedDataset

LOG_2PI = math.log(2.0 * math.pi)
N_QUANTILES = 8
# gains at or below this are numerical noise, not improvements
MIN_GAIN = 1e-10


class LearningError(ValueError):
    """Raised when a learner is handed data it cannot fit."""


# ---------------------------------------------------------------------------
# Model scores


@dataclass(frozen=True)
class ScoreKind:
    """Model score used to evaluate a component against weighted data.

    ``kind`` is ``"ml"``, ``"bic"`` or ``"penalized"`` (ML + d ln kappa).
    ``bic_sample`` selects the BIC sample size: ``"cases"`` uses the number
    of cases in the weighted data set, ``"fractional"`` uses the sum of the
    weights.
    """

    kind: str = "ml"
    kappa: float = 1.0
    bic_sample: str = "cases"

    def __post_init__(self):
        if self.kind not in ("ml", "bic", "penalized"):
            raise ValueError(f"unknown score kind {self.kind!r}")
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.bic_sample not in ("cases", "fractional"):
            raise ValueError(f"unknown bic_sample {self.bic_sample!r}")

    def per_param_penalty(self, n_cases: int, fractional_count: float) -> float:
        """Score cost of one extra free parameter."""
        if self.kind == "ml":
            return 0.0
        if self.kind == "penalized":
            return -math.log(self.kappa)
        n = n_cases if self.bic_sample == "cases" else fractional_count
        if n <= 0:
            raise LearningError("BIC needs a positive effective sample size")
        return 0.5 * math.log(n)

    @classmethod
    def parse(cls, text: str) -> "ScoreKind":
        """``ml``, ``bic``, ``bic-fractional`` or ``penalized:<kappa>``."""
        text = text.strip().lower()
        if text == "bic-fractional":
            return cls("bic", bic_sample="fractional")
        if text.startswith("penalized"):
            _, _, k = text.partition(":")
            return cls("penalized", kappa=float(k) if k else 1.0)
        return cls(text)


ML = ScoreKind("ml")
BIC = ScoreKind("bic")


# ---------------------------------------------------------------------------
# Leaf distributions


@dataclass(frozen=True, eq=False)
class Multinomial:
    probs: np.ndarray
    alpha: float = 0.0

    @property
    def n_params(self) -> int:
        return len(self.probs) - 1

    def log_prob(self, y: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs)[np.asarray(y, dtype=np.intp)]


@dataclass(frozen=True)
class Gaussian:
    mean: float
    var: float

    n_params = 2

    def log_prob(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return -0.5 * (LOG_2PI + math.log(self.var) + (y - self.mean) ** 2 / self.var)


def _multinomial_from_counts(counts: np.ndarray, alpha: float) -> Multinomial:
    total = counts.sum()
    k = len(counts)
    if total + alpha * k <= 0:
        raise LearningError("multinomial leaf with zero fractional count and no smoothing")
    return Multinomial((counts + alpha) / (total + alpha * k), alpha)


def _gaussian_from_moments(w: float, mean: float, var_ml: float, floor: float) -> Gaussian:
    if w <= 0:
        raise LearningError("Gaussian leaf with zero fractional count")
    return Gaussian(float(mean), float(max(var_ml, floor)))


def weighted_leaf_fit(y, w, n_states: int | None, alpha: float = 1.0, floor: float = 1e-9):
    """Fit a leaf distribution to weighted target values.

    ``n_states`` is the number of target states, or ``None`` for a continuous
    target. Multinomial leaves use add-``alpha`` smoothing; Gaussian leaves
    use the weighted ML mean and variance (denominator sum of weights),
    clamped below at ``floor``.
    """
    y = np.asarray(y)
    w = np.asarray(w, dtype=np.float64)
    if n_states is not None:
        counts = np.bincount(y.astype(np.intp), weights=w, minlength=n_states)
        return _multinomial_from_counts(counts, alpha)
    total = w.sum()
    if total <= 0:
        raise LearningError("Gaussian leaf with zero fractional count")
    mean = np.dot(w, y) / total
    var = np.dot(w, (y - mean) ** 2) / total
    return _gaussian_from_moments(total, mean, var, floor)


def default_variance_floor(column) -> float:
    column = np.asarray(column, dtype=np.float64)
    return max(1e-9, 1e-6 * float(np.var(column))) if len(column) else 1e-9


# ---------------------------------------------------------------------------
# Tree structure


@dataclass(frozen=True)
class Split:
    var: int
    state: int | None = None
    threshold: float | None = None

    def __post_init__(self):
        if (self.state is None) == (self.threshold is None):
            raise ValueError("a split tests either a state or a threshold")
        if self.threshold is not None and not math.isfinite(self.threshold):
            raise ValueError("split threshold must be finite")

    def test(self, values: np.ndarray) -> np.ndarray:
        col = values[:, self.var]
        if self.state is not None:
            return col == self.state
        return col < self.threshold

    def describe(self, schema: Schema) -> str:
        v = schema[self.var]
        if self.state is not None:
            return f"{v.name} == {v.states[self.state]}"
        return f"{v.name} < {self.threshold!r}"


@dataclass(frozen=True, eq=False)
class Leaf:
    dist: Multinomial | Gaussian


@dataclass(frozen=True, eq=False)
class Branch:
    split: Split
    true: "Branch | Leaf"
    false: "Branch | Leaf"


class TreeModel:
    """A learned tree giving p(target | other variables)."""

    def __init__(self, schema: Schema, target: int, root: Branch | Leaf):
        self.schema = schema
        self.target = target
        self.root = root
        self._leaves: list[Leaf] = []
        self._collect(root)
        self.leaf_count = len(self._leaves)
        if schema[target].is_discrete:
            with np.errstate(divide="ignore"):
                self._logp = np.log(np.array([lf.dist.probs for lf in self._leaves]))
        else:
            self._mean = np.array([lf.dist.mean for lf in self._leaves])
            self._var = np.array([lf.dist.var for lf in self._leaves])

    def _collect(self, node):
        if isinstance(node, Leaf):
            self._leaves.append(node)
        else:
            if node.split.var == self.target:
                raise ValueError("a tree cannot split on its own target")
            self._collect(node.true)
            self._collect(node.false)

    @property
    def leaves(self) -> list[Leaf]:
        return list(self._leaves)

    @property
    def is_discrete(self) -> bool:
        return self.schema[self.target].is_discrete

    @property
    def n_params(self) -> int:
        return sum(lf.dist.n_params for lf in self._leaves)

    def split_variables(self) -> set[int]:
        out = set()
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Branch):
                out.add(node.split.var)
                stack.extend((node.true, node.false))
        return out

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Leaf ordinal (pre-order, true branch first) for each row."""
        values = np.asarray(values, dtype=np.float64)
        out = np.empty(len(values), dtype=np.intp)
        counter = [0]

        def route(node, idx):
            if isinstance(node, Leaf):
                out[idx] = counter[0]
                counter[0] += 1
                return
            mask = node.split.test(values[idx])
            route(node.true, idx[mask])
            route(node.false, idx[~mask])

        route(self.root, np.arange(len(values)))
        return out

    def log_prob(self, values: np.ndarray) -> np.ndarray:
        """ln p(target | rest) for each row of ``values``."""
        values = np.asarray(values, dtype=np.float64)
        leaf = self.apply(values)
        y = values[:, self.target]
        if self.is_discrete:
            return self._logp[leaf, y.astype(np.intp)]
        var = self._var[leaf]
        return -0.5 * (LOG_2PI + np.log(var) + (y - self._mean[leaf]) ** 2 / var)

    def predict_proba(self, values: np.ndarray) -> np.ndarray:
        """Class probabilities for each row (discrete target only)."""
        if not self.is_discrete:
            raise ValueError("predict_proba needs a discrete target")
        return np.exp(self._logp[self.apply(values)])

    def __repr__(self) -> str:
        return f"TreeModel(target={self.schema[self.target].name!r}, leaves={self.leaf_count})"

    def to_text(self) -> str:
        lines = []

        def walk(node, depth):
            pad = "  " * depth
            if isinstance(node, Leaf):
                d = node.dist
                if isinstance(d, Multinomial):
                    lines.append(pad + "leaf " + " ".join(f"{p:.4f}" for p in d.probs))
                else:
                    lines.append(pad + f"leaf N({d.mean:.4g}, {d.var:.4g})")
            else:
                lines.append(pad + "if " + node.split.describe(self.schema))
                walk(node.true, depth + 1)
                lines.append(pad + "else")
                walk(node.false, depth + 1)

        walk(self.root, 0)
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Scores and split points


def model_score(tree: TreeModel, wd: WeightedDataset, kind: ScoreKind = ML) -> float:
    """Weighted log-likelihood of ``wd`` under ``tree`` minus the kind's penalty."""
    w = wd.weights
    pos = w > 0
    ll = math.fsum(w[pos] * tree.log_prob(wd.values[pos]))
    if kind.kind == "bic" and wd.fractional_count <= 0:
        raise LearningError("BIC needs a positive fractional count")
    return ll - tree.n_params * kind.per_param_penalty(len(wd), wd.fractional_count)


def split_points(x, w) -> list[float]:
    """Thresholds at the weighted quantiles k/8, k = 1..7.

    For each level q, take the smallest distinct value v whose weighted
    empirical CDF reaches q; the threshold is the midpoint between v and the
    next larger distinct value (skipped when v is the maximum). Zero-weight
    values are ignored. Duplicates are dropped, so fewer than seven points
    come back when values coincide.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    keep = w > 0
    x, w = x[keep], w[keep]
    if len(x) == 0:
        raise LearningError("all weights are zero")
    uniq, inv = np.unique(x, return_inverse=True)
    if len(uniq) < 2:
        return []
    cdf = np.cumsum(np.bincount(inv, weights=w))
    cdf /= cdf[-1]
    out: list[float] = []
    for k in range(1, N_QUANTILES):
        m = int(np.searchsorted(cdf, k / N_QUANTILES - 1e-12, side="left"))
        if m >= len(uniq) - 1:
            continue
        t = 0.5 * (uniq[m] + uniq[m + 1])
        if not out or t != out[-1]:
            out.append(float(t))
    return out


def candidate_split_points(wd: WeightedDataset, var: int | str) -> list[float]:
    if isinstance(var, str):
        var = wd.schema.index(var)
    if wd.schema[var].is_discrete:
        raise ValueError(f"{wd.schema[var].name!r} is not continuous")
    return split_points(wd.values[:, var], wd.weights)


# ---------------------------------------------------------------------------
# Vectorised leaf log-likelihoods from sufficient statistics


def _multinomial_ml(counts: np.ndarray, alpha: float) -> np.ndarray:
    k = counts.shape[-1]
    total = counts.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.log(counts + alpha) - np.log(total + alpha * k)
        terms = np.where(counts > 0, counts * logp, 0.0)
    return terms.sum(axis=-1)


def _gaussian_ml(w, s1, s2, floor: float):
    w = np.asarray(w, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        mean = s1 / w
        var_ml = np.maximum(s2 / w - mean * mean, 0.0)
        var = np.maximum(var_ml, floor)
        ll = -0.5 * (w * (LOG_2PI + np.log(var)) + w * var_ml / var)
    return np.where(w > 0, ll, 0.0)


# ---------------------------------------------------------------------------
# Greedy grower


class _GrowLeaf:
    __slots__ = ("idx", "stats", "ml", "seq", "cands", "parent", "side")

    def __init__(self, idx, stats, ml, seq):
        self.idx = idx
        self.stats = stats
        self.ml = ml
        self.seq = seq
        # predictor -> (gain, split ordinal, Split, left stats, right stats)
        self.cands: dict[int, tuple] = {}


class TreeGrower:
    """Incremental best-first growth of one tree on a weighted data set.

    The Bayesian-network learner drives several growers at once and
    restricts which predictors may be used at each step; ``learn_tree``
    simply grows one to completion.
    """

    def __init__(
        self,
        wd: WeightedDataset,
        target: int,
        predictors: Iterable[int],
        max_leaves: int,
        score: ScoreKind = ML,
        alpha: float = 1.0,
        floor: float | None = None,
        min_split_weight: float = 1.0,
        codes: dict | None = None,
    ):
        schema = wd.schema
        if max_leaves < 1:
            raise ValueError("max_leaves must be >= 1")
        self.schema = schema
        self.target = target
        self.predictors = sorted(set(predictors))
        if target in self.predictors:
            raise ValueError("predictors must exclude the target")
        self.max_leaves = max_leaves
        self.score = score
        self.alpha = float(alpha)
        self.gamma = float(min_split_weight)
        self.values = wd.values
        self.w = np.asarray(wd.weights)
        total = float(self.w.sum())
        if total <= 0:
            raise LearningError("cannot learn from a zero fractional count")
        self.discrete = schema[target].is_discrete
        self.k = schema[target].n_states
        if floor is None:
            floor = default_variance_floor(self.values[:, target]) if not self.discrete else 0.0
        self.floor = float(floor)
        self.codes = codes if codes is not None else {}
        for j in self.predictors + [target]:
            if schema[j].is_discrete and j not in self.codes:
                self.codes[j] = self.values[:, j].astype(np.intp)
        if self.discrete:
            self.y = self.codes[target]
        else:
            # shift for numerically safer sums of squares
            raw = self.values[:, target]
            self.y = raw - float(np.dot(self.w, raw) / total)
        n_leaf_params = self.k - 1 if self.discrete else 2
        self.leaf_cost = n_leaf_params * score.per_param_penalty(len(wd), total)
        self._seq = 0
        self._splits: dict[int, tuple] = {}
        root_idx = np.flatnonzero(self.w > 0)
        root = self._new_leaf(root_idx, self._stats(root_idx))
        self.leaves: list[_GrowLeaf] = [root]
        self._root_leaf = root

    # -- statistics -------------------------------------------------------

    def _stats(self, idx):
        w = self.w[idx]
        if self.discrete:
            return np.bincount(self.y[idx], weights=w, minlength=self.k)
        y = self.y[idx]
        return np.array([w.sum(), np.dot(w, y), np.dot(w, y * y)])

    def _ml(self, stats: np.ndarray) -> np.ndarray:
        if self.discrete:
            return _multinomial_ml(stats, self.alpha)
        return _gaussian_ml(stats[..., 0], stats[..., 1], stats[..., 2], self.floor)

    def _weight(self, stats):
        return stats.sum(axis=-1) if self.discrete else stats[..., 0]

    def _new_leaf(self, idx, stats) -> _GrowLeaf:
        leaf = _GrowLeaf(idx, stats, float(self._ml(stats)), self._seq)
        self._seq += 1
        self._evaluate(leaf)
        return leaf

    def _bucket_stats(self, buckets, n_buckets, idx):
        w = self.w[idx]
        if self.discrete:
            flat = np.bincount(buckets * self.k + self.y[idx], weights=w, minlength=n_buckets * self.k)
            return flat.reshape(n_buckets, self.k)
        y = self.y[idx]
        return np.stack(
            [
                np.bincount(buckets, weights=w, minlength=n_buckets),
                np.bincount(buckets, weights=w * y, minlength=n_buckets),
                np.bincount(buckets, weights=w * y * y, minlength=n_buckets),
            ],
            axis=1,
        )

    def _evaluate(self, leaf: _GrowLeaf) -> None:
        idx = leaf.idx
        if len(idx) < 2:
            return
        for u in self.predictors:
            var = self.schema[u]
            if var.is_discrete:
                xu = self.codes[u][idx]
                table = self._bucket_stats(xu, var.n_states, idx)
                n_cases = np.bincount(xu, minlength=var.n_states)
                states = [0] if var.n_states == 2 else list(range(var.n_states))
                left = table[states]
                # sum the complement directly so mirrored partitions tie exactly
                right = np.stack([np.delete(table, s, axis=0).sum(axis=0) for s in states])
                n_left = n_cases[states]
                splits = [Split(u, state=s) for s in states]
            else:
                th = split_points(self.values[idx, u], self.w[idx])
                if not th:
                    continue
                b = np.searchsorted(np.asarray(th), self.values[idx, u], side="right")
                table = self._bucket_stats(b, len(th) + 1, idx)
                left = np.cumsum(table, axis=0)[: len(th)]
                right = np.cumsum(table[::-1], axis=0)[::-1][1:]
                n_left = np.cumsum(np.bincount(b, minlength=len(th) + 1))[: len(th)]
                splits = [Split(u, threshold=t) for t in th]
            n_right = len(idx) - n_left
            wl, wr = self._weight(left), self._weight(right)
            ok = (n_left > 0) & (n_right > 0) & (wl > 0) & (wr > 0) & (wl >= self.gamma) & (wr >= self.gamma)
            if not ok.any():
                continue
            gains = self._ml(left) + self._ml(right) - leaf.ml - self.leaf_cost
            gains = np.where(ok, gains, -np.inf)
            best = int(np.argmax(gains))
            leaf.cands[u] = (float(gains[best]), best, splits[best], left[best].copy(), right[best].copy())

    # -- growth -----------------------------------------------------------

    @property
    def leaf_count(self) -> int:
        return len(self.leaves)

    def best_split(self, allowed: Callable[[int], bool] | None = None):
        """Best improving candidate as ``(gain, leaf_pos, predictor, split)``
        or None. ``allowed`` filters predictors."""
        if self.leaf_count >= self.max_leaves:
            return None
        best = None
        best_key = None
        for pos, leaf in enumerate(self.leaves):
            for u, (gain, ordinal, split, _, _) in leaf.cands.items():
                if gain <= MIN_GAIN or (allowed is not None and not allowed(u)):
                    continue
                key = (-gain, u, ordinal, leaf.seq)
                if best_key is None or key < best_key:
                    best_key = key
                    best = (gain, pos, u, split)
        return best

    def apply_split(self, leaf_pos: int, predictor: int) -> None:
        leaf = self.leaves[leaf_pos]
        _, _, split, lstats, rstats = leaf.cands[predictor]
        mask = split.test(self.values[leaf.idx])
        t = self._new_leaf(leaf.idx[mask], lstats)
        f = self._new_leaf(leaf.idx[~mask], rstats)
        self._splits[leaf.seq] = (split, t.seq, f.seq)
        # keep pre-order (true branch first) leaf ordering
        self.leaves[leaf_pos: leaf_pos + 1] = [t, f]

    def grow(self) -> "TreeGrower":
        while True:
            cand = self.best_split()
            if cand is None:
                return self
            self.apply_split(cand[1], cand[2])

    def ml(self) -> float:
        return math.fsum(lf.ml for lf in self.leaves)

    def total_score(self) -> float:
        return self.ml() - self.leaf_count * self.leaf_cost

    def used_predictors(self) -> set[int]:
        return {s.var for s, _, _ in self._splits.values()}

    def _leaf_dist(self, leaf: _GrowLeaf):
        if self.discrete:
            return _multinomial_from_counts(leaf.stats, self.alpha)
        # refit from raw values rather than the shifted running sums
        return weighted_leaf_fit(
            self.values[leaf.idx, self.target], self.w[leaf.idx], None, floor=self.floor
        )

    def to_model(self) -> TreeModel:
        seqs = {lf.seq: lf for lf in self.leaves}

        def build(seq):
            if seq in self._splits:
                split, t, f = self._splits[seq]
                return Branch(split, build(t), build(f))
            return Leaf(self._leaf_dist(seqs[seq]))

        return TreeModel(self.schema, self.target, build(self._root_leaf.seq))


def learn_tree(
    wd: WeightedDataset,
    target: int | str,
    predictors: Sequence[int | str] | None = None,
    max_leaves: int = 8,
    score: ScoreKind = ML,
    alpha: float = 1.0,
    floor: float | None = None,
    min_split_weight: float = 1.0,
) -> TreeModel:
    """Greedily grow a tree for ``target`` on weighted data.

    Stops at ``max_leaves`` leaves, when no split improves ``score``, or when
    every candidate would leave a child with fractional count below
    ``min_split_weight``. ``predictors`` defaults to every other variable.
    """
    schema = wd.schema
    if isinstance(target, str):
        target = schema.index(target)
    if predictors is None:
        predictors = [j for j in range(schema.arity) if j != target]
    predictors = [schema.index(p) if isinstance(p, str) else p for p in predictors]
    grower = TreeGrower(wd, target, predictors, max_leaves, score, alpha, floor, min_split_weight)
    return grower.grow().to_model()
