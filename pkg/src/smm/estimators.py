"""scikit-learn estimators wrapping the staged mixture engine.

``SMMClassifier`` follows the classifier API (``fit``/``predict``/
``predict_proba``); ``SMMDensity`` follows the density-estimator API of
``sklearn.mixture`` (``fit``/``score_samples``/``score``). Columns listed in
``categorical_features`` are treated as discrete variables whose states are
the distinct training values; every other column is continuous.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, DensityMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .data import Dataset, Schema, Variable
from .mixture import AddComponentConfig, LearnerConfig, NAMED_SCHEDULES, Schedule, fit_smm
from .tree import ScoreKind


def _encode(X, categories):
    """Map categorical columns to state indices; unknown values raise."""
    out = np.array(X, dtype=np.float64, copy=True)
    for j, cats in categories.items():
        idx = np.searchsorted(cats, out[:, j])
        idx = np.clip(idx, 0, len(cats) - 1)
        if np.any(cats[idx] != out[:, j]):
            raise ValueError(f"column {j} holds a category not seen during fit")
        out[:, j] = idx
    return out


class _SMMBase(BaseEstimator):
    def __init__(
        self,
        n_components=16,
        max_leaves=8,
        pi_init=0.2,
        initial="marginal",
        schedule="5-5-20",
        max_outer=20,
        conv_tol=1e-5,
        alpha=1.0,
        min_split_weight=1.0,
        learn_score="bic",
        gate_score="bic",
        gate=None,
        categorical_features=None,
    ):
        self.n_components = n_components
        self.max_leaves = max_leaves
        self.pi_init = pi_init
        self.initial = initial
        self.schedule = schedule
        self.max_outer = max_outer
        self.conv_tol = conv_tol
        self.alpha = alpha
        self.min_split_weight = min_split_weight
        self.learn_score = learn_score
        self.gate_score = gate_score
        self.gate = gate
        self.categorical_features = categorical_features

    _task = "density"

    def _config(self) -> AddComponentConfig:
        sched = NAMED_SCHEDULES.get(self.schedule) or Schedule.parse(self.schedule)
        sched = Schedule(sched.s1, sched.s2, sched.s3, max(self.max_outer, 1), self.conv_tol)
        return AddComponentConfig(
            learner=LearnerConfig(
                task=self._task,
                max_leaves=self.max_leaves,
                score=ScoreKind.parse(self.learn_score),
                alpha=self.alpha,
                min_split_weight=self.min_split_weight,
            ),
            pi_init=self.pi_init,
            initial=self.initial,
            schedule=sched,
            gate_score=ScoreKind.parse(self.gate_score),
        )

    def _feature_variables(self, X):
        cat = set(self.categorical_features or ())
        bad = [j for j in cat if not 0 <= j < X.shape[1]]
        if bad:
            raise ValueError(f"categorical_features out of range: {bad}")
        self.categories_ = {}
        variables = []
        for j in range(X.shape[1]):
            if j in cat:
                cats = np.unique(X[:, j])
                if len(cats) < 2:
                    cats = np.append(cats, cats[-1] + 1.0)
                self.categories_[j] = cats
                variables.append(Variable(f"x{j}", tuple(f"c{k}" for k in range(len(cats)))))
            else:
                variables.append(Variable(f"x{j}"))
        return variables

    def _fit_dataset(self, d: Dataset):
        self.stages_ = fit_smm(d, self.n_components, self._config(), gate=self.gate)
        self.mixture_ = self.stages_[-1]
        self.weights_ = self.mixture_.weights
        return self


class SMMClassifier(ClassifierMixin, _SMMBase):
    """Probabilistic classifier: a staged mixture of decision trees.

    Parameters mirror the engine's settings: ``n_components`` stages,
    trees of at most ``max_leaves`` leaves, initial weight ``pi_init`` for
    every new component, an ``s1-s2-s3`` ``schedule``. Attributes after
    fitting: ``classes_``, ``stages_`` (the mixture after every stage),
    ``mixture_`` and ``weights_``.
    """

    _task = "classification"

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        variables = self._feature_variables(X)
        n_classes = max(len(self.classes_), 2)
        variables.append(Variable("y", tuple(f"k{k}" for k in range(n_classes))))
        schema = Schema(tuple(variables), target="y")
        values = np.column_stack([_encode(X, self.categories_), y_idx])
        self.schema_ = schema
        return self._fit_dataset(Dataset(schema, values))

    def _values(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return np.column_stack([_encode(X, self.categories_), np.zeros(len(X))])

    def predict_proba(self, X):
        values = self._values(X)
        return self.mixture_.predict_proba(values)[:, : len(self.classes_)]

    def staged_predict_proba(self, X):
        values = self._values(X)
        for m in self.stages_:
            yield m.predict_proba(values)[:, : len(self.classes_)]

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]


class SMMDensity(DensityMixin, _SMMBase):
    """Density estimator: a staged mixture of tree-structured Bayesian
    networks. ``score_samples`` returns per-row log-densities and ``score``
    their mean."""

    _task = "density"

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64)
        schema = Schema(tuple(self._feature_variables(X)))
        self.schema_ = schema
        return self._fit_dataset(Dataset(schema, _encode(X, self.categories_)))

    def _values(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return _encode(X, self.categories_)

    def score_samples(self, X):
        values = self._values(X)
        return self.mixture_.log_predictive(values)

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def staged_score(self, X):
        values = self._values(X)
        for m in self.stages_:
            yield float(np.mean(m.log_predictive(values)))
