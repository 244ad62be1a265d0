import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score
from sklearn.utils.estimator_checks import parametrize_with_checks

from smm import SMMClassifier, SMMDensity
from smm.evaluation import log_score
from smm.synth import random_product_spec, sample


@parametrize_with_checks([SMMClassifier(n_components=2, max_leaves=2), SMMDensity(n_components=2, max_leaves=2)])
def test_sklearn_compatible(estimator, check):
    check(estimator)


def _blobs(n=300, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 3, n)
    X = rng.normal(size=(n, 2)) + 6 * np.column_stack([y == 1, y == 2])
    return X, np.array(["a", "b", "c"])[y]


def test_classifier_learns_string_labels():
    X, y = _blobs()
    clf = SMMClassifier(n_components=3, max_leaves=4).fit(X, y)
    assert list(clf.classes_) == ["a", "b", "c"]
    assert clf.score(X, y) > 0.9
    staged = list(clf.staged_predict_proba(X))
    assert len(staged) == 3
    np.testing.assert_array_equal(staged[-1], clf.predict_proba(X))


def test_classifier_categorical_feature():
    rng = np.random.default_rng(1)
    color = rng.choice([10.0, 20.0, 30.0], size=400)
    y = (color == 20.0).astype(int)
    X = np.column_stack([color, rng.normal(size=400)])
    clf = SMMClassifier(n_components=2, max_leaves=2, categorical_features=[0]).fit(X, y)
    assert clf.schema_[0].is_discrete and clf.schema_[0].n_states == 3
    assert clf.score(X, y) == 1.0
    with pytest.raises(ValueError, match="not seen"):
        clf.predict(np.array([[40.0, 0.0]]))


def test_density_matches_engine():
    spec = random_product_spec(4, 3, 2, 0.8, seed=0)
    d = sample(spec, 500, seed=0)
    est = SMMDensity(n_components=3, max_leaves=2, categorical_features=[0, 1, 2, 3]).fit(d.values)
    assert est.score(d.values) == pytest.approx(log_score(est.mixture_, d))
    scores = list(est.staged_score(d.values))
    assert len(scores) == 3 and scores[-1] == est.score(d.values)


def test_unfitted_and_cloned():
    X, y = _blobs(60)
    with pytest.raises(NotFittedError):
        SMMClassifier().predict(X)
    est = SMMClassifier(n_components=2, pi_init=0.3, schedule="1-1-1")
    assert clone(est).get_params() == est.get_params()


def test_works_inside_model_selection():
    X, y = _blobs(150)
    scores = cross_val_score(SMMClassifier(n_components=2, max_leaves=3), X, y, cv=3)
    assert scores.mean() > 0.8
