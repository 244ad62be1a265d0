"""Staged mixture modeling: finite mixtures grown one component at a time
with structural EM over fractionally weighted data."""

__version__ = "0.1.0"

from .bayesnet import BayesNetComponent, bn_log_density, learn_bayesnet, learn_marginal
from .data import (
    Dataset,
    DataError,
    Schema,
    Variable,
    WeightedDataset,
    holdout_split,
    load_csv,
    load_schema,
    uniform_weights,
    write_csv,
)
from .estimators import SMMClassifier, SMMDensity
from .mixture import (
    AddComponentConfig,
    LearnerConfig,
    Schedule,
    StagedMixture,
    add_component,
    fit_smm,
    maximize_new_weight,
    membership_weights,
    mixture_log_predictive,
)
from .tree import BIC, ML, ScoreKind, TreeModel, learn_tree, model_score

__all__ = [
    "AddComponentConfig",
    "BIC",
    "BayesNetComponent",
    "DataError",
    "Dataset",
    "LearnerConfig",
    "ML",
    "SMMClassifier",
    "SMMDensity",
    "Schedule",
    "Schema",
    "ScoreKind",
    "StagedMixture",
    "TreeModel",
    "Variable",
    "WeightedDataset",
    "add_component",
    "bn_log_density",
    "fit_smm",
    "holdout_split",
    "learn_bayesnet",
    "learn_marginal",
    "learn_tree",
    "load_csv",
    "load_schema",
    "maximize_new_weight",
    "membership_weights",
    "mixture_log_predictive",
    "model_score",
    "uniform_weights",
    "write_csv",
]
