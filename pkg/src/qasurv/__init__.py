"""Survival analysis of user disengagement in question-and-answer communities."""

from .cohort import (
    AttributeSelection,
    Criterion,
    Population,
    SampleSet,
    build_samples,
    build_urv,
    contributors,
    dichotomize,
    label_disengagement,
    months_between,
)
from .concordance import c_index
from .evaluation import cross_validate, kfold_split
from .ingest import dataset_stats, load_dataset, parse_comments, parse_posts, parse_users
from .rsf import (
    ForestParams,
    fit_forest,
    oob_error,
    permutation_importance,
    predict_chf,
    predict_risk,
)
from .survival import greenwood_ci, km_fit, log_rank, nelson_aalen

__version__ = "0.1.0"
