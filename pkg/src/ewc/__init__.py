"""Expert-with-clustering contextual bandit for route recommendation."""

from .clustering import CentroidSet, kmeans_l2, kmeans_loss_guided, loss_guided_distance
from .core import Option, PreferenceParams, TravelContext, UserHistory, choice_loss, expert_loss_vector, predict_choice
from .harness import ExperimentConfig, RegretReport, run_experiment, theoretical_bound
from .hedge import HedgeState
from .offline import SeparatorFitConfig, canonicalize, fit_all_users, fit_user_separator
from .simulation import PopulationSpec, SyntheticDataset, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "CentroidSet",
    "ExperimentConfig",
    "HedgeState",
    "Option",
    "PopulationSpec",
    "PreferenceParams",
    "RegretReport",
    "SeparatorFitConfig",
    "SyntheticDataset",
    "TravelContext",
    "UserHistory",
    "canonicalize",
    "choice_loss",
    "expert_loss_vector",
    "fit_all_users",
    "fit_user_separator",
    "generate_dataset",
    "kmeans_l2",
    "kmeans_loss_guided",
    "loss_guided_distance",
    "predict_choice",
    "run_experiment",
    "theoretical_bound",
]
