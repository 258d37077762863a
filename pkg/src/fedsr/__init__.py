"""Federated blind super-resolution benchmark at desk scale."""
from .degradation import DegradationSpec, DegradationType, degrade
from .estimators import (
    AverageLinkageClustering,
    Degrader,
    FederatedSRRegressor,
    SRResNetRegressor,
)
from .evaluation import EvaluationMatrix, evaluate, psnr
from .federation import TrainConfig, fedavg_aggregate, run_centralized, run_federated
from .model import ModelConfig, init_weights, load_weights, save_weights
from .partition import PartitionPlan, build_partition

__version__ = "0.1.0"
