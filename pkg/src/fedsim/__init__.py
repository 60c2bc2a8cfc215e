"""Deterministic federated-learning simulator with DRAG / BR-DRAG aggregation."""
from .config import AggregatorKind, FedConfig, parse_config
from .engine import RoundRecord, Simulation, build_problem, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AggregatorKind",
    "FederatedClassifier",
    "FedConfig",
    "RoundRecord",
    "Simulation",
    "build_problem",
    "parse_config",
    "run_experiment",
    "__version__",
]


def __getattr__(name):
    # keep scikit-learn off the import path of the CLI
    if name == "FederatedClassifier":
        from .estimator import FederatedClassifier
        return FederatedClassifier
    raise AttributeError(name)
