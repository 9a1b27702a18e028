"""Federated NILM appliance-state classification with differential privacy."""
from ._accel import BACKEND
from .nn import NetworkSpec, ModelParams, build_network, forward, loss_and_grad, sgd_step
from .fl import FLConfig, run_federated, run_centralized, run_local
from .dp import PrivacyConfig, sigma_for, clip
from .experiment import ExperimentConfig, parse_config, run_scenario, sweep

__all__ = [
    "BACKEND", "NetworkSpec", "ModelParams", "build_network", "forward", "loss_and_grad",
    "sgd_step", "FLConfig", "run_federated", "run_centralized", "run_local", "PrivacyConfig",
    "sigma_for", "clip", "ExperimentConfig", "parse_config", "run_scenario", "sweep",
]
__version__ = "0.1.0"
