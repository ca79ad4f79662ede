"""Stiff chemical-kinetics trajectories and ResNet surrogates trained by BFGS."""

from .dataset import (
    Dataset,
    PairSet,
    ScalerParams,
    apply_scaler,
    balance_by_replication,
    build_pairs,
    classify_fuel,
    fit_scaler,
    invert_scaler,
    split_validation,
)
from .integrator import IntegratorConfig, Trajectory, ignition_trajectory, integrate, step_implicit
from .mechanism import Mechanism, State, arrhenius_rate, jacobian, load_mechanism, parse_mechanism, rhs
from .resnet import ParallelSurrogate, ResNetParams, forward, loss_and_gradient, smooth_relu
from .rollout import enforce_mass, evaluate_rollout, march_derivative, march_solution, trajectory_error
from .trainer import TrainConfig, bfgs_minimize, train_network, train_parallel

__version__ = "0.1.0"
