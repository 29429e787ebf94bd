"""Epistemic variance of wide ReLU networks, split into procedural and data parts."""
from .chi2 import Chi2Table, chi2_cdf, chi2_quantile
from .datagen import Dataset, SyntheticSpec, load_csv, sample, test_point, write_csv
from .estimators import (
    VarianceEstimate,
    batching,
    batching_from_predictions,
    data_variance_if,
    ensemble_predictions,
    ensemble_variance,
    influence,
)
from .exceptions import EpivarError
from .krr import KrrModel, NTKRidgeRegressor
from .krr import fit as fit_krr
from .krr import h0_baseline
from .krr import predict as predict_krr
from .network import NetConfig, NetTrainer, TrainedNet, WideReLURegressor, forward, init_params, train
from .ntk import GramMatrix, KernelConfig, empirical_ntk, ntk_gram, population_ntk
from .oracle import GroundTruth, decompose, empirical_variance, ground_truth

__version__ = "0.1.0"

__all__ = [
    "Chi2Table", "chi2_cdf", "chi2_quantile",
    "Dataset", "SyntheticSpec", "load_csv", "sample", "test_point", "write_csv",
    "VarianceEstimate", "batching", "batching_from_predictions", "data_variance_if",
    "ensemble_predictions", "ensemble_variance", "influence",
    "EpivarError",
    "KrrModel", "NTKRidgeRegressor", "fit_krr", "h0_baseline", "predict_krr",
    "NetConfig", "NetTrainer", "TrainedNet", "WideReLURegressor", "forward", "init_params", "train",
    "GramMatrix", "KernelConfig", "empirical_ntk", "ntk_gram", "population_ntk",
    "GroundTruth", "decompose", "empirical_variance", "ground_truth",
]
