"""FIR impulse-response estimation with data-driven regularization.

The package estimates finite impulse responses of stable SISO systems from
short noisy records.  A regularized least-squares core is shared by three
regularizer choices: an oracle built from the true response, an empirical
Bayes tuner over a stable-spline kernel family, and a neural network that
maps the record to an inverse regularization matrix.
"""

from .dataset import (Dataset, DatasetConfig, Example, ScaleRecord, ThetaStats,
                      compute_theta_stats, denormalize_theta, generate_dataset,
                      load_dataset, load_theta_stats, normalize_dataset,
                      normalize_example, save_dataset, save_theta_stats,
                      simulate_io)
from .errors import (ChecksumMismatch, DegenerateDenominator, DegenerateGain,
                     DegenerateSequence, EmptyDataset, FormatVersionMismatch,
                     ImpregError, NonFiniteActivation, NonFiniteGradient,
                     NonpositiveNoise, NumericalFailure, OptimizationFailed,
                     SequenceTooShort, SingularSystem)
from .gpreg import GPHyper, fit_empirical_bayes, kernel_matrix, marginal_loglik
from .metrics import (EvalReport, ExampleScore, estimation_error,
                      evaluate_method, ls_relative_score, model_fit_score)
from .neural import (NetParams, TrainConfig, TrainingLog, assemble_reg_matrix,
                     backward, forward, init_params, load_model,
                     predict_reg_matrix, regularizer_for_example, save_model,
                     softmax_with_one, train)
from .regls import (RegressionData, build_regression, estimate, least_squares,
                    optimal_regularizer, regressor_matrix)
from .sysgen import (ContinuousStateSpace, DiscreteStateSpace, bandwidth,
                     dc_gain, discretize_zoh, draw_fir_system,
                     impulse_response, is_stable, matrix_exponential,
                     sample_system, sampling_interval, tail_energy_fraction)

__version__ = "0.1.0"

__all__ = [
    "ChecksumMismatch", "ContinuousStateSpace", "Dataset", "DatasetConfig",
    "DegenerateDenominator", "DegenerateGain", "DegenerateSequence",
    "DiscreteStateSpace", "EmptyDataset", "EvalReport", "Example",
    "ExampleScore", "FormatVersionMismatch", "GPHyper", "ImpregError",
    "NetParams", "NonFiniteActivation", "NonFiniteGradient",
    "NonpositiveNoise", "NumericalFailure", "OptimizationFailed",
    "RegressionData", "ScaleRecord", "SequenceTooShort", "SingularSystem",
    "ThetaStats", "TrainConfig", "TrainingLog", "assemble_reg_matrix",
    "backward", "bandwidth", "build_regression", "compute_theta_stats",
    "dc_gain", "denormalize_theta", "discretize_zoh", "draw_fir_system",
    "estimate", "estimation_error", "evaluate_method", "fit_empirical_bayes",
    "forward", "generate_dataset", "impulse_response", "init_params",
    "is_stable", "kernel_matrix", "least_squares", "load_dataset",
    "load_model", "load_theta_stats", "ls_relative_score",
    "marginal_loglik", "matrix_exponential", "model_fit_score",
    "normalize_dataset", "normalize_example", "optimal_regularizer",
    "predict_reg_matrix", "regressor_matrix", "regularizer_for_example",
    "sample_system", "sampling_interval", "save_dataset", "save_model",
    "save_theta_stats", "simulate_io", "softmax_with_one",
    "tail_energy_fraction", "train",
]
