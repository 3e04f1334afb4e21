"""Saddle-point-avoiding distributed optimization driven by switching stochastic quantization."""

from .cli import SummaryReport, run_batch
from .config import ConfigError, ExperimentConfig, build_run_config, load_config, write_config
from .diagnostics import PointClass, classify_point, consensus_error, min_hessian_eigenvalue
from .engine import (AtPoint, DivergenceError, RandomBox, RunConfig, RunRecord, dgd_config,
                     largest_stable_constant_stepsize, largest_stable_dgd_stepsize, run, step)
from .mixing import MixingMatrix, from_weights, lazy, metropolis, metropolis_ring
from .objectives import LogisticBilinear, MatrixFactorization, Objective, QuadraticSaddle
from .quantizer import (Codec, Parity, QuantizedVector, QuantizerSpec, Scheme, decode,
                        empirical_moments, encode, interval_for_bits, quantize_coord,
                        quantize_vector)
from .schedule import (ConstantSchedule, ProblemConstants, Schedule, ScheduleParams,
                       derive_constants, diminishing_schedule, practical_schedule,
                       random_hold_schedule, theoretical_schedule)

__version__ = "0.1.0"

__all__ = [
    "AtPoint", "Codec", "ConfigError", "ConstantSchedule", "DivergenceError",
    "ExperimentConfig", "LogisticBilinear", "MatrixFactorization", "MixingMatrix", "Objective",
    "Parity", "PointClass", "ProblemConstants", "QuadraticSaddle", "QuantizedVector",
    "QuantizerSpec", "RandomBox", "RunConfig", "RunRecord", "Schedule", "ScheduleParams",
    "Scheme", "SummaryReport", "build_run_config", "classify_point", "consensus_error",
    "decode", "derive_constants", "dgd_config", "diminishing_schedule", "empirical_moments",
    "encode", "from_weights", "interval_for_bits", "largest_stable_constant_stepsize",
    "largest_stable_dgd_stepsize", "lazy", "load_config", "metropolis", "metropolis_ring",
    "min_hessian_eigenvalue", "practical_schedule", "quantize_coord", "quantize_vector",
    "random_hold_schedule", "run", "run_batch", "step", "theoretical_schedule", "write_config",
]
