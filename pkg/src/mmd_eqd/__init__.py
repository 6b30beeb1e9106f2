"""Kernel test of equality in distribution of two functionals of a data law."""

from .core import Calibration, Dataset, RngSeed, Schema, Splitting, TestConfig, read_csv
from .inference import TestResult, run_test
from .kernel import FunctionalEvaluations, gamma_matrix, gamma_tu
from .nuisance import Example, ExampleSpec, evaluate_example, split_fit

__version__ = "0.1.0"

__all__ = [
    "Calibration", "Dataset", "Example", "ExampleSpec", "FunctionalEvaluations", "RngSeed",
    "Schema", "Splitting", "TestConfig", "TestResult", "evaluate_example", "gamma_matrix",
    "gamma_tu", "read_csv", "run_test", "split_fit",
]
