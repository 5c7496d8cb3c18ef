"""Change-point linear transformation models for right-censored data."""

from .data import CovariatePath, DataError, Dataset, Subject, default_bounds, load_dataset, validate, write_dataset
from .estimator import FitConfig, FitResult, NonConvergenceError, fit_npmle, fit_null, maximize_gamma, profile_A
from .families import COX, PROPORTIONAL_ODDS, DomainError, TransformFamily, parse_family
from .inference import (ChangePointCI, InsufficientDataError, PsiBootstrap, WeightScheme, bootstrap_psi,
                        cp_confidence_interval, draw_weights)
from .likelihood import CumHazard, NumericError, RegularParams, Theta, info_euclidean, loglik, score_euclidean
from .scoretest import ScoreProcess, TestResult, plugin_covariance, run_test, score_process
from .sim import Scenario, reproduce_table1, run_scenario, simulate_dataset

__version__ = "0.1.0"
