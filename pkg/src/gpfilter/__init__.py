"""Gaussian-process filtering of object detections on periodic trajectories."""

from .clustering import DBSCAN, dbscan, elbow_eps
from .filter import PeriodicTrajectoryFilter
from .gp import GaussianProcessRegressor, GPHyperparams
from .metrics import PRSeries, average_precision, optimal_f1
from .preprocess import PeriodNotIdentifiable, align, auto_clean, estimate_period, manual_clean
from .simulator import RunRecord, SimulationConfig, simulate_run
from .trajectory import TRAJECTORIES, NominalTrajectory, PRCurveModel, get_trajectory, nominal_position

__version__ = "0.1.0"
