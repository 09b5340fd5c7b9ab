"""Chance-constrained sampling MPC with Gaussian-process residual dynamics for skid-steer robots."""

from .core import (BeliefState, Control, ControlSequence, GaussianCorrection, RobotState, TerrainWeights,
                   body_frame_displacement, wrap_angle)
from .costs import AvoidanceWeights, CircleObstacle, GoalSpec, Track, TrackingWeights
from .dynamics import ASPHALT, DEFAULT_TERRAINS, GRASS, TILE, Edd5Params, NominalParams, TerrainProfile
from .gp import EnsembleEvaluator, GpModel, KernelParams, ensemble_combine, fit, fit_auto, predict
from .mppi import (AvoidanceTask, Edd5Model, GpResidualModel, MppiConfig, Planner, TrackingTask,
                   UnicycleModel)
from .terrain import HistoryBuffer, WeightSolverConfig, solve_weights
from .uncertainty import QuantileTables, chi2_quantile_2dof, normal_quantile

__version__ = "0.1.0"
