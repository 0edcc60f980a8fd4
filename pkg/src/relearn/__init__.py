"""On-policy data-driven LQR: online least-squares identification of the
plant, a policy-gradient step on the feedback gain and a probing dither,
run together in closed loop, plus numerical checks of the convergence
analysis."""

from .closed_loop import (Drift, PlantSchedule, SimConfig, TrajectoryRecord,
                          fit_exponential_rate, relearn_step, run_relearn)
from .dither import Exosystem, build_exosystem
from .learner import LearnerState, rls_update
from .lqr import CostSpec, cost_and_gradient, dare_solve, lqr_cost, lqr_gradient

__version__ = "0.1.0"

__all__ = [
    "CostSpec", "Drift", "Exosystem", "LearnerState", "PlantSchedule", "SimConfig",
    "TrajectoryRecord", "build_exosystem", "cost_and_gradient", "dare_solve",
    "fit_exponential_rate", "lqr_cost", "lqr_gradient", "relearn_step", "rls_update",
    "run_relearn",
]
