"""Parameter fitting: optimizers, the two-stage fitter and part refinement."""

from ehm_tools.fitting.fit import FitResult, fit, fit_many, worker_count
from ehm_tools.fitting.optim import AdamState, Optimizer, step_adam, step_gradient_descent
from ehm_tools.fitting.problems import SyntheticProblem, framing_camera, synthetic_problem
from ehm_tools.fitting.refine import PartKeypoints, RefineResult, refine_part_labels

__all__ = [
    "AdamState",
    "FitResult",
    "Optimizer",
    "PartKeypoints",
    "RefineResult",
    "SyntheticProblem",
    "fit",
    "fit_many",
    "framing_camera",
    "refine_part_labels",
    "step_adam",
    "step_gradient_descent",
    "synthetic_problem",
    "worker_count",
]
