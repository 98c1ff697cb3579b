"""Multi-aspect text-driven image editing with parallel branch calibration.

Plan edits by diffing prompt pairs, type and group them from attention
masks, and apply all aspects in one pass of parallel inversion-free
consistency sampling.  An exact Gaussian-mixture denoiser makes the whole
pipeline verifiable at desk scale.
"""

from .engine import EngineConfig, run_edit, sequential_repeat_baseline
from .grouping import plan_branches
from .plan import EditPlan, infer_plan, parse_annotation, plan_from_annotation
from .predictors import Conditioning, GaussianMixtureWorld, GmmPredictor
from .sampler import SamplerConfig, sample_source
from .schedules import DiffusionSchedule, build_schedule

__all__ = [
    "Conditioning",
    "DiffusionSchedule",
    "EditPlan",
    "EngineConfig",
    "GaussianMixtureWorld",
    "GmmPredictor",
    "SamplerConfig",
    "build_schedule",
    "infer_plan",
    "parse_annotation",
    "plan_branches",
    "plan_from_annotation",
    "run_edit",
    "sample_source",
    "sequential_repeat_baseline",
]

__version__ = "0.1.0"
