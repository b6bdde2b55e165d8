"""Dynamic 2D Gaussian splat scenes: static fitting, then progressive
alignment of a deformation field over a timestep curriculum."""

from .config import RunConfig
from .field import (DeformationField, apply_deformation, render_at_time,
                    sample_field, tv_loss)
from .metrics import evaluate, l1, psnr, ssim
from .params import FieldShape, ParamLayout
from .rasterizer import render, render_naive_reference
from .scenegen import (FrameSet, GroupSpec, SceneSpec, load_dataset,
                       make_trajectory, standard_suite, synth_dataset)
from .schedule import TimestepSchedule, pick_reference, schedule_update
from .splats import Camera, Scene, Splat, build_covariance, splat_contribution
from .trainer import (AlignConfig, DeformationCache, alignment_loss,
                      alignment_weight, baseline_fit, stage1_fit, stage2_fit)

__version__ = "0.1.0"
__all__ = [
    "AlignConfig", "Camera", "DeformationCache", "DeformationField", "FieldShape",
    "FrameSet", "GroupSpec", "ParamLayout", "RunConfig", "Scene", "SceneSpec",
    "Splat", "TimestepSchedule", "alignment_loss", "alignment_weight",
    "apply_deformation", "baseline_fit", "build_covariance", "evaluate", "l1",
    "load_dataset", "make_trajectory", "pick_reference", "psnr", "render",
    "render_at_time", "render_naive_reference", "sample_field", "schedule_update",
    "splat_contribution", "ssim", "stage1_fit", "stage2_fit", "standard_suite",
    "synth_dataset", "tv_loss",
]
