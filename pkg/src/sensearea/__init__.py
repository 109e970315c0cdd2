"""Locate where a laparoscopic probe's axis meets the tissue surface.

The package bundles a stereo scene simulator with analytic ground truth, a
laser-subtraction labeling pipeline, PCA probe-axis features, a small
dual-branch regressor trained with hand-written backprop, and the evaluation
metrics used to score it.
"""

from .axis import PrincipalPoints, ProbeAxis2D, pca_axis, probe_points
from .dataset import Manifest, generate_dataset, read_split, split
from .evaluation import EvalReport, euclidean_stats, evaluate, r2_score
from .geometry import (CameraIntrinsics, DepthMap, Heightfield, Ray3, StereoRig, backproject,
                       intersect_ray_surface, make_rig, project, triangulate)
from .groundtruth import LaserSegmentation, subtract_and_segment
from .model import ModelConfig, ModelParams, backward, forward, init_params
from .optim import AdamState, adam_step, lr_schedule
from .scene import Sample, Scene, SceneConfig, generate_sample, geometric_oracle, render_views, sample_scene
from .training import TrainConfig, infer, train

__all__ = [
    "PrincipalPoints", "ProbeAxis2D", "pca_axis", "probe_points", "Manifest", "generate_dataset",
    "read_split", "split", "EvalReport", "euclidean_stats", "evaluate", "r2_score", "CameraIntrinsics",
    "DepthMap", "Heightfield", "Ray3", "StereoRig", "backproject", "intersect_ray_surface", "make_rig",
    "project", "triangulate", "LaserSegmentation", "subtract_and_segment", "ModelConfig", "ModelParams",
    "backward", "forward", "init_params", "AdamState", "adam_step", "lr_schedule", "Sample", "Scene",
    "SceneConfig", "generate_sample", "geometric_oracle", "render_views", "sample_scene", "TrainConfig",
    "infer", "train",
]

__version__ = "0.1.0"
