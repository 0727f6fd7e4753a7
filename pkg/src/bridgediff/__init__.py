"""Conditional Brownian-bridge diffusion for paired pre/post-event generation."""

from .bridge import SampleTrace, sample
from .codec import CodecParams, LinearCodec
from .conditioning import ConditionPayload
from .data import PairedSample, make_pointcloud_dataset, make_scene_dataset
from .denoiser import DenoiserConfig
from .estimator import BridgeRegressor
from .numerics import make_rng
from .schedule import BridgeSchedule, StepCoefficients, build_schedule
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train_loop

__all__ = [
    "BridgeRegressor",
    "BridgeSchedule",
    "Checkpoint",
    "CodecParams",
    "ConditionPayload",
    "DenoiserConfig",
    "LinearCodec",
    "PairedSample",
    "SampleTrace",
    "StepCoefficients",
    "TrainConfig",
    "build_schedule",
    "load_checkpoint",
    "make_pointcloud_dataset",
    "make_rng",
    "make_scene_dataset",
    "sample",
    "save_checkpoint",
    "train_loop",
]

__version__ = "0.1.0"
