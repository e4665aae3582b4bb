from fbsim.band_estimator import BandingEstimate, estimate_banding, qa_manifest
from fbsim.cli import main
from fbsim.colorspace import RgbImage, YccImage, rgb_to_ycc, ycc_to_rgb
from fbsim.dataset_manager import DatasetManager, PairRecord, ParamRanges, sample_params
from fbsim.degradation import apply_banding_luma, sensor_noise, synthesize_lq
from fbsim.distance_providers import DistanceProvider, FileDistanceProvider, GradientDistanceProvider
from fbsim.evaluator import Evaluator, MetricReport, evaluate_pairs
from fbsim.geometry import rotate_coords, sample_jitter, stripe_centerlines
from fbsim.mask import FlickerMask, render_mask
from fbsim.metrics import (
    MaskedLossWeights,
    masked_mean,
    masked_perceptual_loss,
    masked_pixel_loss,
    merged_loss,
    psnr,
    ssim,
)
from fbsim.params import BandingParams, JitterTrace

__all__ = [
    "BandingEstimate",
    "BandingParams",
    "DatasetManager",
    "DistanceProvider",
    "Evaluator",
    "FileDistanceProvider",
    "FlickerMask",
    "GradientDistanceProvider",
    "JitterTrace",
    "MaskedLossWeights",
    "MetricReport",
    "PairRecord",
    "ParamRanges",
    "RgbImage",
    "YccImage",
    "apply_banding_luma",
    "estimate_banding",
    "evaluate_pairs",
    "main",
    "masked_mean",
    "masked_perceptual_loss",
    "masked_pixel_loss",
    "merged_loss",
    "psnr",
    "qa_manifest",
    "render_mask",
    "rgb_to_ycc",
    "rotate_coords",
    "sample_jitter",
    "sample_params",
    "sensor_noise",
    "ssim",
    "stripe_centerlines",
    "synthesize_lq",
    "ycc_to_rgb",
]
