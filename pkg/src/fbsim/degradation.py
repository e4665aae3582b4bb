"""Luminance-domain banding and sensor noise: HQ image in, LQ image out."""

from __future__ import annotations

import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from fbsim.colorspace import RgbImage, YccImage, rgb_to_ycc, ycc_to_rgb
from fbsim.geometry import sample_jitter, stripe_index_range
from fbsim.mask import FlickerMask, render_mask
from fbsim.params import BandingParams, JitterTrace

logger = logging.getLogger(__name__)


class DegradationOutput(BaseModel):
    lq: RgbImage
    mask: FlickerMask
    trace: JitterTrace
    params: BandingParams
    banded_ycc: YccImage

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def validate_shapes(self) -> DegradationOutput:
        if self.lq.pixels.shape[:2] != self.mask.values.shape:
            msg = "LQ image and mask dimensions differ"
            raise ValueError(msg)
        return self


def apply_banding_luma(y_plane: np.ndarray, mask: FlickerMask, v_y: float) -> np.ndarray:
    """Darken the luminance plane inside the banded area.

    `out = v_y * Y * M + Y * (1 - M)`, valid for fractional (feathered) mask values.
    """
    if y_plane.shape != mask.values.shape:
        msg = f"Luminance plane {y_plane.shape} and mask {mask.values.shape} differ in shape"
        raise ValueError(msg)
    if not 0 < v_y <= 1:
        msg = f"v_y must lie in (0, 1], got {v_y}"
        raise ValueError(msg)

    m = mask.values
    out = v_y * y_plane * m + y_plane * (1 - m)
    # Keep float rounding inside the convex hull of v_y*Y and Y.
    lo = v_y * y_plane
    return np.clip(out, np.minimum(lo, y_plane), np.maximum(lo, y_plane))


def heteroscedastic_noise(
    values: np.ndarray, alpha: float, sigma_r: float, rng: np.random.Generator
) -> np.ndarray:
    """Return `I + sqrt(alpha * I + sigma_r^2) * eps` without clamping."""
    if alpha < 0 or sigma_r < 0:
        msg = f"Noise parameters must be non-negative (alpha={alpha}, sigma_r={sigma_r})"
        raise ValueError(msg)
    std = np.sqrt(np.maximum(alpha * values + sigma_r**2, 0.0))
    return values + std * rng.standard_normal(values.shape)


def sensor_noise(img: RgbImage, alpha: float, sigma_r: float, rng: np.random.Generator) -> RgbImage:
    """Apply signal-dependent Gaussian sensor noise per pixel and channel, clamped to [0, 1]."""
    if alpha == 0 and sigma_r == 0:
        return img
    return RgbImage.from_unclamped(heteroscedastic_noise(img.pixels, alpha, sigma_r, rng))


def synthesize_lq(hq: RgbImage, params: BandingParams) -> DegradationOutput:
    """Synthesize a flicker-banded LQ image from a clean HQ image.

    The pipeline is jitter sampling, mask rendering, RGB to YCbCr, luminance
    darkening, recomposition with the HQ chroma, then sensor noise.

    Args:
        hq: Clean source image
        params: Banding parameters; `params.seed` fixes every random draw

    Returns:
        The LQ image together with its mask, jitter trace and parameters

    Notes:
        - The seed is split into two independent streams, one for the jitter and
            one for the noise, so noise settings never alter the banding geometry.
        - Output is bit-identical for identical `(hq, params)`.

    Example:
        ```python
        params = BandingParams(width_w=10, gap_g=30, v_y=0.5, seed=7)
        out = synthesize_lq(hq, params)
        out.lq, out.mask
        ```
    """
    jitter_seq, noise_seq = np.random.SeedSequence(params.seed).spawn(2)
    index_range = stripe_index_range(params, hq.width, hq.height)

    trace = sample_jitter(
        params,
        np.random.default_rng(jitter_seq),
        n_stripes=index_range.n_stripes,
        u_len=index_range.u_len,
        first_index=index_range.first_index,
        u_origin=index_range.u_origin,
    )
    mask = render_mask(params, trace, hq.width, hq.height)

    ycc = rgb_to_ycc(hq)
    banded = YccImage.from_planes(apply_banding_luma(ycc.y, mask, params.v_y), ycc.cb, ycc.cr)
    composed = ycc_to_rgb(banded)
    lq = sensor_noise(composed, params.noise_alpha, params.noise_sigma_r, np.random.default_rng(noise_seq))

    logger.debug("Synthesized %dx%d LQ image, %d stripes in trace", hq.width, hq.height, len(trace))
    return DegradationOutput(lq=lq, mask=mask, trace=trace, params=params, banded_ycc=banded)
