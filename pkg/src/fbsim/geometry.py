"""Stripe-aligned coordinates, stripe centerlines and jitter realizations."""

from __future__ import annotations

import logging
import math
from typing import NamedTuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter1d

from fbsim.exceptions import InvalidParamsError
from fbsim.params import BandingParams, JitterTrace

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

MAX_RESAMPLE_ATTEMPTS = 100
# Unit-variance eta samples essentially never exceed this many standard deviations.
EDGE_BOUND = 6.0


class StripeCenterline(NamedTuple):
    k: int
    center_v: float
    realized_width: float


class StripeIndexRange(NamedTuple):
    first_index: int
    n_stripes: int
    u_origin: float
    u_len: int


def rotate_coords(
    x: ArrayLike, y: ArrayLike, img_w: int, img_h: int, theta: float
) -> tuple[ArrayLike, ArrayLike]:
    """Map pixel coordinates to the stripe-aligned frame.

    The frame is centered on the image; `u` runs along the stripes and `v` is
    normal to them.

    Args:
        x: Column index (scalar or array)
        y: Row index (scalar or array)
        img_w: Image width in pixels
        img_h: Image height in pixels
        theta: Stripe orientation in radians

    Returns:
        The `(u, v)` coordinates, broadcast like `x` and `y`

    Example:
        ```python
        rotate_coords(4, 1, img_w=5, img_h=3, theta=0.0)
        # (2.0, 0.0)
        ```
    """
    dx = np.asarray(x, dtype=np.float64) - (img_w - 1) / 2
    dy = np.asarray(y, dtype=np.float64) - (img_h - 1) / 2
    c, s = math.cos(theta), math.sin(theta)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    if u.ndim == 0:
        return float(u), float(v)
    return u, v


def lowpass_noise_1d(length: int, corr_len: float, rng: np.random.Generator) -> np.ndarray:
    """Draw a zero-mean, unit-variance low-pass random sequence.

    Gaussian white noise is smoothed with a Gaussian kernel of std `corr_len / 2`
    and renormalized to unit sample variance. A single sample is returned as drawn.
    """
    if length < 1:
        msg = "length must be at least 1"
        raise ValueError(msg)
    if corr_len < 1:
        msg = "corr_len must be at least 1"
        raise ValueError(msg)

    white = rng.standard_normal(length)
    if length == 1:
        return white

    smooth = gaussian_filter1d(white, sigma=corr_len / 2, mode="reflect")
    smooth -= smooth.mean()
    std = smooth.std()
    if std == 0:
        return np.zeros(length)
    return smooth / std


def _overlaps_previous(params: BandingParams, spacing: np.ndarray, width: np.ndarray, i: int) -> bool:
    center_gap = params.period + spacing[i] - spacing[i - 1]
    half_widths = (params.width_w + width[i]) / 2 + (params.width_w + width[i - 1]) / 2
    return center_gap < half_widths


def sample_jitter(
    params: BandingParams,
    rng: np.random.Generator,
    n_stripes: int,
    u_len: int,
    first_index: int = 0,
    u_origin: float = 0.0,
) -> JitterTrace:
    """Draw every per-stripe random quantity of one banding pattern.

    Draw order is fixed (angles, spacing, widths, then the eta rows stripe by
    stripe) so a given generator state always yields the same trace.

    Args:
        params: Banding parameters supplying the jitter amplitudes
        rng: Seeded generator consumed by the draws
        n_stripes: Number of consecutive stripes to cover
        u_len: Number of eta samples per stripe edge
        first_index: Stripe index `k` of the first stripe
        u_origin: Along-stripe coordinate of the first eta sample

    Returns:
        The realized JitterTrace

    Notes:
        - Angle offsets are Normal(0, sigma_theta^2); spacing and width offsets are
            Uniform(-delta, +delta).
        - A stripe whose draws would overlap its predecessor is redrawn, at most
            100 times, after which InvalidParamsError is raised.
    """
    if n_stripes < 1 or u_len < 1:
        msg = f"n_stripes and u_len must be positive (got {n_stripes}, {u_len})"
        raise ValueError(msg)

    angle = rng.normal(0.0, params.sigma_theta, n_stripes)
    spacing = rng.uniform(-params.delta_g, params.delta_g, n_stripes)
    width = rng.uniform(-params.delta_w, params.delta_w, n_stripes)

    for i in range(1, n_stripes):
        attempts = 0
        while _overlaps_previous(params, spacing, width, i):
            attempts += 1
            if attempts > MAX_RESAMPLE_ATTEMPTS:
                msg = f"Could not draw non-overlapping jitter for stripe {first_index + i}"
                raise InvalidParamsError(msg)
            spacing[i] = rng.uniform(-params.delta_g, params.delta_g)
            width[i] = rng.uniform(-params.delta_w, params.delta_w)
        if attempts:
            logger.debug("Stripe %d redrawn %d times to avoid overlap", first_index + i, attempts)

    eta_top = np.empty((n_stripes, u_len))
    eta_bot = np.empty((n_stripes, u_len))
    for i in range(n_stripes):
        eta_top[i] = lowpass_noise_1d(u_len, params.edge_corr_len, rng)
        eta_bot[i] = lowpass_noise_1d(u_len, params.edge_corr_len, rng)

    return JitterTrace(
        stripe_indices=np.arange(first_index, first_index + n_stripes, dtype=np.int64),
        angle_offsets=angle,
        spacing_offsets=spacing,
        width_offsets=width,
        eta_top=eta_top,
        eta_bot=eta_bot,
        u_origin=u_origin,
    )


def stripe_index_range(params: BandingParams, img_w: int, img_h: int) -> StripeIndexRange:
    """Stripes and eta samples a trace needs to cover an `img_w` x `img_h` image."""
    radius = 0.5 * math.hypot(img_w - 1, img_h - 1)
    tilt = radius * math.sin(min(EDGE_BOUND * params.sigma_theta, math.pi / 2))
    margin = (
        params.width_w
        + params.delta_w
        + params.delta_g
        + params.feather_px
        + EDGE_BOUND * params.delta_edge
        + tilt
        + params.period
    )
    k_min = math.floor((-radius - margin - params.phase_phi) / params.period)
    k_max = math.ceil((radius + margin - params.phase_phi) / params.period)
    half_len = math.ceil(radius)
    return StripeIndexRange(
        first_index=k_min,
        n_stripes=k_max - k_min + 1,
        u_origin=float(-half_len),
        u_len=2 * half_len + 1,
    )


def stripe_centerlines(
    params: BandingParams, trace: JitterTrace, v_min: float, v_max: float
) -> list[StripeCenterline]:
    """List the stripes whose realized extent reaches into `[v_min, v_max]`.

    Centers follow `k * P + phase_phi + spacing_offset_k`, widths `width_w + width_offset_k`.
    The extent includes the edge meander of each stripe. Output is sorted by `k`.

    Raises:
        TraceMismatchError: If the trace lacks a stripe the range requires
    """
    if v_min >= v_max:
        msg = f"v_min ({v_min}) must be smaller than v_max ({v_max})"
        raise ValueError(msg)

    period = params.period
    k_lo = math.ceil((v_min - period - params.phase_phi) / period)
    k_hi = math.floor((v_max + period - params.phase_phi) / period)

    stripes = []
    for k in range(k_lo, k_hi + 1):
        i = trace.position(k)
        center = k * period + params.phase_phi + float(trace.spacing_offsets[i])
        realized_width = params.width_w + float(trace.width_offsets[i])
        meander = params.delta_edge * max(
            float(np.max(np.abs(trace.eta_top[i]))), float(np.max(np.abs(trace.eta_bot[i])))
        )
        reach = realized_width / 2 + meander
        if center - reach <= v_max and center + reach >= v_min:
            stripes.append(StripeCenterline(k=k, center_v=center, realized_width=realized_width))
    return stripes
