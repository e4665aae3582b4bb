"""Feathered flicker-banding mask rendering."""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from fbsim.exceptions import TraceMismatchError
from fbsim.geometry import rotate_coords
from fbsim.params import BandingParams, JitterTrace


class FlickerMask(BaseModel):
    """H x W banding mask: 1 inside a stripe, 0 outside, fractional on feathered edges."""

    values: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("values")
    @classmethod
    def validate_values(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 2 or v.size == 0:  # noqa: PLR2004
            msg = f"Mask must be a non-empty 2D array, got shape {v.shape}"
            raise ValueError(msg)
        v = np.asarray(v, dtype=np.float64)
        if np.any(v < 0) or np.any(v > 1) or np.any(np.isnan(v)):
            msg = "Mask values must lie in [0, 1]"
            raise ValueError(msg)
        return v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _frame_v_range(img_w: int, img_h: int, theta: float) -> tuple[float, float]:
    xs = np.array([0, img_w - 1, 0, img_w - 1])
    ys = np.array([0, 0, img_h - 1, img_h - 1])
    _, v = rotate_coords(xs, ys, img_w, img_h, theta)
    return float(v.min()), float(v.max())


def render_mask(params: BandingParams, trace: JitterTrace, img_w: int, img_h: int) -> FlickerMask:
    """Render the banding mask of one realization.

    Every stripe is evaluated in its own frame, rotated by the nominal angle plus
    the stripe's angle offset. A pixel center at normal coordinate `v` lies inside
    stripe `k` when `bot_k(u) <= v <= top_k(u)`, with the edges displaced by the
    eta processes. The signed depth `d = min(top - v, v - bot)` is mapped through a
    linear ramp of half-width `feather_px`; overlapping stripes combine by maximum.

    Args:
        params: Banding parameters
        trace: Jitter realization covering every stripe that can reach the image
        img_w: Image width in pixels
        img_h: Image height in pixels

    Returns:
        The rendered FlickerMask

    Raises:
        ValueError: If the image has zero area
        TraceMismatchError: If the trace is inconsistent with the parameters
    """
    if img_w < 1 or img_h < 1:
        msg = f"Cannot render a mask for a {img_w}x{img_h} image"
        raise ValueError(msg)
    if len(trace) == 0:
        msg = "Jitter trace is empty"
        raise TraceMismatchError(msg)
    try:
        trace.check_bounds(params)
    except ValueError as e:
        msg = f"Jitter trace does not match the banding parameters: {e}"
        raise TraceMismatchError(msg) from e

    x = np.arange(img_w, dtype=np.float64)[np.newaxis, :]
    y = np.arange(img_h, dtype=np.float64)[:, np.newaxis]
    feather = params.feather_px
    u_len = trace.eta_top.shape[1]
    mask = np.zeros((img_h, img_w))

    for i, k in enumerate(trace.stripe_indices):
        theta_k = params.theta + float(trace.angle_offsets[i])
        center = int(k) * params.period + params.phase_phi + float(trace.spacing_offsets[i])
        half = (params.width_w + float(trace.width_offsets[i])) / 2
        meander = params.delta_edge * max(np.abs(trace.eta_top[i]).max(), np.abs(trace.eta_bot[i]).max())

        v_lo, v_hi = _frame_v_range(img_w, img_h, theta_k)
        reach = half + meander + feather
        if center + reach < v_lo or center - reach > v_hi:
            continue

        u, v = rotate_coords(x, y, img_w, img_h, theta_k)
        idx = np.clip(np.rint(u - trace.u_origin).astype(np.int64), 0, u_len - 1)
        top = center + half + params.delta_edge * trace.eta_top[i][idx]
        bot = center - half + params.delta_edge * trace.eta_bot[i][idx]
        depth = np.minimum(top - v, v - bot)

        if feather == 0:
            stripe = (depth >= 0).astype(np.float64)
        else:
            stripe = np.clip((depth + feather) / (2 * feather), 0.0, 1.0)
        np.maximum(mask, stripe, out=mask)

    return FlickerMask(values=mask)


def mask_coverage(mask: FlickerMask) -> float:
    """Fraction of the image covered by banding (mean mask value)."""
    return float(mask.values.mean())

