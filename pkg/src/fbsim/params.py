# ruff:noqa:D102,D101,D107 docstrings
# ruff:noqa:ANN204 Annotation

from __future__ import annotations

import hashlib
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from fbsim.exceptions import InvalidParamsError, TraceMismatchError

U64_MAX = 2**64 - 1


class BandingParams(BaseModel):
    """Full parameterization of one flicker-banding realization.

    Lengths are in pixels, angles in radians. `seed` drives every random draw of
    the realization, so `(image, params)` reproduces the degraded image exactly.
    """

    theta: float = Field(0.0, ge=-math.pi, lt=math.pi, description="Nominal stripe orientation")
    width_w: float = Field(..., gt=0, description="Nominal stripe width")
    gap_g: float = Field(..., gt=0, description="Nominal gap between stripes")
    phase_phi: float = Field(0.0, description="Phase offset along the stripe normal")
    sigma_theta: float = Field(0.0, ge=0, description="Std of the per-stripe angle offset")
    delta_g: float = Field(0.0, ge=0, description="Spacing jitter amplitude")
    delta_w: float = Field(0.0, ge=0, description="Width jitter amplitude")
    delta_edge: float = Field(0.0, ge=0, description="Edge meander amplitude")
    edge_corr_len: float = Field(32.0, ge=1, description="Correlation length of the edge processes")
    feather_px: float = Field(2.0, ge=0, description="Half-width of the feathered boundary ramp")
    v_y: float = Field(0.5, gt=0, le=1, description="Luminance darkening factor inside stripes")
    noise_alpha: float = Field(0.0, ge=0, description="Signal-dependent noise strength")
    noise_sigma_r: float = Field(0.0, ge=0, description="Signal-independent noise std")
    seed: int = Field(0, ge=0, le=U64_MAX, description="RNG seed for the realization")

    model_config = ConfigDict(extra="forbid")

    @field_validator("theta", "width_w", "gap_g", "phase_phi", "edge_corr_len", "feather_px")
    @classmethod
    def validate_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            msg = "Banding parameters must be finite"
            raise ValueError(msg)
        return v

    @model_validator(mode="after")
    def validate_non_inversion(self) -> BandingParams:
        if self.delta_g >= self.gap_g:
            msg = f"delta_g ({self.delta_g}) must be smaller than gap_g ({self.gap_g})"
            raise ValueError(msg)
        if self.delta_w >= self.width_w:
            msg = f"delta_w ({self.delta_w}) must be smaller than width_w ({self.width_w})"
            raise ValueError(msg)
        return self

    @property
    def period(self) -> float:
        return self.width_w + self.gap_g

    @property
    def duty(self) -> float:
        return self.width_w / self.period


class JitterTrace(BaseModel):
    """Realized per-stripe random draws of one banding pattern.

    Entry `i` of every array belongs to stripe `stripe_indices[i]`. The eta rows
    are sampled along the stripe axis starting at `u_origin`, one sample per pixel.
    """

    stripe_indices: np.ndarray
    angle_offsets: np.ndarray
    spacing_offsets: np.ndarray
    width_offsets: np.ndarray
    eta_top: np.ndarray
    eta_bot: np.ndarray
    u_origin: float = 0.0

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def validate_lengths(self) -> JitterTrace:
        n = len(self.stripe_indices)
        per_stripe = (self.angle_offsets, self.spacing_offsets, self.width_offsets, self.eta_top, self.eta_bot)
        if any(len(a) != n for a in per_stripe):
            msg = "All jitter arrays must have one entry per stripe"
            raise ValueError(msg)
        if self.eta_top.ndim != 2 or self.eta_top.shape != self.eta_bot.shape:  # noqa: PLR2004
            msg = "eta_top and eta_bot must be 2D arrays of identical shape"
            raise ValueError(msg)
        return self

    def __len__(self) -> int:
        return len(self.stripe_indices)

    def position(self, k: int) -> int:
        """Row of stripe `k` in the per-stripe arrays."""
        first = int(self.stripe_indices[0]) if len(self) else 0
        i = k - first
        if i < 0 or i >= len(self) or int(self.stripe_indices[i]) != k:
            msg = f"Jitter trace has no entry for stripe {k}"
            raise TraceMismatchError(msg)
        return i

    def check_bounds(self, params: BandingParams) -> None:
        if np.any(np.abs(self.spacing_offsets) > params.delta_g):
            msg = "Spacing offsets exceed delta_g"
            raise InvalidParamsError(msg)
        if np.any(np.abs(self.width_offsets) > params.delta_w):
            msg = "Width offsets exceed delta_w"
            raise InvalidParamsError(msg)

    def digest(self) -> str:
        hasher = hashlib.sha256()
        hasher.update(np.ascontiguousarray(self.stripe_indices, dtype="<i8").tobytes())
        for arr in (self.angle_offsets, self.spacing_offsets, self.width_offsets, self.eta_top, self.eta_bot):
            hasher.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        hasher.update(np.float64(self.u_origin).astype("<f8").tobytes())
        return hasher.hexdigest()
