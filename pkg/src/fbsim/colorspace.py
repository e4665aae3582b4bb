"""Full-range BT.601 RGB <-> YCbCr conversion on floating-point images."""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

K_R = 0.299
K_B = 0.114
K_G = 1 - K_R - K_B


def _check_planes(v: np.ndarray) -> np.ndarray:
    if v.ndim != 3 or v.shape[2] != 3 or v.shape[0] == 0 or v.shape[1] == 0:  # noqa: PLR2004
        msg = f"Expected an H x W x 3 array, got shape {v.shape}"
        raise ValueError(msg)
    return np.asarray(v, dtype=np.float64)


class RgbImage(BaseModel):
    """H x W x 3 RGB image with values in [0, 1]."""

    pixels: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("pixels")
    @classmethod
    def validate_pixels(cls, v: np.ndarray) -> np.ndarray:
        v = _check_planes(v)
        if np.any(v < 0) or np.any(v > 1) or np.any(np.isnan(v)):
            msg = "RGB values must lie in [0, 1]"
            raise ValueError(msg)
        return v

    @classmethod
    def from_unclamped(cls, pixels: np.ndarray) -> RgbImage:
        return cls(pixels=np.clip(pixels, 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def r(self) -> np.ndarray:
        return self.pixels[..., 0]

    @property
    def g(self) -> np.ndarray:
        return self.pixels[..., 1]

    @property
    def b(self) -> np.ndarray:
        return self.pixels[..., 2]


class YccImage(BaseModel):
    """H x W x 3 image holding the Y, Cb and Cr planes.

    Values are not clamped: intermediate luminance may leave [0, 1] mid-pipeline.
    """

    pixels: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("pixels")
    @classmethod
    def validate_pixels(cls, v: np.ndarray) -> np.ndarray:
        return _check_planes(v)

    @classmethod
    def from_planes(cls, y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> YccImage:
        return cls(pixels=np.stack([y, cb, cr], axis=-1))

    @property
    def y(self) -> np.ndarray:
        return self.pixels[..., 0]

    @property
    def cb(self) -> np.ndarray:
        return self.pixels[..., 1]

    @property
    def cr(self) -> np.ndarray:
        return self.pixels[..., 2]


def rgb_to_ycc(img: RgbImage) -> YccImage:
    """Convert RGB to full-range YCbCr.

    `Y = K_R R + K_G G + K_B B`, `Cb = (B - Y) / (2 (1 - K_B))`, `Cr = (R - Y) / (2 (1 - K_R))`.
    """
    y = K_R * img.r + K_G * img.g + K_B * img.b
    cb = (img.b - y) / (2 * (1 - K_B))
    cr = (img.r - y) / (2 * (1 - K_R))
    return YccImage.from_planes(y, cb, cr)


def ycc_to_rgb_unclamped(img: YccImage) -> np.ndarray:
    r = img.y + 2 * (1 - K_R) * img.cr
    b = img.y + 2 * (1 - K_B) * img.cb
    g = (img.y - K_R * r - K_B * b) / K_G
    return np.stack([r, g, b], axis=-1)


def ycc_to_rgb(img: YccImage) -> RgbImage:
    """Invert `rgb_to_ycc` exactly, then clamp to [0, 1]."""
    return RgbImage.from_unclamped(ycc_to_rgb_unclamped(img))


def luminance(img: RgbImage) -> np.ndarray:
    return K_R * img.r + K_G * img.g + K_B * img.b
