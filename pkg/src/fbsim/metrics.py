# ruff:noqa:D102,D101,D107 docstrings

from __future__ import annotations

from typing import TYPE_CHECKING, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from fbsim.colorspace import RgbImage
from fbsim.mask import FlickerMask

if TYPE_CHECKING:
    from fbsim.distance_providers import DistanceProvider

ImageLike = Union[RgbImage, np.ndarray]
MaskLike = Union[FlickerMask, np.ndarray]

PSNR_CAP_DB = 100.0
PROXY_DOWNSAMPLE = 4
SSIM_SIGMA = 1.5
DATA_RANGE = 1.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MaskedLossWeights(BaseModel):
    """Weights of the masked loss family.

    `lambda_banding` weights the banded region against the background in both the
    pixel and the perceptual term. `lambda_pixel` and `lambda_perceptual` weight
    the two terms of the merged loss.
    """

    lambda_banding: float = Field(0.8, ge=0, le=1, description="Weight of the banded region")
    lambda_pixel: float = Field(1.0, ge=0, description="Weight of the masked pixel term")
    lambda_perceptual: float = Field(2.0, ge=0, description="Weight of the masked perceptual term")
    epsilon: float = Field(1e-8, gt=0, description="Stabilizer of the masked mean denominator")

    model_config = ConfigDict(extra="forbid")


def as_batch(img: ImageLike) -> np.ndarray:
    """Bring an image into B x C x H x W float layout.

    RgbImage and H x W x C arrays are treated as a single image, H x W arrays as
    a single-channel image, and 4D arrays are taken as already batched.
    """
    if isinstance(img, RgbImage):
        return img.pixels.transpose(2, 0, 1)[np.newaxis]
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:  # noqa: PLR2004
        return arr[np.newaxis, np.newaxis]
    if arr.ndim == 3:  # noqa: PLR2004
        return arr.transpose(2, 0, 1)[np.newaxis]
    if arr.ndim == 4:  # noqa: PLR2004
        return arr
    msg = f"Cannot interpret an array of shape {arr.shape} as an image"
    raise ValueError(msg)


def as_mask_batch(mask: MaskLike) -> np.ndarray:
    """Bring a mask into B x 1 x H x W layout and check its range."""
    values = mask.values if isinstance(mask, FlickerMask) else np.asarray(mask, dtype=np.float64)
    if values.ndim == 2:  # noqa: PLR2004
        values = values[np.newaxis, np.newaxis]
    if values.ndim != 4 or values.shape[1] != 1:  # noqa: PLR2004
        msg = f"Mask must be H x W or B x 1 x H x W, got shape {values.shape}"
        raise ValueError(msg)
    if np.any(values < 0) or np.any(values > 1):
        msg = "Mask values must lie in [0, 1]"
        raise ValueError(msg)
    return values


def _check_same_shape(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        msg = f"Prediction {pred.shape} and ground truth {gt.shape} differ in shape"
        raise ValueError(msg)


def masked_mean(field: np.ndarray, mask: np.ndarray, epsilon: float = 1e-8) -> float:
    """Weighted mean of `field` under a soft mask.

    `sum(field * M) / (sum(M) + epsilon)`, with the mask broadcast over the
    channel axis of the field before both sums.

    Args:
        field: B x C x H x W values
        mask: B x 1 x H x W weights in [0, 1]
        epsilon: Positive stabilizer of the denominator

    Returns:
        float: The masked mean; 0 for an all-zero mask

    Raises:
        ValueError: If the mask cannot be broadcast to the field
    """
    field = np.asarray(field, dtype=np.float64)
    try:
        weights = np.broadcast_to(np.asarray(mask, dtype=np.float64), field.shape)
    except ValueError as e:
        msg = f"Mask of shape {np.shape(mask)} does not broadcast to field of shape {field.shape}"
        raise ValueError(msg) from e
    return float((field * weights).sum() / (weights.sum() + epsilon))


def masked_pixel_terms(
    pred: ImageLike, gt: ImageLike, mask: MaskLike, epsilon: float = 1e-8
) -> tuple[float, float]:
    """Masked squared error inside the band and in the background, unweighted."""
    pred_b, gt_b = as_batch(pred), as_batch(gt)
    _check_same_shape(pred_b, gt_b)
    m = as_mask_batch(mask)
    err = (pred_b - gt_b) ** 2
    return masked_mean(err, m, epsilon), masked_mean(err, 1 - m, epsilon)


def masked_pixel_loss(
    pred: ImageLike, gt: ImageLike, mask: MaskLike, weights: Optional[MaskedLossWeights] = None
) -> float:
    """Region-weighted MSE: `lambda_b * MM(err, M) + (1 - lambda_b) * MM(err, 1 - M)`."""
    w = weights or MaskedLossWeights()
    band, background = masked_pixel_terms(pred, gt, mask, w.epsilon)
    return w.lambda_banding * band + (1 - w.lambda_banding) * background


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    edges = np.arange(n_out + 1) * (n_in / n_out)
    src = np.arange(n_in)
    lo = np.maximum(edges[:-1, np.newaxis], src[np.newaxis, :])
    hi = np.minimum(edges[1:, np.newaxis], src[np.newaxis, :] + 1)
    return np.clip(hi - lo, 0.0, None) * (n_out / n_in)


def area_downsample(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample the last two axes to `out_h` x `out_w` by exact area averaging.

    Each output cell is the mean of the input it covers, with partially covered
    pixels weighted by the overlap. Means are preserved and [0, 1] stays [0, 1].
    """
    if out_h < 1 or out_w < 1:
        msg = f"Output size must be positive, got {out_h}x{out_w}"
        raise ValueError(msg)
    values = np.asarray(values, dtype=np.float64)
    in_h, in_w = values.shape[-2:]
    if (in_h, in_w) == (out_h, out_w):
        return values
    rows = _area_weights(in_h, out_h)
    cols = _area_weights(in_w, out_w)
    return np.einsum("ih,...hw,jw->...ij", rows, values, cols)


def masked_perceptual_loss(
    dist_map: np.ndarray, mask: MaskLike, weights: Optional[MaskedLossWeights] = None
) -> float:
    """Region-weighted mean of a per-pixel perceptual distance map.

    The mask is area-averaged down to the resolution of `dist_map` before
    `lambda_b * MM(D, M) + (1 - lambda_b) * MM(D, 1 - M)` is taken.

    Raises:
        ValueError: If the map holds negative distances or is not B x 1 x h x w
    """
    w = weights or MaskedLossWeights()
    dist = np.asarray(dist_map, dtype=np.float64)
    if dist.ndim == 2:  # noqa: PLR2004
        dist = dist[np.newaxis, np.newaxis]
    if dist.ndim != 4 or dist.shape[1] != 1:  # noqa: PLR2004
        msg = f"Distance map must be B x 1 x h x w, got shape {dist.shape}"
        raise ValueError(msg)
    if np.any(dist < 0):
        msg = "Distance map contains negative values"
        raise ValueError(msg)

    m = area_downsample(as_mask_batch(mask), *dist.shape[-2:])
    band = masked_mean(dist, m, w.epsilon)
    background = masked_mean(dist, 1 - m, w.epsilon)
    return w.lambda_banding * band + (1 - w.lambda_banding) * background


def gradient_magnitude(batch: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude averaged over channels, B x 1 x H x W."""
    n_batch, n_chan, height, width = batch.shape
    # sobel smooths along every non-derivative axis, so filter plane by plane
    planes = batch.reshape(-1, height, width)
    mags = np.stack(
        [
            np.hypot(ndimage.sobel(p, axis=0, mode="reflect"), ndimage.sobel(p, axis=1, mode="reflect"))
            for p in planes
        ]
    )
    return (mags / 8).reshape(n_batch, n_chan, height, width).mean(axis=1, keepdims=True)


def perceptual_proxy(pred: ImageLike, gt: ImageLike) -> np.ndarray:
    """Gradient-structure distance map standing in for a learned perceptual metric.

    The squared difference of the two gradient-magnitude maps, area-averaged by a
    factor of 4 in each direction. A global brightness offset leaves the map at
    zero; moved or removed edges do not.

    Returns:
        np.ndarray: B x 1 x ceil(H/4) x ceil(W/4) non-negative distances
    """
    pred_b, gt_b = as_batch(pred), as_batch(gt)
    _check_same_shape(pred_b, gt_b)
    diff = (gradient_magnitude(pred_b) - gradient_magnitude(gt_b)) ** 2
    height, width = diff.shape[-2:]
    return area_downsample(diff, -(-height // PROXY_DOWNSAMPLE), -(-width // PROXY_DOWNSAMPLE))


def merged_loss(
    pred: ImageLike,
    gt: ImageLike,
    mask: MaskLike,
    dist_provider: DistanceProvider,
    weights: Optional[MaskedLossWeights] = None,
    pair_id: Optional[str] = None,
) -> float:
    """`lambda_pixel * masked pixel loss + lambda_perceptual * masked perceptual loss`.

    Args:
        pred: Restored image
        gt: Ground-truth image
        mask: Banding mask at the image resolution
        dist_provider: Source of the perceptual distance map
        weights: Loss weights (defaults to MaskedLossWeights())
        pair_id: Key passed to providers that look maps up per pair

    Example:
        ```python
        loss = merged_loss(pred, gt, mask, GradientDistanceProvider())
        ```
    """
    w = weights or MaskedLossWeights()
    pixel = masked_pixel_loss(pred, gt, mask, w)
    if w.lambda_perceptual == 0:
        return w.lambda_pixel * pixel
    perceptual = masked_perceptual_loss(dist_provider.distance_map(pred, gt, pair_id=pair_id), mask, w)
    return w.lambda_pixel * pixel + w.lambda_perceptual * perceptual


def psnr(pred: ImageLike, gt: ImageLike) -> float:
    """Peak signal-to-noise ratio in dB for a peak value of 1.0.

    Identical images have no finite PSNR; they report `PSNR_CAP_DB`, and every
    other value is capped there as well.
    """
    pred_b, gt_b = as_batch(pred), as_batch(gt)
    _check_same_shape(pred_b, gt_b)
    if np.array_equal(pred_b, gt_b):
        return PSNR_CAP_DB
    value = peak_signal_noise_ratio(gt_b, pred_b, data_range=DATA_RANGE)
    return min(PSNR_CAP_DB, float(value))


def ssim(pred: ImageLike, gt: ImageLike) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5), averaged over channels and batch.

    Uses the population covariance, matching the reference Gaussian-window SSIM.
    Each side of the image must be at least 11 pixels.
    """
    x, y = as_batch(pred), as_batch(gt)
    _check_same_shape(x, y)
    scores = [
        structural_similarity(
            y_i,
            x_i,
            data_range=DATA_RANGE,
            channel_axis=0,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=SSIM_K1,
            K2=SSIM_K2,
        )
        for x_i, y_i in zip(x, y)
    ]
    return float(np.clip(np.mean(scores), -1.0, 1.0))
