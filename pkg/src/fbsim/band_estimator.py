# ruff:noqa:D102,D101,D107 docstrings

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Union

import numpy as np
import polars as pl
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage
from scipy.signal import windows

from fbsim.colorspace import RgbImage, luminance
from fbsim.dataset_manager import DatasetManager, PairRecord
from fbsim.exceptions import ImageReadError, NoBandingDetectedError
from fbsim.image_io import atomic_write_bytes, load_rgb

logger = logging.getLogger(__name__)

MIN_SIZE = 64
DEFAULT_PEAK_THRESHOLD = 6.0
ZOOM_STEPS = 21
PROFILE_BINS = 64
DUTY_LIMIT = 0.01
DEFAULT_MIN_PERIODICITY = 0.5
LINE_REACH_BINS = 6.0
LINE_STEP_BINS = 0.5
LINE_MIN_SAMPLES = 4
PEAK_HALF_WIDTH_BINS = 2.5
LINE_HARMONICS = 4
MAX_REFINED_PEAKS = 3


class EstimatorConfig(BaseModel):
    peak_threshold: float = Field(DEFAULT_PEAK_THRESHOLD, gt=0, description="Minimum peak prominence")
    window: bool = Field(True, description="Apply a Hann window before the transform")
    min_radius_bins: float = Field(2.5, ge=0, description="Frequencies closer to DC than this are ignored")
    max_frequency: float = Field(0.25, gt=0, le=0.25, description="Highest searched frequency (cycles/pixel)")
    min_periodicity: float = Field(
        DEFAULT_MIN_PERIODICITY,
        ge=-1,
        le=1,
        description="Minimum correlation between the profiles folded over each half of the stripes",
    )

    model_config = ConfigDict(extra="forbid")


class BandingEstimate(BaseModel):
    """Banding attributes recovered from one image.

    The stripe width is `duty_hat * period_hat` and the gap the remainder.
    """

    theta_hat: float = Field(..., ge=-math.pi / 2, lt=math.pi / 2, description="Stripe orientation (radians)")
    period_hat: float = Field(..., gt=0, description="Stripe period (pixels)")
    duty_hat: float = Field(..., gt=0, lt=1, description="Fraction of the period covered by the dark stripe")
    confidence: float = Field(..., ge=0, le=1, description="prominence / (prominence + threshold)")
    prominence: float = Field(..., ge=0, description="Peak magnitude over its ring median")

    @property
    def width_hat(self) -> float:
        return self.duty_hat * self.period_hat

    @property
    def gap_hat(self) -> float:
        return self.period_hat - self.width_hat


def _zoom_peak(
    signal: np.ndarray, fy0: float, fx0: float, span_y: float, span_x: float
) -> tuple[float, float, float]:
    """Evaluate the DTFT magnitude on a small grid around `(fy0, fx0)` and return its maximum."""
    rows = np.arange(signal.shape[0])
    cols = np.arange(signal.shape[1])
    fys = fy0 + np.linspace(-span_y, span_y, ZOOM_STEPS)
    fxs = fx0 + np.linspace(-span_x, span_x, ZOOM_STEPS)
    ey = np.exp(-2j * np.pi * np.outer(fys, rows))
    ex = np.exp(-2j * np.pi * np.outer(fxs, cols))
    z = np.abs(ey @ signal @ ex.T)
    i, j = np.unravel_index(np.argmax(z), z.shape)
    return float(fys[i]), float(fxs[j]), float(z[i, j])


def _dtft_magnitude(signal: np.ndarray, fy: float, fx: float) -> float:
    ey = np.exp(-2j * np.pi * fy * np.arange(signal.shape[0]))
    ex = np.exp(-2j * np.pi * fx * np.arange(signal.shape[1]))
    return float(np.abs(ey @ signal @ ex))


def _folded_profile(
    y_plane: np.ndarray, fy: float, fx: float, select: Optional[np.ndarray] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Mean luminance per phase bin of one stripe period, with the pixel count of each bin."""
    rows, cols = np.indices(y_plane.shape)
    phase = np.mod(fy * rows + fx * cols, 1.0)
    idx = np.minimum((phase * PROFILE_BINS).astype(np.int64), PROFILE_BINS - 1)
    values = y_plane
    if select is not None:
        idx, values = idx[select], values[select]
    sums = np.bincount(idx.ravel(), weights=values.ravel(), minlength=PROFILE_BINS)
    counts = np.bincount(idx.ravel(), minlength=PROFILE_BINS)
    profile = np.divide(sums, counts, out=np.zeros(PROFILE_BINS), where=counts > 0)
    return profile, counts


def _dark_fraction(y_plane: np.ndarray, fy: float, fx: float) -> float:
    """Share of one period where the phase-folded profile lies below its mid level."""
    profile, counts = _folded_profile(y_plane, fy, fx)
    profile = profile[counts > 0]
    mid = (profile.min() + profile.max()) / 2
    return float(np.mean(profile < mid))


def _periodicity(y_plane: np.ndarray, fy: float, fx: float) -> float:
    """Correlation between the profiles folded over the first and the second half of the stripes.

    Stripes repeat over the whole frame and fold to the same profile in both
    halves; isolated edges and texture fold to unrelated ones.
    """
    rows, cols = np.indices(y_plane.shape)
    position = fy * rows + fx * cols
    first = position < np.median(position)
    profile_a, counts_a = _folded_profile(y_plane, fy, fx, first)
    profile_b, counts_b = _folded_profile(y_plane, fy, fx, ~first)
    shared = (counts_a > 0) & (counts_b > 0)
    a, b = profile_a[shared], profile_b[shared]
    if a.size < 4 or np.ptp(a) == 0 or np.ptp(b) == 0:  # noqa: PLR2004
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def _line_background(magnitude: np.ndarray, ky: int, kx: int) -> Optional[float]:
    """Median magnitude further out along the direction of the bin offset `(ky, kx)` from DC.

    Samples start past the peak's main lobe and skip the lobes of its harmonics.
    Returns None when fewer than `LINE_MIN_SAMPLES` remain.
    """
    r0 = math.hypot(ky, kx)
    reach = max(LINE_REACH_BINS, r0 / 2)
    radii = np.arange(r0 + PEAK_HALF_WIDTH_BINS + LINE_STEP_BINS, r0 + reach + 1e-9, LINE_STEP_BINS)
    harmonics = r0 * np.arange(2, LINE_HARMONICS + 1)
    radii = radii[np.min(np.abs(radii[:, np.newaxis] - harmonics), axis=1) >= PEAK_HALF_WIDTH_BINS]
    if radii.size < LINE_MIN_SAMPLES:
        return None
    coords = np.vstack(
        [magnitude.shape[0] // 2 + radii * (ky / r0), magnitude.shape[1] // 2 + radii * (kx / r0)]
    )
    return float(np.median(ndimage.map_coordinates(magnitude, coords, order=1, mode="nearest")))


def _fold_angle(fy: float, fx: float) -> float:
    if fy < 0 or (fy == 0 and fx < 0):
        fy, fx = -fy, -fx
    theta = math.atan2(-fx, fy)
    if theta >= math.pi / 2:
        theta -= math.pi
    return theta


def estimate_banding(
    lq: RgbImage,
    peak_threshold: float = DEFAULT_PEAK_THRESHOLD,
    window: bool = True,  # noqa: FBT001, FBT002
    min_periodicity: float = DEFAULT_MIN_PERIODICITY,
) -> BandingEstimate:
    """
    Recover stripe angle, period and duty cycle from a banded image.

    The luminance plane, mean removed and optionally Hann-windowed, is
    transformed to the 2D spectrum. Local maxima in one half-plane, away from DC,
    are scored by their prominence: magnitude over a background that is the larger
    of the median magnitude of their frequency ring and the median magnitude
    further out along their own direction. The second term keeps edges and
    frame borders, which pile energy onto the spectral axes, from passing as
    stripes. Peaks clearing `peak_threshold` are refined with a two-stage zoom
    DFT, strongest first, and the first whose profile repeats across the frame
    (see `min_periodicity`) is taken.

    The orientation and period follow from the refined frequency vector. The
    duty cycle comes from the first-to-second harmonic ratio of a rectangular
    wave, `|a2 / a1| = |cos(pi * duty)|`, with the duty / 1 - duty ambiguity
    settled by which phase of the profile is darker.

    Args:
        lq: Image to analyze, at least 64x64
        peak_threshold: Minimum prominence for a peak to count as banding
        window: Apply a Hann window before the transform
        min_periodicity: Minimum correlation between the profiles folded over the
            first and the second half of the stripes

    Returns:
        BandingEstimate: Orientation in [-pi/2, pi/2), period, duty and confidence

    Raises:
        ValueError: If the image is smaller than 64x64
        NoBandingDetectedError: If no peak clears the threshold and the periodicity check

    Example:
        ```python
        est = estimate_banding(load_rgb("frame.png"))
        est.theta_hat, est.period_hat, est.duty_hat
        ```
    """
    config = EstimatorConfig(peak_threshold=peak_threshold, window=window, min_periodicity=min_periodicity)
    if lq.height < MIN_SIZE or lq.width < MIN_SIZE:
        msg = f"Image must be at least {MIN_SIZE}x{MIN_SIZE}, got {lq.width}x{lq.height}"
        raise ValueError(msg)

    y_plane = luminance(lq)
    centered = y_plane - y_plane.mean()
    if not np.any(np.abs(centered) > 1e-12):  # noqa: PLR2004
        msg = "Image is constant; no banding present"
        raise NoBandingDetectedError(msg)

    height, width = y_plane.shape
    if config.window:
        centered = centered * np.outer(windows.hann(height, sym=False), windows.hann(width, sym=False))

    magnitude = np.abs(np.fft.fftshift(np.fft.fft2(centered)))
    fy = np.fft.fftshift(np.fft.fftfreq(height))[:, np.newaxis]
    fx = np.fft.fftshift(np.fft.fftfreq(width))[np.newaxis, :]
    radius_bins = np.hypot(fy * height, fx * width)
    frequency = np.hypot(fy, fx)

    rings = np.rint(frequency * max(height, width)).astype(np.int64)
    ring_ids = np.arange(rings.max() + 1)
    ring_median = np.asarray(ndimage.median(magnitude, labels=rings, index=ring_ids))

    half_plane = (fy > 0) | ((fy == 0) & (fx > 0))
    searched = half_plane & (radius_bins >= config.min_radius_bins) & (frequency <= config.max_frequency)
    local_max = ndimage.maximum_filter(magnitude, size=3, mode="nearest") == magnitude
    candidates = np.argwhere(searched & local_max)

    background = ring_median[rings[candidates[:, 0], candidates[:, 1]]]
    peaks = magnitude[candidates[:, 0], candidates[:, 1]]
    # floor keeps noise-free synthetic spectra finite
    background = np.fmax(background, 1e-12 * magnitude.max())
    prominence = peaks / background

    for i in np.flatnonzero(prominence >= config.peak_threshold):
        row, col = candidates[i]
        line = _line_background(magnitude, int(row) - height // 2, int(col) - width // 2)
        if line is not None:
            prominence[i] = peaks[i] / max(background[i], line)

    best = float(prominence.max()) if prominence.size else 0.0
    accepted = np.flatnonzero(prominence >= config.peak_threshold)
    if accepted.size == 0:
        msg = f"No spectral peak reached prominence {config.peak_threshold} (best {best:.2f})"
        raise NoBandingDetectedError(msg, prominence=best)

    for pick in accepted[np.argsort(-peaks[accepted], kind="stable")][:MAX_REFINED_PEAKS]:
        row, col = candidates[pick]
        fy1, fx1, _ = _zoom_peak(centered, float(fy[row, 0]), float(fx[0, col]), 1.0 / height, 1.0 / width)
        fy2, fx2, a1 = _zoom_peak(centered, fy1, fx1, 0.1 / height, 0.1 / width)
        if a1 <= 0 or math.hypot(fy2, fx2) == 0:
            continue
        periodicity = _periodicity(y_plane, fy2, fx2)
        if periodicity >= config.min_periodicity:
            return _describe_peak(centered, y_plane, fy2, fx2, a1, float(prominence[pick]), config)
        logger.debug("Peak at (fy=%.5f, fx=%.5f) rejected: periodicity %.2f", fy2, fx2, periodicity)

    msg = f"No spectral peak with prominence {config.peak_threshold} repeats across the frame (best {best:.2f})"
    raise NoBandingDetectedError(msg, prominence=best)


def _describe_peak(
    centered: np.ndarray,
    y_plane: np.ndarray,
    fy: float,
    fx: float,
    a1: float,
    prominence: float,
    config: EstimatorConfig,
) -> BandingEstimate:
    a2 = _dtft_magnitude(centered, 2 * fy, 2 * fx)
    duty = math.acos(min(a2 / a1, 1.0)) / math.pi
    if _dark_fraction(y_plane, fy, fx) > 0.5:  # noqa: PLR2004
        duty = 1.0 - duty
    duty = min(max(duty, DUTY_LIMIT), 1.0 - DUTY_LIMIT)

    logger.debug("Peak at (fy=%.5f, fx=%.5f), prominence %.1f, harmonic ratio %.3f", fy, fx, prominence, a2 / a1)
    return BandingEstimate(
        theta_hat=_fold_angle(fy, fx),
        period_hat=1.0 / math.hypot(fy, fx),
        duty_hat=duty,
        confidence=prominence / (prominence + config.peak_threshold),
        prominence=prominence,
    )


def angle_error(theta_hat: float, theta: float) -> float:
    """Absolute orientation difference modulo pi, in radians."""
    return abs((theta_hat - theta + math.pi / 2) % math.pi - math.pi / 2)


QA_SCHEMA = {
    "id": pl.Utf8,
    "detected": pl.Boolean,
    "theta": pl.Float64,
    "theta_hat": pl.Float64,
    "period": pl.Float64,
    "period_hat": pl.Float64,
    "duty": pl.Float64,
    "duty_hat": pl.Float64,
    "confidence": pl.Float64,
    "theta_err_deg": pl.Float64,
    "period_rel_err": pl.Float64,
    "duty_err": pl.Float64,
}
ERROR_COLUMNS = ["theta_err_deg", "period_rel_err", "duty_err"]


class QaReport(BaseModel):
    """Per-record estimates joined against ground truth, plus error statistics."""

    table: pl.DataFrame
    summary: dict[str, Optional[float]]
    failed: list[str] = Field(default_factory=list)

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def detection_rate(self) -> float:
        return float(self.summary["detection_rate"] or 0.0)

    def write_csv(self, path: Union[str, os.PathLike]) -> None:
        atomic_write_bytes(path, self.table.write_csv().encode("utf-8"))


def _qa_row(
    manager: DatasetManager, record: PairRecord, config: EstimatorConfig, use_hq: bool  # noqa: FBT001
) -> Optional[dict]:
    path = manager.resolve(record.hq_path if use_hq else record.lq_path)
    params = record.params
    row = dict.fromkeys(QA_SCHEMA)
    row.update(id=record.id, detected=False, theta=params.theta, period=params.period, duty=params.duty)
    try:
        est = estimate_banding(
            load_rgb(path),
            peak_threshold=config.peak_threshold,
            window=config.window,
            min_periodicity=config.min_periodicity,
        )
    except NoBandingDetectedError:
        return row
    except (ImageReadError, ValueError) as e:
        logger.warning("QA failed for %s: %s", record.id, e)
        return None

    row.update(
        detected=True,
        theta_hat=est.theta_hat,
        period_hat=est.period_hat,
        duty_hat=est.duty_hat,
        confidence=est.confidence,
        theta_err_deg=math.degrees(angle_error(est.theta_hat, params.theta)),
        period_rel_err=abs(est.period_hat - params.period) / params.period,
        duty_err=abs(est.duty_hat - params.duty),
    )
    return row


def qa_manifest(
    manager: DatasetManager,
    records: Optional[list[PairRecord]] = None,
    use_hq: bool = False,  # noqa: FBT001, FBT002
    peak_threshold: float = DEFAULT_PEAK_THRESHOLD,
    window: bool = True,  # noqa: FBT001, FBT002
    workers: int = 1,
    min_periodicity: float = DEFAULT_MIN_PERIODICITY,
) -> QaReport:
    """
    Estimate banding on every record and compare with its sidecar parameters.

    Args:
        manager: DatasetManager owning the record files
        records: Records to audit (defaults to the manager's manifest)
        use_hq: Analyze the clean HQ images instead, as a false-positive audit
        peak_threshold: Minimum peak prominence
        window: Apply a Hann window before the transform
        workers: Number of worker threads
        min_periodicity: Minimum correlation between the profiles folded over the
            first and the second half of the stripes

    Returns:
        QaReport: Table sorted by id; summary with the detection rate and the
            median and 95th percentile of each error column

    Raises:
        ValueError: If there are no records
    """
    config = EstimatorConfig(peak_threshold=peak_threshold, window=window, min_periodicity=min_periodicity)
    records = records if records is not None else manager.load_manifest()
    if not records:
        msg = "Manifest is empty"
        raise ValueError(msg)

    with ThreadPoolExecutor(max_workers=workers) as executor:
        rows = list(executor.map(lambda r: _qa_row(manager, r, config, use_hq), records))

    failed = sorted(r.id for r, row in zip(records, rows) if row is None)
    table = pl.DataFrame([row for row in rows if row is not None], schema=QA_SCHEMA).sort("id")

    summary: dict[str, Optional[float]] = {
        "n_records": float(table.height),
        "detection_rate": float(table["detected"].mean()) if table.height else 0.0,
    }
    stats = table.filter(pl.col("detected")).select(
        [pl.col(c).median().alias(f"{c}_median") for c in ERROR_COLUMNS]
        + [pl.col(c).quantile(0.95, interpolation="linear").alias(f"{c}_p95") for c in ERROR_COLUMNS]
    )
    summary.update(stats.row(0, named=True))

    logger.info(
        "QA over %d records: detection rate %.2f (%d failed)", table.height, summary["detection_rate"], len(failed)
    )
    return QaReport(table=table, summary=summary, failed=failed)
