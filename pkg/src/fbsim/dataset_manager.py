# ruff:noqa:D102,D101,D107 docstrings
# ruff:noqa:C901 complexity

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, DirectoryPath, Field, ValidationError, field_validator

from fbsim.colorspace import RgbImage
from fbsim.degradation import synthesize_lq
from fbsim.exceptions import ImageReadError, InvalidParamsError
from fbsim.image_io import (
    atomic_write_text,
    load_gray,
    load_rgb,
    load_rgb_u8,
    quantize,
    save_mask_png,
    save_rgb,
)
from fbsim.params import U64_MAX, BandingParams

logger = logging.getLogger(__name__)

Interval = tuple[float, float]
PatchMode = Literal["center", "random"]

MAX_SAMPLE_ATTEMPTS = 100


class ParamRanges(BaseModel):
    """Sampling intervals for every BandingParams scalar.

    The defaults are not taken from any published training recipe; they span thin
    dense bands through wide dark bars. `delta_g_frac` and `delta_w_frac` are
    fractions of the sampled nominal gap and width.
    """

    theta: Interval = Field((-0.26, 0.26), description="Stripe angle around horizontal (radians)")
    width_w: Interval = Field((6.0, 60.0), description="Nominal stripe width (pixels)")
    gap_g: Interval = Field((10.0, 120.0), description="Nominal gap (pixels)")
    v_y: Interval = Field((0.2, 0.9), description="Luminance darkening factor")
    sigma_theta: Interval = Field((0.0, 0.02), description="Angle jitter std (radians)")
    delta_g_frac: Interval = Field((0.0, 0.2), description="Spacing jitter as a fraction of gap_g")
    delta_w_frac: Interval = Field((0.0, 0.2), description="Width jitter as a fraction of width_w")
    delta_edge: Interval = Field((0.0, 3.0), description="Edge meander amplitude (pixels)")
    edge_corr_len: Interval = Field((16.0, 64.0), description="Edge process correlation length (pixels)")
    feather_px: Interval = Field((1.0, 4.0), description="Feather half-width (pixels)")
    noise_alpha: Interval = Field((0.0, 0.02), description="Signal-dependent noise strength")
    noise_sigma_r: Interval = Field((0.0, 0.03), description="Signal-independent noise std")
    enable_angle_jitter: bool = True
    enable_spacing_jitter: bool = True
    enable_width_jitter: bool = True
    enable_edge_jitter: bool = True
    enable_noise: bool = True
    master_seed: int = Field(0, ge=0, le=U64_MAX, description="Seed every record seed derives from")

    model_config = ConfigDict(extra="forbid")

    @field_validator(
        "theta",
        "width_w",
        "gap_g",
        "v_y",
        "sigma_theta",
        "delta_g_frac",
        "delta_w_frac",
        "delta_edge",
        "edge_corr_len",
        "feather_px",
        "noise_alpha",
        "noise_sigma_r",
    )
    @classmethod
    def validate_interval(cls, v: Interval) -> Interval:
        lo, hi = v
        if lo > hi:
            msg = f"Interval lower bound {lo} exceeds upper bound {hi}"
            raise ValueError(msg)
        return v


class SynthesisConfig(BaseModel):
    ranges: ParamRanges
    per_source: int = Field(1, ge=1, description="Records synthesized per source image")
    patch: Optional[PatchMode] = Field(None, description="Crop mode for fixed-size patches")
    patch_size: int = Field(512, ge=1, description="Patch edge length in pixels")

    model_config = ConfigDict(extra="forbid")


class PairRecord(BaseModel):
    id: str
    hq_path: str
    lq_path: str
    mask_path: str
    params_path: str
    params: BandingParams
    trace_digest: str
    source_dataset: str
    source_file: str
    height: int
    width: int

    model_config = ConfigDict(extra="forbid")


class ParamsSidecar(BaseModel):
    id: str
    params: BandingParams
    trace_digest: str
    mask_coverage: float
    n_stripes: int


class VerificationReport(BaseModel):
    id: str
    passed: bool
    checks: dict[str, bool] = Field(default_factory=dict)
    detail: Optional[str] = None
    first_mismatch: Optional[tuple[int, ...]] = None


class SynthesizeDatasetParams(BaseModel):
    src_dir: DirectoryPath
    per_source: int = Field(1, ge=1)
    patch: Optional[PatchMode] = None
    patch_size: int = Field(512, ge=1)


def record_key(record_id: str) -> int:
    return int.from_bytes(hashlib.sha256(record_id.encode("utf-8")).digest()[:8], "little")


def record_rng(master_seed: int, record_id: str) -> np.random.Generator:
    """Generator for one record, keyed on (master seed, record id) rather than on list position."""
    return np.random.default_rng([master_seed, record_key(record_id)])


def sample_params(ranges: ParamRanges, rng: np.random.Generator) -> BandingParams:
    """Draw one BandingParams uniformly from the configured intervals.

    The phase is drawn uniformly from `[0, P)` using the sampled period, and the
    realization seed is a fresh 64-bit draw. Draws that violate the BandingParams
    invariants are discarded and redrawn.

    Raises:
        InvalidParamsError: If no valid draw is found within 100 attempts
    """
    for _ in range(MAX_SAMPLE_ATTEMPTS):
        theta = rng.uniform(*ranges.theta)
        width_w = rng.uniform(*ranges.width_w)
        gap_g = rng.uniform(*ranges.gap_g)
        v_y = rng.uniform(*ranges.v_y)
        sigma_theta = rng.uniform(*ranges.sigma_theta)
        delta_g = rng.uniform(*ranges.delta_g_frac) * gap_g
        delta_w = rng.uniform(*ranges.delta_w_frac) * width_w
        delta_edge = rng.uniform(*ranges.delta_edge)
        edge_corr_len = rng.uniform(*ranges.edge_corr_len)
        feather_px = rng.uniform(*ranges.feather_px)
        noise_alpha = rng.uniform(*ranges.noise_alpha)
        noise_sigma_r = rng.uniform(*ranges.noise_sigma_r)
        phase_phi = rng.uniform(0.0, width_w + gap_g)
        seed = int(rng.integers(0, U64_MAX, dtype=np.uint64, endpoint=True))

        try:
            return BandingParams(
                theta=theta,
                width_w=width_w,
                gap_g=gap_g,
                phase_phi=phase_phi,
                sigma_theta=sigma_theta if ranges.enable_angle_jitter else 0.0,
                delta_g=delta_g if ranges.enable_spacing_jitter else 0.0,
                delta_w=delta_w if ranges.enable_width_jitter else 0.0,
                delta_edge=delta_edge if ranges.enable_edge_jitter else 0.0,
                edge_corr_len=edge_corr_len,
                feather_px=feather_px,
                v_y=v_y,
                noise_alpha=noise_alpha if ranges.enable_noise else 0.0,
                noise_sigma_r=noise_sigma_r if ranges.enable_noise else 0.0,
                seed=seed,
            )
        except ValidationError as e:
            logger.debug("Discarding infeasible parameter draw: %s", e.errors()[0]["msg"])

    msg = f"Parameter ranges are infeasible: no valid draw in {MAX_SAMPLE_ATTEMPTS} attempts"
    raise InvalidParamsError(msg)


def crop_patch(
    pixels: np.ndarray, size: int, mode: PatchMode, rng: np.random.Generator
) -> Optional[np.ndarray]:
    height, width = pixels.shape[:2]
    if height < size or width < size:
        return None
    if mode == "center":
        top, left = (height - size) // 2, (width - size) // 2
    else:
        top = int(rng.integers(0, height - size, endpoint=True))
        left = int(rng.integers(0, width - size, endpoint=True))
    return pixels[top : top + size, left : left + size]


def _first_mismatch(expected: np.ndarray, actual: np.ndarray) -> tuple[int, ...]:
    return tuple(int(i) for i in np.argwhere(expected != actual)[0])


class DatasetManager:
    """
    Synthesizes and verifies paired LQ/HQ flicker-banding datasets.

    All outputs live in a fixed layout below `out_dir`:

    - {out_dir}/hq/ID.png - clean source patch (8-bit)
    - {out_dir}/lq/ID.png - banded image (8-bit)
    - {out_dir}/mask/ID.png - banding mask, `round(255 * m)`
    - {out_dir}/params/ID.json - parameter sidecar with the trace digest
    - {out_dir}/manifest.jsonl - one PairRecord per line, sorted by id
    - {out_dir}/config.json - snapshot of the synthesis configuration

    Paths inside records are relative to `out_dir`, so identical inputs give
    byte-identical trees wherever they are written.
    """

    class Config(BaseModel):
        out_dir: Path
        workers: int = Field(1, ge=1)

    def __init__(self, out_dir: Union[str, os.PathLike], ranges: Optional[ParamRanges] = None, workers: int = 1):
        """
        Initialize a DatasetManager rooted at `out_dir`.

        Args:
            out_dir: Directory holding the dataset tree; created if missing
            ranges: Parameter sampling ranges (defaults to ParamRanges())
            workers: Number of worker threads for synthesis and verification

        !!! note
            The worker count never changes output bytes; records are synthesized
            independently and written in id order.
        """
        config = self.Config(out_dir=Path(out_dir), workers=workers)
        self.out_dir = config.out_dir
        self.workers = config.workers
        self.ranges = ranges or ParamRanges()
        self.manifest_path = self.out_dir / "manifest.jsonl"
        self.config_path = self.out_dir / "config.json"

    def _relative(self, kind: str, record_id: str, suffix: str) -> str:
        return f"{kind}/{record_id}{suffix}"

    def resolve(self, relative_path: str) -> Path:
        return self.out_dir / relative_path

    def _list_sources(self, src_dir: Path) -> list[Path]:
        return sorted(p for p in src_dir.iterdir() if p.is_file() and not p.name.startswith("."))

    def _synthesize_record(self, task: tuple[Path, str, str], config: SynthesisConfig) -> Optional[PairRecord]:
        source, record_id, dataset_tag = task
        try:
            pixels = load_rgb_u8(source)
        except ImageReadError as e:
            logger.warning("Skipping %s: %s", source.name, e)
            return None

        rng = record_rng(self.ranges.master_seed, record_id)
        params = sample_params(self.ranges, rng)

        if config.patch is not None:
            cropped = crop_patch(pixels, config.patch_size, config.patch, rng)
            if cropped is None:
                logger.warning(
                    "Skipping %s: smaller than the %d px patch size", source.name, config.patch_size
                )
                return None
            pixels = cropped

        hq = RgbImage(pixels=pixels.astype(np.float64) / 255)
        out = synthesize_lq(hq, params)
        record = PairRecord(
            id=record_id,
            hq_path=self._relative("hq", record_id, ".png"),
            lq_path=self._relative("lq", record_id, ".png"),
            mask_path=self._relative("mask", record_id, ".png"),
            params_path=self._relative("params", record_id, ".json"),
            params=params,
            trace_digest=out.trace.digest(),
            source_dataset=dataset_tag,
            source_file=source.name,
            height=hq.height,
            width=hq.width,
        )
        sidecar = ParamsSidecar(
            id=record_id,
            params=params,
            trace_digest=record.trace_digest,
            mask_coverage=float(out.mask.values.mean()),
            n_stripes=len(out.trace),
        )

        try:
            save_rgb(hq, self.resolve(record.hq_path))
            save_rgb(out.lq, self.resolve(record.lq_path))
            save_mask_png(out.mask, self.resolve(record.mask_path))
            atomic_write_text(self.resolve(record.params_path), sidecar.model_dump_json(indent=2))
        except OSError as e:
            logger.error("Failed to write record %s: %s", record_id, e)  # noqa: TRY400
            return None
        return record

    def synthesize_dataset(
        self,
        src_dir: Union[str, os.PathLike],
        per_source: int = 1,
        patch: Optional[PatchMode] = None,
        patch_size: int = 512,
    ) -> list[PairRecord]:
        """
        Synthesize paired records for every decodable image in `src_dir`.

        Each source image yields `per_source` records with ids `{stem}_{r:03d}`.
        Every record draws its parameters from a generator keyed on the master seed
        and its id, so adding or removing sources never reshuffles the others.

        Args:
            src_dir: Directory of clean source images (not searched recursively)
            per_source: Number of records per source image
            patch: Optional crop mode, "center" or "random"
            patch_size: Patch edge length when `patch` is set

        Returns:
            List[PairRecord]: The written records, sorted by id

        Raises:
            ValueError: If the corpus is empty or no image could be synthesized

        !!! note
            Undecodable files and images smaller than the patch size are logged and
            skipped; the batch continues.

        Example:
            ```python
            manager = DatasetManager("out", ranges=ParamRanges(master_seed=7))
            records = manager.synthesize_dataset("clean_images/", patch="center")
            ```
        """
        params = SynthesizeDatasetParams(
            src_dir=src_dir, per_source=per_source, patch=patch, patch_size=patch_size
        )
        config = SynthesisConfig(
            ranges=self.ranges, per_source=params.per_source, patch=params.patch, patch_size=params.patch_size
        )

        sources = self._list_sources(params.src_dir)
        if not sources:
            msg = f"Source directory {params.src_dir} contains no files"
            raise ValueError(msg)

        stems = [p.stem for p in sources]
        if len(set(stems)) != len(stems):
            msg = "Source file names must have unique stems"
            raise ValueError(msg)

        dataset_tag = params.src_dir.name
        tasks = [
            (source, f"{source.stem}_{r:03d}", dataset_tag) for source in sources for r in range(params.per_source)
        ]

        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            results = list(executor.map(lambda task: self._synthesize_record(task, config), tasks))

        records = sorted((r for r in results if r is not None), key=lambda r: r.id)
        if not records:
            msg = f"No decodable images in {params.src_dir}"
            raise ValueError(msg)

        skipped = len(tasks) - len(records)
        logger.info("Synthesized %d records (%d skipped) into %s", len(records), skipped, self.out_dir)

        atomic_write_text(self.manifest_path, "".join(r.model_dump_json() + "\n" for r in records))
        atomic_write_text(self.config_path, config.model_dump_json(indent=2))
        return records

    def load_manifest(self, manifest_path: Optional[Union[str, os.PathLike]] = None) -> list[PairRecord]:
        path = Path(manifest_path) if manifest_path else self.manifest_path
        with open(path, encoding="utf-8") as f:  # noqa: PTH123
            return [PairRecord.model_validate_json(line) for line in f if line.strip()]

    def verify_pair(self, record: PairRecord) -> VerificationReport:
        """
        Re-synthesize a record from its HQ image and parameters and compare.

        Checks run in order and stop at the first failure: files present and
        readable (images and the params sidecar), shared dimensions, sidecar and
        trace digest agreement with the record, LQ bytes after 8-bit quantization,
        mask bytes, and the hard-mask invariant when `feather_px` is 0.

        Args:
            record: The manifest record to verify

        Returns:
            VerificationReport: pass/fail with the failing check, a message and the
                first differing pixel as `(row, col[, channel])` when relevant
        """
        checks: dict[str, bool] = {}

        def fail(check: str, detail: str, first: Optional[tuple[int, ...]] = None) -> VerificationReport:
            checks[check] = False
            return VerificationReport(
                id=record.id, passed=False, checks=checks, detail=detail, first_mismatch=first
            )

        paths = [self.resolve(p) for p in (record.hq_path, record.lq_path, record.mask_path, record.params_path)]
        missing = [str(p) for p in paths if not p.is_file()]
        if missing:
            return fail("files", f"Missing files: {', '.join(missing)}")

        try:
            hq_u8 = load_rgb_u8(paths[0])
            lq_u8 = load_rgb_u8(paths[1])
            mask_u8 = quantize(load_gray(paths[2]))
            sidecar = ParamsSidecar.model_validate_json(paths[3].read_text(encoding="utf-8"))
        except (ImageReadError, ValidationError, OSError) as e:
            return fail("files", str(e))
        checks["files"] = True

        if not (hq_u8.shape == lq_u8.shape and hq_u8.shape[:2] == mask_u8.shape):
            return fail("dimensions", f"Shapes differ: hq {hq_u8.shape}, lq {lq_u8.shape}, mask {mask_u8.shape}")
        checks["dimensions"] = True

        if sidecar.params != record.params or sidecar.trace_digest != record.trace_digest:
            detail = f"Sidecar {record.params_path} disagrees with the record params or trace_digest"
            return fail("trace_digest", detail)

        out = synthesize_lq(RgbImage(pixels=hq_u8.astype(np.float64) / 255), record.params)

        digest = out.trace.digest()
        if digest != record.trace_digest:
            return fail("trace_digest", f"trace_digest mismatch: expected {record.trace_digest}, got {digest}")
        checks["trace_digest"] = True

        expected_lq = quantize(out.lq.pixels)
        if not np.array_equal(expected_lq, lq_u8):
            first = _first_mismatch(expected_lq, lq_u8)
            return fail("lq", f"LQ differs from re-synthesis at pixel {first}", first)
        checks["lq"] = True

        expected_mask = quantize(out.mask.values)
        if not np.array_equal(expected_mask, mask_u8):
            first = _first_mismatch(expected_mask, mask_u8)
            return fail("mask", f"Mask differs from re-synthesis at pixel {first}", first)
        checks["mask"] = True

        if record.params.feather_px == 0 and not np.all((mask_u8 == 0) | (mask_u8 == 255)):  # noqa: PLR2004
            return fail("mask_invariants", "Hard mask contains fractional values")
        checks["mask_invariants"] = True

        return VerificationReport(id=record.id, passed=True, checks=checks)

    def verify_manifest(self, records: Optional[list[PairRecord]] = None) -> list[VerificationReport]:
        records = records if records is not None else self.load_manifest()
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            reports = list(executor.map(self.verify_pair, records))
        failed = [r.id for r in reports if not r.passed]
        if failed:
            logger.warning("%d of %d records failed verification", len(failed), len(reports))
        return reports


def load_ranges(path: Union[str, os.PathLike]) -> ParamRanges:
    """Read a ParamRanges JSON config file; unknown keys are rejected."""
    return ParamRanges.model_validate_json(Path(path).read_text(encoding="utf-8"))
