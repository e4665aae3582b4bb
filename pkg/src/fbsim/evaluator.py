# ruff:noqa:D102,D101,D107 docstrings

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

import numpy as np
import polars as pl
from pydantic import BaseModel, ConfigDict, Field

from fbsim.dataset_manager import DatasetManager
from fbsim.distance_providers import DistanceProvider, GradientDistanceProvider
from fbsim.exceptions import ImageReadError
from fbsim.image_io import atomic_write_bytes, atomic_write_text, load_gray, load_rgb
from fbsim.metrics import (
    MaskedLossWeights,
    masked_perceptual_loss,
    masked_pixel_loss,
    psnr,
    ssim,
)

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["id", "psnr", "ssim", "lpips_proxy", "merged", "masked_pixel", "masked_perceptual"]
REPORT_SCHEMA = {"id": pl.Utf8, **{c: pl.Float64 for c in REPORT_COLUMNS[1:]}}


class EvalPair(BaseModel):
    id: str
    pred_path: Path
    gt_path: Path
    mask_path: Path


class MetricReport(BaseModel):
    """Per-pair metric rows, their means, and the run metadata."""

    rows: pl.DataFrame
    aggregate: dict[str, float]
    config_hash: str
    timestamp: str
    failed: list[str] = Field(default_factory=list)

    model_config = ConfigDict(arbitrary_types_allowed=True)

    def write(self, out_dir: Union[str, os.PathLike]) -> list[Path]:
        """
        Write `report.jsonl`, `report.csv` and `report.meta.json` into `out_dir`.

        The timestamp only appears in the meta file, so the row files are
        byte-identical across runs with the same inputs.
        """
        out_dir = Path(out_dir)
        paths = [out_dir / "report.jsonl", out_dir / "report.csv", out_dir / "report.meta.json"]
        atomic_write_bytes(paths[0], self.rows.write_ndjson().encode("utf-8"))
        atomic_write_bytes(paths[1], self.rows.write_csv().encode("utf-8"))
        meta = {
            "config_hash": self.config_hash,
            "timestamp": self.timestamp,
            "n_pairs": self.rows.height,
            "failed": self.failed,
            "aggregate": self.aggregate,
        }
        atomic_write_text(paths[2], json.dumps(meta, indent=2))
        return paths


def pairs_from_manifest(
    manager: DatasetManager, pred_dir: Optional[Union[str, os.PathLike]] = None
) -> list[EvalPair]:
    """Pairs for every manifest record: predictions from `pred_dir/ID.png`, or the LQ images."""
    pairs = []
    for record in manager.load_manifest():
        pred = Path(pred_dir) / f"{record.id}.png" if pred_dir else manager.resolve(record.lq_path)
        pairs.append(
            EvalPair(
                id=record.id,
                pred_path=pred,
                gt_path=manager.resolve(record.hq_path),
                mask_path=manager.resolve(record.mask_path),
            )
        )
    return pairs


def pairs_from_dirs(
    pred_dir: Union[str, os.PathLike], gt_dir: Union[str, os.PathLike], mask_dir: Union[str, os.PathLike]
) -> list[EvalPair]:
    """Pairs matched by file stem across the three directories; unmatched files are logged."""
    stems = {}
    for name, directory in (("pred", pred_dir), ("gt", gt_dir), ("mask", mask_dir)):
        directory = Path(directory)
        if not directory.is_dir():
            msg = f"{name} directory {directory} does not exist"
            raise ImageReadError(msg)
        stems[name] = {p.stem: p for p in directory.iterdir() if p.is_file() and not p.name.startswith(".")}

    common = set(stems["pred"]) & set(stems["gt"]) & set(stems["mask"])
    unmatched = (set(stems["pred"]) | set(stems["gt"]) | set(stems["mask"])) - common
    if unmatched:
        logger.warning("Ignoring %d files without a full pred/gt/mask triple", len(unmatched))
    return [
        EvalPair(id=s, pred_path=stems["pred"][s], gt_path=stems["gt"][s], mask_path=stems["mask"][s])
        for s in sorted(common)
    ]


class Evaluator:
    """
    Batch evaluation of restorations against ground truth under the masked losses.

    Every pair yields PSNR, SSIM, the plain mean of its perceptual distance map
    (`lpips_proxy`), the masked pixel and perceptual losses and the merged loss.
    Rows are ordered by pair id, whatever the worker count.
    """

    def __init__(
        self,
        weights: Optional[MaskedLossWeights] = None,
        provider: Optional[DistanceProvider] = None,
        workers: int = 1,
    ):
        if workers < 1:
            msg = f"workers must be at least 1, got {workers}"
            raise ValueError(msg)
        self.weights = weights or MaskedLossWeights()
        self.provider = provider or GradientDistanceProvider()
        self.workers = workers

    @property
    def config_hash(self) -> str:
        payload = json.dumps(
            {"weights": self.weights.model_dump(), "provider": self.provider.name}, sort_keys=True
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def evaluate_pair(self, pair: EvalPair) -> dict[str, Union[str, float]]:
        pred = load_rgb(pair.pred_path)
        gt = load_rgb(pair.gt_path)
        mask = load_gray(pair.mask_path)

        dist = self.provider.distance_map(pred, gt, pair_id=pair.id)
        pixel = masked_pixel_loss(pred, gt, mask, self.weights)
        perceptual = masked_perceptual_loss(dist, mask, self.weights)
        return {
            "id": pair.id,
            "psnr": psnr(pred, gt),
            "ssim": ssim(pred, gt),
            "lpips_proxy": float(np.mean(dist)),
            "merged": self.weights.lambda_pixel * pixel + self.weights.lambda_perceptual * perceptual,
            "masked_pixel": pixel,
            "masked_perceptual": perceptual,
        }

    def _safe_evaluate(self, pair: EvalPair) -> Optional[dict[str, Union[str, float]]]:
        try:
            return self.evaluate_pair(pair)
        except (OSError, ValueError) as e:
            logger.warning("Skipping pair %s: %s", pair.id, e)
            return None

    def evaluate(self, pairs: list[EvalPair]) -> MetricReport:
        """
        Evaluate every pair and aggregate by arithmetic mean.

        Args:
            pairs: Pairs to evaluate

        Returns:
            MetricReport: Rows sorted by id, means, config hash and UTC timestamp

        Raises:
            ValueError: If `pairs` is empty or no pair could be evaluated
        """
        if not pairs:
            msg = "Nothing to evaluate: no pairs given"
            raise ValueError(msg)

        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            results = list(executor.map(self._safe_evaluate, pairs))

        failed = sorted(p.id for p, r in zip(pairs, results) if r is None)
        rows = [r for r in results if r is not None]
        if not rows:
            msg = "No pair could be evaluated"
            raise ValueError(msg)

        df = pl.DataFrame(rows, schema=REPORT_SCHEMA).sort("id")
        aggregate = df.select(pl.exclude("id").mean()).row(0, named=True)
        logger.info("Evaluated %d pairs (%d failed)", df.height, len(failed))
        return MetricReport(
            rows=df,
            aggregate={k: float(v) for k, v in aggregate.items()},
            config_hash=self.config_hash,
            timestamp=datetime.now(timezone.utc).isoformat(),
            failed=failed,
        )


def evaluate_pairs(
    pairs: list[EvalPair],
    weights: Optional[MaskedLossWeights] = None,
    provider: Optional[DistanceProvider] = None,
    workers: int = 1,
) -> MetricReport:
    return Evaluator(weights=weights, provider=provider, workers=workers).evaluate(pairs)
