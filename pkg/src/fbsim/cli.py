"""Command-line entry point: simulate | batch | estimate | evaluate | verify."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Literal, NoReturn, Optional

from pydantic import BaseModel, Field, ValidationError

from fbsim.band_estimator import DEFAULT_PEAK_THRESHOLD, EstimatorConfig, estimate_banding, qa_manifest
from fbsim.dataset_manager import (
    DatasetManager,
    ParamRanges,
    ParamsSidecar,
    load_ranges,
    record_rng,
    sample_params,
)
from fbsim.degradation import synthesize_lq
from fbsim.distance_providers import FileDistanceProvider, GradientDistanceProvider
from fbsim.evaluator import Evaluator, pairs_from_dirs, pairs_from_manifest
from fbsim.exceptions import FbsimError
from fbsim.image_io import atomic_write_bytes, encode_png, load_rgb, quantize
from fbsim.metrics import MaskedLossWeights
from fbsim.params import U64_MAX, BandingParams

logger = logging.getLogger("fbsim")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_INVALID = 3


class CliConfig(BaseModel):
    command: Literal["simulate", "batch", "estimate", "evaluate", "verify"]
    config: Optional[Path] = None
    seed: Optional[int] = Field(None, ge=0, le=U64_MAX)
    verbose: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _with_overrides(params: BandingParams, seed: Optional[int], feather: Optional[float]) -> BandingParams:
    update = params.model_dump()
    if seed is not None:
        update["seed"] = seed
    if feather is not None:
        update["feather_px"] = feather
    return BandingParams(**update)


def _ranges(args: argparse.Namespace) -> ParamRanges:
    ranges = load_ranges(args.config) if args.config else ParamRanges()
    update = ranges.model_dump()
    if args.seed is not None:
        update["master_seed"] = args.seed
    if args.feather is not None:
        update["feather_px"] = (args.feather, args.feather)
    return ParamRanges(**update)


def cmd_simulate(args: argparse.Namespace) -> int:
    hq = load_rgb(args.hq)
    if args.params:
        params = BandingParams.model_validate_json(Path(args.params).read_text(encoding="utf-8"))
        params = _with_overrides(params, args.seed, args.feather)
    else:
        ranges = _ranges(args)
        params = sample_params(ranges, record_rng(ranges.master_seed, Path(args.hq).stem))

    out = synthesize_lq(hq, params)
    sidecar = ParamsSidecar(
        id=Path(args.out_prefix).name,
        params=params,
        trace_digest=out.trace.digest(),
        mask_coverage=float(out.mask.values.mean()),
        n_stripes=len(out.trace),
    )
    lq_png = encode_png(quantize(out.lq.pixels))
    mask_png = encode_png(quantize(out.mask.values))

    prefix = str(args.out_prefix)
    outputs = {
        Path(f"{prefix}.lq.png"): lq_png,
        Path(f"{prefix}.mask.png"): mask_png,
        Path(f"{prefix}.params.json"): sidecar.model_dump_json(indent=2).encode("utf-8"),
    }
    written: list[Path] = []
    try:
        for path, data in outputs.items():
            atomic_write_bytes(path, data)
            written.append(path)
    except OSError:
        # the three files form one output set
        for path in written:
            path.unlink(missing_ok=True)
        logger.warning("Removed partial output %s", ", ".join(str(p) for p in written))
        raise
    print(f"Wrote {prefix}.lq.png, {prefix}.mask.png, {prefix}.params.json")
    return EXIT_OK


def cmd_batch(args: argparse.Namespace) -> int:
    manager = DatasetManager(args.out_dir, ranges=_ranges(args), workers=args.workers)
    patch = args.patch_mode if args.patch_512 else None
    records = manager.synthesize_dataset(args.src_dir, per_source=args.per_source, patch=patch, patch_size=512)
    print(f"Synthesized {len(records)} records into {manager.out_dir}")
    return EXIT_OK


def _estimator_config(args: argparse.Namespace) -> EstimatorConfig:
    config = (
        EstimatorConfig.model_validate_json(Path(args.config).read_text(encoding="utf-8"))
        if args.config
        else EstimatorConfig()
    )
    update = config.model_dump()
    if args.peak_threshold is not None:
        update["peak_threshold"] = args.peak_threshold
    if args.no_window:
        update["window"] = False
    return EstimatorConfig(**update)


def cmd_estimate(args: argparse.Namespace) -> int:
    config = _estimator_config(args)
    if args.manifest:
        manifest = Path(args.manifest)
        manager = DatasetManager(manifest.parent, workers=args.workers)
        report = qa_manifest(
            manager,
            manager.load_manifest(manifest),
            use_hq=args.use_hq,
            peak_threshold=config.peak_threshold,
            window=config.window,
            workers=args.workers,
            min_periodicity=config.min_periodicity,
        )
        qa_csv = Path(args.qa_csv) if args.qa_csv else manifest.parent / "qa.csv"
        report.write_csv(qa_csv)
        if args.json:
            print(json.dumps(report.summary, indent=2))
        else:
            for key, value in report.summary.items():
                print(f"{key}: {value}")
            print(f"QA table written to {qa_csv}")
        return EXIT_OK

    if not args.image:
        msg = "estimate needs an image path or --manifest"
        raise ValueError(msg)
    est = estimate_banding(
        load_rgb(args.image),
        peak_threshold=config.peak_threshold,
        window=config.window,
        min_periodicity=config.min_periodicity,
    )
    if args.json:
        print(est.model_dump_json(indent=2))
    else:
        print(
            f"theta_hat={est.theta_hat:.5f} period_hat={est.period_hat:.3f} "
            f"duty_hat={est.duty_hat:.3f} confidence={est.confidence:.3f}"
        )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    weights = (
        MaskedLossWeights.model_validate_json(Path(args.config).read_text(encoding="utf-8"))
        if args.config
        else MaskedLossWeights()
    )
    provider = FileDistanceProvider(args.dist_dir) if args.dist_dir else GradientDistanceProvider()

    if args.manifest:
        manager = DatasetManager(Path(args.manifest).parent)
        manager.manifest_path = Path(args.manifest)
        pairs = pairs_from_manifest(manager, pred_dir=args.pred_dir)
    elif args.pred_dir and args.gt_dir and args.mask_dir:
        pairs = pairs_from_dirs(args.pred_dir, args.gt_dir, args.mask_dir)
    else:
        msg = "evaluate needs --manifest or all of --pred-dir, --gt-dir and --mask-dir"
        raise ValueError(msg)

    report = Evaluator(weights=weights, provider=provider, workers=args.workers).evaluate(pairs)
    paths = report.write(args.out)
    if args.json:
        print(json.dumps(report.aggregate, indent=2))
    else:
        for key, value in report.aggregate.items():
            print(f"{key}: {value:.6f}")
        print(f"Report written to {', '.join(str(p) for p in paths)}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    manifest = Path(args.manifest)
    manager = DatasetManager(manifest.parent, workers=args.workers)
    reports = manager.verify_manifest(manager.load_manifest(manifest))
    failed = [r for r in reports if not r.passed]

    if args.json:
        print(json.dumps([r.model_dump() for r in reports], indent=2))
    else:
        for r in failed:
            print(f"FAIL {r.id}: {r.detail}")
        if failed:
            print(f"{len(failed)} of {len(reports)} records failed")
        else:
            print(f"all pass ({len(reports)} records)")
    return EXIT_INVALID if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="Increase log verbosity")
    common.add_argument("--workers", type=int, default=1, help="Worker threads")

    parser = _Parser(prog="fbsim", description="Flicker-banding simulation, evaluation and estimation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    simulate = sub.add_parser("simulate", parents=[common], help="Synthesize one banded image")
    simulate.add_argument("hq", help="Clean input image")
    simulate.add_argument("out_prefix", help="Output prefix for .lq.png, .mask.png and .params.json")
    simulate.add_argument("--params", help="BandingParams JSON file")
    simulate.add_argument("--config", help="ParamRanges JSON file to sample parameters from")
    simulate.add_argument("--seed", type=int, help="Seed override")
    simulate.add_argument("--feather", type=float, help="Feather half-width override (pixels)")
    simulate.set_defaults(func=cmd_simulate)

    batch = sub.add_parser("batch", parents=[common], help="Synthesize a paired dataset")
    batch.add_argument("src_dir", help="Directory of clean source images")
    batch.add_argument("out_dir", help="Output dataset directory")
    batch.add_argument("--config", help="ParamRanges JSON file")
    batch.add_argument("--seed", type=int, help="Master seed override")
    batch.add_argument("--feather", type=float, help="Fixed feather half-width (pixels)")
    batch.add_argument("--per-source", type=int, default=1, help="Records per source image")
    batch.add_argument("--patch-512", action="store_true", help="Crop 512x512 patches")
    batch.add_argument("--patch-mode", choices=["center", "random"], default="center", help="Patch crop mode")
    batch.set_defaults(func=cmd_batch)

    estimate = sub.add_parser("estimate", parents=[common], help="Estimate banding attributes")
    estimate.add_argument("image", nargs="?", help="Image to analyze")
    estimate.add_argument("--manifest", help="Run QA over a dataset manifest instead")
    estimate.add_argument("--config", help="EstimatorConfig JSON file")
    estimate.add_argument("--json", action="store_true", help="Machine-readable output")
    estimate.add_argument("--use-hq", action="store_true", help="QA the HQ images (false-positive audit)")
    estimate.add_argument("--qa-csv", help="QA table path (defaults to qa.csv next to the manifest)")
    estimate.add_argument(
        "--peak-threshold", type=float, help=f"Peak prominence threshold (default {DEFAULT_PEAK_THRESHOLD})"
    )
    estimate.add_argument("--no-window", action="store_true", help="Skip the Hann window")
    estimate.set_defaults(func=cmd_estimate)

    evaluate = sub.add_parser("evaluate", parents=[common], help="Compute metric reports")
    evaluate.add_argument("--manifest", help="Dataset manifest (gt = hq, pred = lq unless --pred-dir)")
    evaluate.add_argument("--config", help="MaskedLossWeights JSON file")
    evaluate.add_argument("--json", action="store_true", help="Machine-readable output")
    evaluate.add_argument("--pred-dir", help="Directory of predictions named ID.png")
    evaluate.add_argument("--gt-dir", help="Directory of ground-truth images")
    evaluate.add_argument("--mask-dir", help="Directory of masks")
    evaluate.add_argument("--dist-dir", help="Precomputed distance maps (ID.npy or ID.png)")
    evaluate.add_argument("--out", default=".", help="Report output directory")
    evaluate.set_defaults(func=cmd_evaluate)

    verify = sub.add_parser("verify", parents=[common], help="Re-synthesize and compare every record")
    verify.add_argument("manifest", help="Dataset manifest")
    verify.add_argument("--json", action="store_true", help="Machine-readable output")
    verify.set_defaults(func=cmd_verify)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """Run the fbsim command line and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        CliConfig(
            command=args.command,
            config=getattr(args, "config", None),
            seed=getattr(args, "seed", None),
            verbose=args.verbose,
            workers=args.workers,
        )
    except ValidationError as e:
        parser.exit(EXIT_USAGE, f"fbsim: error: {e.errors()[0]['loc'][0]}: {e.errors()[0]['msg']}\n")

    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(format="[%(levelname)s] %(message)s", level=level)

    try:
        return args.func(args)
    except OSError as e:
        logger.error("%s", e)  # noqa: TRY400
        return EXIT_IO
    except (FbsimError, ValueError) as e:
        logger.error("%s", e)  # noqa: TRY400
        return EXIT_INVALID
