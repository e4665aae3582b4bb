# ruff:noqa: PT011

import json
import logging
import shutil
import tempfile
from collections.abc import Generator
from pathlib import Path
from typing import Any

import numpy as np
import pytest
from PIL import Image
from pydantic import ValidationError
from scipy.ndimage import gaussian_filter

from fbsim.dataset_manager import (
    DatasetManager,
    ParamsSidecar,
    PairRecord,
    ParamRanges,
    load_ranges,
    record_rng,
    sample_params,
)
from fbsim.exceptions import InvalidParamsError
from fbsim.image_io import atomic_write_text, load_rgb_u8, tree_digest


def write_texture(path: Path, height: int, width: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    texture = gaussian_filter(rng.random((height, width, 3)), sigma=(3, 3, 0))
    texture = (texture - texture.min()) / (texture.max() - texture.min())
    Image.fromarray(np.rint((0.1 + 0.8 * texture) * 255).astype(np.uint8)).save(path)


@pytest.fixture
def temp_dir() -> Generator[str, Any, None]:
    directory = tempfile.mkdtemp()
    yield directory
    shutil.rmtree(directory)


@pytest.fixture
def src_dir(temp_dir: str) -> Path:
    path = Path(temp_dir) / "clean"
    path.mkdir()
    for i in range(3):
        write_texture(path / f"img{i}.png", 72, 88, seed=i)
    return path


@pytest.fixture
def ranges() -> ParamRanges:
    return ParamRanges(
        width_w=(8, 14),
        gap_g=(14, 24),
        v_y=(0.4, 0.6),
        noise_alpha=(0.0, 0.005),
        noise_sigma_r=(0.0, 0.01),
        master_seed=1234,
    )


def test_ranges_validation():
    with pytest.raises(ValidationError):
        ParamRanges(v_y=(0.9, 0.2))
    with pytest.raises(ValidationError):
        ParamRanges(unknown=(0, 1))


def test_ranges_json_roundtrip(temp_dir: str, ranges: ParamRanges):
    path = Path(temp_dir) / "ranges.json"
    atomic_write_text(path, ranges.model_dump_json(indent=2))
    assert json.loads(path.read_text())["width_w"] == [8.0, 14.0]
    assert load_ranges(path) == ranges


def test_degenerate_ranges_give_constants():
    ranges = ParamRanges(
        theta=(0.1, 0.1),
        width_w=(10, 10),
        gap_g=(30, 30),
        v_y=(0.5, 0.5),
        sigma_theta=(0.01, 0.01),
        delta_g_frac=(0.1, 0.1),
        delta_w_frac=(0.2, 0.2),
        delta_edge=(1, 1),
        edge_corr_len=(20, 20),
        feather_px=(2, 2),
        noise_alpha=(0.01, 0.01),
        noise_sigma_r=(0.02, 0.02),
    )
    params = sample_params(ranges, np.random.default_rng(0))
    assert params.theta == 0.1
    assert params.width_w == 10
    assert params.gap_g == 30
    assert params.v_y == 0.5
    assert params.sigma_theta == 0.01
    assert params.delta_g == pytest.approx(3.0)
    assert params.delta_w == pytest.approx(2.0)
    assert params.delta_edge == 1
    assert params.edge_corr_len == 20
    assert params.feather_px == 2
    assert params.noise_alpha == 0.01
    assert params.noise_sigma_r == 0.02
    assert 0 <= params.phase_phi < params.period


def test_sampled_v_y_mean():
    ranges = ParamRanges()
    rng = np.random.default_rng(5)
    values = [sample_params(ranges, rng).v_y for _ in range(10_000)]
    assert np.mean(values) == pytest.approx(0.55, rel=0.02)


def test_sampling_is_keyed_on_record_id():
    ranges = ParamRanges(master_seed=99)
    a = sample_params(ranges, record_rng(99, "img0_000"))
    b = sample_params(ranges, record_rng(99, "img0_000"))
    c = sample_params(ranges, record_rng(99, "img0_001"))
    assert a == b
    assert a != c


def test_disabled_jitter_terms():
    ranges = ParamRanges(
        enable_angle_jitter=False,
        enable_spacing_jitter=False,
        enable_width_jitter=False,
        enable_edge_jitter=False,
        enable_noise=False,
    )
    params = sample_params(ranges, np.random.default_rng(3))
    assert params.sigma_theta == 0
    assert params.delta_g == 0
    assert params.delta_w == 0
    assert params.delta_edge == 0
    assert params.noise_alpha == 0
    assert params.noise_sigma_r == 0


def test_infeasible_ranges():
    ranges = ParamRanges(delta_w_frac=(1.0, 1.0))
    with pytest.raises(InvalidParamsError):
        sample_params(ranges, np.random.default_rng(0))


class TestDatasetManager:
    def test_synthesize_dataset(self, temp_dir: str, src_dir: Path, ranges: ParamRanges):
        out_dir = Path(temp_dir) / "out"
        manager = DatasetManager(out_dir, ranges=ranges)
        records = manager.synthesize_dataset(src_dir, per_source=2)

        assert [r.id for r in records] == [f"img{i}_{r:03d}" for i in range(3) for r in range(2)]
        assert (out_dir / "config.json").exists()
        lines = (out_dir / "manifest.jsonl").read_text().splitlines()
        assert [PairRecord.model_validate_json(line) for line in lines] == records

        for record in records:
            assert record.source_dataset == "clean"
            assert not Path(record.lq_path).is_absolute()
            for rel in (record.hq_path, record.lq_path, record.mask_path, record.params_path):
                assert manager.resolve(rel).is_file()
            assert load_rgb_u8(manager.resolve(record.lq_path)).shape == (72, 88, 3)
            sidecar = json.loads(manager.resolve(record.params_path).read_text())
            assert sidecar["trace_digest"] == record.trace_digest

        assert manager.load_manifest() == records

    def test_corrupt_file_is_skipped(
        self, temp_dir: str, src_dir: Path, ranges: ParamRanges, caplog: pytest.LogCaptureFixture
    ):
        (src_dir / "broken.png").write_bytes(b"garbage")
        manager = DatasetManager(Path(temp_dir) / "out", ranges=ranges)
        with caplog.at_level(logging.WARNING, logger="fbsim.dataset_manager"):
            records = manager.synthesize_dataset(src_dir)
        assert len(records) == 3
        assert any("broken.png" in message for message in caplog.messages)

    def test_empty_corpus(self, temp_dir: str, ranges: ParamRanges):
        empty = Path(temp_dir) / "empty"
        empty.mkdir()
        manager = DatasetManager(Path(temp_dir) / "out", ranges=ranges)
        with pytest.raises(ValueError):
            manager.synthesize_dataset(empty)

        (empty / "junk.png").write_bytes(b"junk")
        with pytest.raises(ValueError):
            manager.synthesize_dataset(empty)

    def test_duplicate_stems(self, temp_dir: str, src_dir: Path, ranges: ParamRanges):
        write_texture(src_dir / "img0.jpg", 72, 88, seed=7)
        manager = DatasetManager(Path(temp_dir) / "out", ranges=ranges)
        with pytest.raises(ValueError):
            manager.synthesize_dataset(src_dir)

    def test_patch_512(self, temp_dir: str, ranges: ParamRanges):
        src = Path(temp_dir) / "large"
        src.mkdir()
        write_texture(src / "big.png", 540, 600, seed=1)
        write_texture(src / "small.png", 300, 600, seed=2)
        manager = DatasetManager(Path(temp_dir) / "out", ranges=ranges)
        records = manager.synthesize_dataset(src, patch="center")
        assert [r.id for r in records] == ["big_000"]
        assert (records[0].height, records[0].width) == (512, 512)
        assert load_rgb_u8(manager.resolve(records[0].lq_path)).shape == (512, 512, 3)

    def test_random_patch(self, temp_dir: str, src_dir: Path, ranges: ParamRanges):
        manager = DatasetManager(Path(temp_dir) / "out", ranges=ranges)
        records = manager.synthesize_dataset(src_dir, per_source=2, patch="random", patch_size=64)
        assert len(records) == 6
        assert all((r.height, r.width) == (64, 64) for r in records)

    def test_rerun_is_byte_identical(self, temp_dir: str, src_dir: Path, ranges: ParamRanges):
        first = DatasetManager(Path(temp_dir) / "first", ranges=ranges, workers=1)
        second = DatasetManager(Path(temp_dir) / "second", ranges=ranges, workers=4)
        first.synthesize_dataset(src_dir, per_source=2)
        second.synthesize_dataset(src_dir, per_source=2)
        assert tree_digest(first.out_dir) == tree_digest(second.out_dir)

    def test_adding_a_source_keeps_existing_records(self, temp_dir: str, src_dir: Path, ranges: ParamRanges):
        before = DatasetManager(Path(temp_dir) / "before", ranges=ranges).synthesize_dataset(src_dir)
        write_texture(src_dir / "aaa.png", 72, 88, seed=9)
        after = DatasetManager(Path(temp_dir) / "after", ranges=ranges).synthesize_dataset(src_dir)
        after_by_id = {r.id: r for r in after}
        assert all(after_by_id[r.id].params == r.params for r in before)

    def test_verify_fresh_records(self, temp_dir: str, src_dir: Path, ranges: ParamRanges):
        manager = DatasetManager(Path(temp_dir) / "out", ranges=ranges, workers=2)
        manager.synthesize_dataset(src_dir)
        reports = manager.verify_manifest()
        assert len(reports) == 3
        assert all(r.passed for r in reports)
        assert all(r.checks["lq"] and r.checks["mask"] for r in reports)

    def test_verify_detects_replaced_lq(self, temp_dir: str, src_dir: Path, ranges: ParamRanges):
        noiseless = ranges.model_copy(update={"enable_noise": False})
        manager = DatasetManager(Path(temp_dir) / "out", ranges=noiseless)
        record = manager.synthesize_dataset(src_dir)[0]
        shutil.copyfile(manager.resolve(record.hq_path), manager.resolve(record.lq_path))

        report = manager.verify_pair(record)
        assert not report.passed
        assert report.checks["lq"] is False
        assert report.first_mismatch is not None
        row, col, _ = report.first_mismatch
        mask = np.asarray(Image.open(manager.resolve(record.mask_path)))
        assert mask[row, col] > 0

    def test_verify_detects_seed_change(self, temp_dir: str, src_dir: Path, ranges: ParamRanges):
        manager = DatasetManager(Path(temp_dir) / "out", ranges=ranges)
        record = manager.synthesize_dataset(src_dir)[0]
        tampered = record.model_copy(
            update={"params": record.params.model_copy(update={"seed": record.params.seed ^ 1})}
        )
        report = manager.verify_pair(tampered)
        assert not report.passed
        assert report.checks["trace_digest"] is False
        assert "trace_digest" in report.detail

    def test_verify_missing_file(self, temp_dir: str, src_dir: Path, ranges: ParamRanges):
        manager = DatasetManager(Path(temp_dir) / "out", ranges=ranges)
        record = manager.synthesize_dataset(src_dir)[0]
        manager.resolve(record.mask_path).unlink()
        report = manager.verify_pair(record)
        assert not report.passed
        assert report.checks == {"files": False}

    def test_verify_detects_rewritten_sidecar(self, temp_dir: str, src_dir: Path, ranges: ParamRanges):
        manager = DatasetManager(Path(temp_dir) / "out", ranges=ranges)
        record = manager.synthesize_dataset(src_dir)[0]
        sidecar_path = manager.resolve(record.params_path)
        sidecar = ParamsSidecar.model_validate_json(sidecar_path.read_text())
        rewritten = sidecar.model_copy(
            update={"params": sidecar.params.model_copy(update={"seed": 12345}), "trace_digest": "0" * 64}
        )
        atomic_write_text(sidecar_path, rewritten.model_dump_json(indent=2))

        report = manager.verify_pair(record)
        assert not report.passed
        assert report.checks == {"files": True, "dimensions": True, "trace_digest": False}
        assert record.params_path in report.detail

        atomic_write_text(sidecar_path, "{not json")
        assert manager.verify_pair(record).checks == {"files": False}

    def test_verify_missing_sidecar(self, temp_dir: str, src_dir: Path, ranges: ParamRanges):
        manager = DatasetManager(Path(temp_dir) / "out", ranges=ranges)
        record = manager.synthesize_dataset(src_dir)[0]
        manager.resolve(record.params_path).unlink()
        report = manager.verify_pair(record)
        assert not report.passed
        assert report.checks == {"files": False}
        assert record.params_path in report.detail

    def test_verify_hard_mask(self, temp_dir: str, src_dir: Path, ranges: ParamRanges):
        hard = ranges.model_copy(update={"feather_px": (0.0, 0.0)})
        manager = DatasetManager(Path(temp_dir) / "out", ranges=hard)
        records = manager.synthesize_dataset(src_dir)
        assert all(r.params.feather_px == 0 for r in records)
        assert all(manager.verify_pair(r).checks["mask_invariants"] for r in records)
