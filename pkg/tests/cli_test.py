import json
import shutil
import tempfile
from collections.abc import Generator
from pathlib import Path
from typing import Any

import numpy as np
import pytest
from PIL import Image
from scipy.ndimage import gaussian_filter

from fbsim import main
from fbsim.cli import EXIT_INVALID, EXIT_IO, EXIT_OK, EXIT_USAGE
from fbsim.dataset_manager import ParamRanges
from fbsim.image_io import atomic_write_text, load_rgb_u8, tree_digest
from fbsim.params import BandingParams


def write_texture(path: Path, size: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    texture = gaussian_filter(rng.random((size, size, 3)), sigma=(5, 5, 0))
    texture = (texture - texture.min()) / (texture.max() - texture.min())
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.rint((0.4 + 0.2 * texture) * 255).astype(np.uint8)).save(path)


@pytest.fixture
def temp_dir() -> Generator[str, Any, None]:
    directory = tempfile.mkdtemp()
    yield directory
    shutil.rmtree(directory)


@pytest.fixture
def hq_path(temp_dir: str) -> Path:
    path = Path(temp_dir) / "scene.png"
    write_texture(path, 128, seed=0)
    return path


@pytest.fixture
def params_path(temp_dir: str) -> Path:
    path = Path(temp_dir) / "params.json"
    atomic_write_text(path, BandingParams(width_w=8, gap_g=16, theta=0.1, v_y=0.5, seed=9).model_dump_json())
    return path


@pytest.fixture
def src_dir(temp_dir: str) -> Path:
    path = Path(temp_dir) / "clean"
    for i in range(3):
        write_texture(path / f"s{i}.png", 96, seed=i + 1)
    return path


@pytest.fixture
def ranges_path(temp_dir: str) -> Path:
    path = Path(temp_dir) / "ranges.json"
    atomic_write_text(path, ParamRanges(width_w=(6, 10), gap_g=(14, 22), v_y=(0.3, 0.6)).model_dump_json())
    return path


def test_simulate(temp_dir: str, hq_path: Path, params_path: Path):
    outputs = []
    for run in ("a", "b"):
        prefix = Path(temp_dir) / run / "frame"
        prefix.parent.mkdir()
        assert main(["simulate", str(hq_path), str(prefix), "--params", str(params_path)]) == EXIT_OK
        files = [Path(f"{prefix}.lq.png"), Path(f"{prefix}.mask.png"), Path(f"{prefix}.params.json")]
        assert all(f.is_file() for f in files)
        outputs.append([f.read_bytes() for f in files])
    assert outputs[0] == outputs[1]

    sidecar = json.loads(outputs[0][2])
    assert sidecar["id"] == "frame"
    assert sidecar["params"]["seed"] == 9
    assert 0 < sidecar["mask_coverage"] < 1


def test_simulate_overrides_and_sampling(temp_dir: str, hq_path: Path, params_path: Path, ranges_path: Path):
    prefix = Path(temp_dir) / "override"
    args = ["simulate", str(hq_path), str(prefix), "--params", str(params_path), "--seed", "4", "--feather", "0"]
    assert main(args) == EXIT_OK
    sidecar = json.loads(Path(f"{prefix}.params.json").read_text())
    assert sidecar["params"]["seed"] == 4
    assert sidecar["params"]["feather_px"] == 0
    mask = np.asarray(Image.open(f"{prefix}.mask.png"))
    assert set(np.unique(mask)) <= {0, 255}

    sampled = Path(temp_dir) / "sampled"
    assert main(["simulate", str(hq_path), str(sampled), "--config", str(ranges_path)]) == EXIT_OK
    params = json.loads(Path(f"{sampled}.params.json").read_text())["params"]
    assert 6 <= params["width_w"] <= 10


def test_simulate_identity(temp_dir: str, hq_path: Path):
    params_path = Path(temp_dir) / "identity.json"
    atomic_write_text(params_path, BandingParams(width_w=8, gap_g=16, v_y=1.0).model_dump_json())
    prefix = Path(temp_dir) / "same"
    assert main(["simulate", str(hq_path), str(prefix), "--params", str(params_path)]) == EXIT_OK
    lq = load_rgb_u8(f"{prefix}.lq.png").astype(int)
    hq = load_rgb_u8(hq_path).astype(int)
    assert np.max(np.abs(lq - hq)) <= 1


def test_simulate_missing_input(temp_dir: str, params_path: Path):
    prefix = Path(temp_dir) / "nothing"
    missing = Path(temp_dir) / "missing.png"
    assert main(["simulate", str(missing), str(prefix), "--params", str(params_path)]) == EXIT_IO
    assert not list(Path(temp_dir).glob("nothing*"))


def test_simulate_failed_write_leaves_no_partial_output(temp_dir: str, hq_path: Path, params_path: Path):
    prefix = Path(temp_dir) / "partial"
    Path(f"{prefix}.params.json").mkdir()
    assert main(["simulate", str(hq_path), str(prefix), "--params", str(params_path)]) == EXIT_IO
    assert not Path(f"{prefix}.lq.png").exists()
    assert not Path(f"{prefix}.mask.png").exists()
    assert [p.name for p in Path(temp_dir).iterdir() if p.name.startswith(("partial", ".partial"))] == [
        "partial.params.json"
    ]


def test_usage_errors(hq_path: Path):
    with pytest.raises(SystemExit) as excinfo:
        main(["simulate"])
    assert excinfo.value.code == EXIT_USAGE

    with pytest.raises(SystemExit) as excinfo:
        main(["unknown"])
    assert excinfo.value.code == EXIT_USAGE

    with pytest.raises(SystemExit) as excinfo:
        main(["simulate", str(hq_path), "out", "--workers", "0"])
    assert excinfo.value.code == EXIT_USAGE


def test_batch_and_verify(
    temp_dir: str, src_dir: Path, ranges_path: Path, capsys: pytest.CaptureFixture
):
    out_dir = Path(temp_dir) / "dataset"
    assert main(["batch", str(src_dir), str(out_dir), "--config", str(ranges_path), "--seed", "11"]) == EXIT_OK
    assert (out_dir / "manifest.jsonl").is_file()
    config = json.loads((out_dir / "config.json").read_text())
    assert config["ranges"]["master_seed"] == 11
    capsys.readouterr()

    assert main(["verify", str(out_dir / "manifest.jsonl")]) == EXIT_OK
    assert "all pass (3 records)" in capsys.readouterr().out

    (out_dir / "lq" / "s1_000.png").write_bytes((out_dir / "hq" / "s1_000.png").read_bytes())
    assert main(["verify", str(out_dir / "manifest.jsonl")]) == EXIT_INVALID
    assert "FAIL s1_000" in capsys.readouterr().out


def test_batch_is_independent_of_workers(temp_dir: str, src_dir: Path, ranges_path: Path):
    one = Path(temp_dir) / "one"
    two = Path(temp_dir) / "two"
    assert main(["batch", str(src_dir), str(one), "--config", str(ranges_path), "--per-source", "2"]) == EXIT_OK
    args = ["batch", str(src_dir), str(two), "--config", str(ranges_path), "--per-source", "2", "--workers", "2"]
    assert main(args) == EXIT_OK
    assert tree_digest(one) == tree_digest(two)


def test_batch_empty_source(temp_dir: str):
    empty = Path(temp_dir) / "empty"
    empty.mkdir()
    assert main(["batch", str(empty), str(Path(temp_dir) / "out")]) == EXIT_INVALID


def test_estimate(temp_dir: str, hq_path: Path, params_path: Path, capsys: pytest.CaptureFixture):
    prefix = Path(temp_dir) / "frame"
    assert main(["simulate", str(hq_path), str(prefix), "--params", str(params_path)]) == EXIT_OK
    capsys.readouterr()

    assert main(["estimate", f"{prefix}.lq.png", "--json"]) == EXIT_OK
    estimate = json.loads(capsys.readouterr().out)
    assert estimate["period_hat"] == pytest.approx(24, rel=0.05)
    assert abs(estimate["theta_hat"] - 0.1) < 0.03

    flat = Path(temp_dir) / "flat.png"
    Image.fromarray(np.full((96, 96, 3), 120, dtype=np.uint8)).save(flat)
    assert main(["estimate", str(flat)]) == EXIT_INVALID
    assert main(["estimate"]) == EXIT_INVALID


def test_estimate_manifest(temp_dir: str, src_dir: Path, ranges_path: Path, capsys: pytest.CaptureFixture):
    out_dir = Path(temp_dir) / "dataset"
    assert main(["batch", str(src_dir), str(out_dir), "--config", str(ranges_path)]) == EXIT_OK
    capsys.readouterr()

    assert main(["estimate", "--manifest", str(out_dir / "manifest.jsonl"), "--json"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["n_records"] == 3
    assert (out_dir / "qa.csv").is_file()


def test_evaluate(temp_dir: str, src_dir: Path, ranges_path: Path, capsys: pytest.CaptureFixture):
    out_dir = Path(temp_dir) / "dataset"
    report_dir = Path(temp_dir) / "report"
    assert main(["batch", str(src_dir), str(out_dir), "--config", str(ranges_path)]) == EXIT_OK
    capsys.readouterr()

    args = ["evaluate", "--manifest", str(out_dir / "manifest.jsonl"), "--out", str(report_dir), "--json"]
    assert main(args) == EXIT_OK
    aggregate = json.loads(capsys.readouterr().out)
    assert aggregate["masked_pixel"] > 0
    assert np.isfinite(aggregate["psnr"])
    assert (report_dir / "report.csv").is_file()

    assert main(["evaluate", "--out", str(report_dir)]) == EXIT_INVALID
    missing = ["evaluate", "--pred-dir", "a", "--gt-dir", "b", "--mask-dir", "c", "--out", str(report_dir)]
    assert main(missing) == EXIT_IO
