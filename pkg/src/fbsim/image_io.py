"""8-bit PNG codec, atomic writes and SHA-256 digests."""

from __future__ import annotations

import hashlib
import io
import os
import tempfile
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from fbsim.colorspace import RgbImage
from fbsim.exceptions import ImageReadError
from fbsim.mask import FlickerMask

PathLike = Union[str, os.PathLike]


def quantize(values: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(values, 0.0, 1.0) * 255).astype(np.uint8)


def dequantize(values: np.ndarray) -> np.ndarray:
    return values.astype(np.float64) / 255


def encode_png(array: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(array).save(buffer, format="PNG")
    return buffer.getvalue()


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    """Write `data` to a temp file next to `path`, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(dir=path.parent, prefix=f".{path.name}.", delete=False) as tmp_file:
        tmp_file.write(data)
        tmp_name = tmp_file.name
    try:
        os.replace(tmp_name, path)
    except OSError:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _open_array(path: PathLike, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            return np.asarray(img.convert(mode))
    except (OSError, UnidentifiedImageError, ValueError) as e:
        msg = f"Cannot decode image {path}: {e}"
        raise ImageReadError(msg) from e


def load_rgb_u8(path: PathLike) -> np.ndarray:
    return _open_array(path, "RGB")


def load_rgb(path: PathLike) -> RgbImage:
    return RgbImage(pixels=dequantize(load_rgb_u8(path)))


def save_rgb(img: RgbImage, path: PathLike) -> None:
    atomic_write_bytes(path, encode_png(quantize(img.pixels)))


def load_gray(path: PathLike) -> np.ndarray:
    """Single-channel image as floats in [0, 1]."""
    return dequantize(_open_array(path, "L"))


def save_mask_png(mask: FlickerMask, path: PathLike) -> None:
    """Store a mask as 8-bit grayscale, `round(255 * m)`."""
    atomic_write_bytes(path, encode_png(quantize(mask.values)))


def load_mask_png(path: PathLike) -> FlickerMask:
    return FlickerMask(values=load_gray(path))


def tree_digest(root: PathLike) -> str:
    """Digest of every file below `root`: each relative path followed by the SHA-256 of its bytes.

    Two output trees compare equal exactly when they hold the same files with the
    same content, which is how batch runs are checked for byte-identical output.
    """
    root = Path(root)
    hasher = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        hasher.update(path.relative_to(root).as_posix().encode("utf-8"))
        hasher.update(hashlib.sha256(path.read_bytes()).digest())
    return hasher.hexdigest()
