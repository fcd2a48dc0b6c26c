"""Image I/O and the one resampling routine every module shares."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import EmptyImage, EmptyVideo, MissingFile

NEUTRAL = 0.5
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def load_image(path) -> np.ndarray:
    """8-bit RGB file -> float32 array in [0, 1], shape (H, W, 3)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise EmptyImage(f"{path}: {exc}") from None
    return arr.astype(np.float32) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(image: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = to_uint8(image)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so that save/load round-trips exactly."""
    return to_uint8(image).astype(np.float32) / 255.0


def list_frames(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingFile(str(directory))
    frames = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not frames:
        raise EmptyVideo(f"no frame images in {directory}")
    return frames


def save_frames(frames, directory) -> list[Path]:
    directory = Path(directory)
    paths = []
    for i, frame in enumerate(frames):
        p = directory / f"frame_{i:06d}.png"
        save_image(frame, p)
        paths.append(p)
    return paths


def _axis_coords(n_in: int, n_out: int):
    if n_out == 1 or n_in == 1:
        src = np.zeros(n_out)
    else:
        src = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
    lo = np.floor(src).astype(np.int64)
    lo = np.clip(lo, 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resampling with corner-aligned sample positions.

    Output pixel ``i`` samples input coordinate ``i * (H - 1) / (H' - 1)``, so
    the four corners map onto the four corners and an equal-size resize is the
    identity. Works on (H, W) and (H, W, C) arrays.
    """
    image = np.asarray(image)
    if image.ndim < 2 or image.shape[0] == 0 or image.shape[1] == 0:
        raise EmptyImage(f"image shape {image.shape}")
    out_h, out_w = int(size[0]), int(size[1])
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad output size {size}")
    h, w = image.shape[:2]
    if (h, w) == (out_h, out_w):
        return image.copy()
    dtype = image.dtype if np.issubdtype(image.dtype, np.floating) else np.float64
    img = image.astype(np.float64, copy=False)
    r0, r1, fr = _axis_coords(h, out_h)
    c0, c1, fc = _axis_coords(w, out_w)
    tail = (1,) * (img.ndim - 2)
    fr = fr.reshape((out_h, 1) + tail)
    fc = fc.reshape((1, out_w) + tail)
    rows_lo, rows_hi = img[r0], img[r1]
    top = rows_lo[:, c0] * (1 - fc) + rows_lo[:, c1] * fc
    bot = rows_hi[:, c0] * (1 - fc) + rows_hi[:, c1] * fc
    return (top * (1 - fr) + bot * fr).astype(dtype)
