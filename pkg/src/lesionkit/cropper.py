"""Training augmentation and deterministic multi-crop evaluation.

Images are ``H x W x 3`` float arrays in ``[0, 1]``.  Crops are always
unscaled, pixel-exact windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _io
from .errors import CropTooLarge, EmptyInput, NonSquareR, ValidationError

OFFSETS_HEADER = ("crop_index", "row", "col")

# ITU-R BT.601 luma
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class CropGrid:
    crop: int
    offsets: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.offsets)


def _check_crop(H: int, W: int, crop: int) -> None:
    if crop < 1:
        raise ValidationError(f"crop size must be positive, got {crop}")
    if crop > min(H, W):
        raise CropTooLarge(f"crop {crop} does not fit a {H}x{W} image")


def crop_grid(H: int, W: int, crop: int, R: int) -> CropGrid:
    """``sqrt(R) x sqrt(R)`` grid of top-left offsets, rounded linspace per axis.

    Offsets are ordered row-major: crop index ``a * sqrt(R) + b`` sits at row
    offset ``a`` and column offset ``b``.
    """
    _check_crop(H, W, crop)
    side = math.isqrt(R) if R > 0 else 0
    if R < 1 or side * side != R:
        raise NonSquareR(f"crop count {R} is not a perfect square")
    rows = np.rint(np.linspace(0, H - crop, side)).astype(int).tolist()
    cols = np.rint(np.linspace(0, W - crop, side)).astype(int).tolist()
    return CropGrid(crop, tuple((r, c) for r in rows for c in cols))


def extract_crops(img: np.ndarray, grid: CropGrid) -> list[np.ndarray]:
    img = np.asarray(img)
    H, W = img.shape[:2]
    _check_crop(H, W, grid.crop)
    k = grid.crop
    out = []
    for r, c in grid.offsets:
        if not (0 <= r <= H - k and 0 <= c <= W - k):
            raise CropTooLarge(f"offset ({r}, {c}) puts a {k}px crop outside a {H}x{W} image")
        out.append(img[r : r + k, c : c + k].copy())
    return out


def adjust_saturation(img: np.ndarray, scale: float) -> np.ndarray:
    """Interpolate every pixel between its luma gray and itself."""
    gray = (img @ LUMA)[..., None]
    return gray + scale * (img - gray)


def augment(
    img: np.ndarray,
    crop: int,
    rng: np.random.Generator,
    brightness_delta: float = 0.1,
    saturation_range: tuple[float, float] = (0.8, 1.2),
    means: Sequence[float] = (0.0, 0.0, 0.0),
    flip_prob: float = 0.5,
) -> np.ndarray:
    """Random training crop.

    Steps, in order: uniform random window, independent flips on both axes,
    additive brightness shift, saturation scaling, per-channel mean
    subtraction.  The image is clamped to ``[0, 1]`` after the brightness and
    saturation steps.  Random draws happen in a fixed order (row, col,
    vertical flip, horizontal flip, brightness, saturation) so a seeded
    generator reproduces the output exactly.
    """
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape[:2]
    _check_crop(H, W, crop)
    r = int(rng.integers(0, H - crop + 1))
    c = int(rng.integers(0, W - crop + 1))
    flip_v = rng.random() < flip_prob
    flip_h = rng.random() < flip_prob
    shift = rng.uniform(-brightness_delta, brightness_delta)
    scale = rng.uniform(saturation_range[0], saturation_range[1])

    out = img[r : r + crop, c : c + crop]
    if flip_v:
        out = out[::-1]
    if flip_h:
        out = out[:, ::-1]
    out = np.clip(out + shift, 0.0, 1.0)
    out = np.clip(adjust_saturation(out, scale), 0.0, 1.0)
    return out - np.asarray(means, dtype=np.float64)


def channel_means(images: Sequence[np.ndarray]) -> np.ndarray:
    """Per-channel mean over a training set."""
    if len(images) == 0:
        raise EmptyInput("no images")
    sums = np.zeros(3)
    n = 0
    for im in images:
        sums += np.asarray(im).reshape(-1, 3).sum(axis=0)
        n += im.shape[0] * im.shape[1]
    return sums / n


def aggregate_mean(preds: np.ndarray) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 2 or preds.shape[0] == 0:
        raise EmptyInput("need a non-empty R x C prediction matrix")
    return preds.mean(axis=0)


def flatten_crops(preds: np.ndarray) -> np.ndarray:
    """Crop-major flattening: ``out[r * C + c] = preds[r, c]``."""
    return np.ascontiguousarray(preds, dtype=np.float64).reshape(-1)


def unflatten_crops(vec: np.ndarray, n_classes: int) -> np.ndarray:
    return np.asarray(vec, dtype=np.float64).reshape(-1, n_classes)


def save_offsets(grid: CropGrid, path) -> None:
    _io.write_csv(path, OFFSETS_HEADER, [(i, r, c) for i, (r, c) in enumerate(grid.offsets)])


def load_offsets(path, crop: int) -> CropGrid:
    _, rows = _io.read_rows(path, OFFSETS_HEADER)
    rows = sorted((int(x["crop_index"]), int(x["row"]), int(x["col"])) for x in rows)
    return CropGrid(crop, tuple((r, c) for _, r, c in rows))
