"""Image-to-patch preprocessing.

Turns 8-bit RGB images into whitened 192-dimensional patch vectors.  The
pipeline keeps three planes per image (G straight from RGB, plus Y and Cr
from a BT.601 full-range conversion), cuts 8x8 patches out of each plane,
concatenates the three row-major rasters into one column of length
3 * 64 = 192, and decorrelates the columns with patch-wise mean
subtraction followed by ZCA whitening.

Whitening statistics are fit once on a training batch and reused verbatim
on test patches; they travel with the trained model.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

PATCH_SIZE = 8
PATCH_DIM = 3 * PATCH_SIZE * PATCH_SIZE  # 192

# BT.601 luma weights; chroma denominators are 2*(1 - K_b) and 2*(1 - K_r).
_KR, _KG, _KB = 0.299, 0.587, 0.114


@dataclass(frozen=True)
class ChannelImage:
    """The three retained planes of one image, each in [0, 1].

    Attributes
    ----------
    g_plane, y_plane, cr_plane : (H, W) float64 arrays sharing one shape.
    """

    g_plane: np.ndarray
    y_plane: np.ndarray
    cr_plane: np.ndarray

    def __post_init__(self):
        if not (self.g_plane.shape == self.y_plane.shape == self.cr_plane.shape):
            raise ValueError("channel planes must share one shape")
        if self.g_plane.ndim != 2:
            raise ValueError("channel planes must be 2-D")

    @property
    def height(self) -> int:
        return self.g_plane.shape[0]

    @property
    def width(self) -> int:
        return self.g_plane.shape[1]


@dataclass(frozen=True)
class PatchBatch:
    """Column-stacked patch vectors, shape (192, M).

    Each column is the concatenation, in fixed (G, Y, Cr) order, of three
    row-major 8x8 rasters.  The order is a public contract: columns can be
    split back into the original rasters exactly.
    """

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] != PATCH_DIM:
            raise ValueError(
                f"patch batch must have {PATCH_DIM} rows, got shape {self.data.shape}"
            )

    @property
    def count(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class NormalizationStats:
    """Per-location mean and symmetric ZCA transform fit on training patches."""

    mean: np.ndarray     # (192,)
    zca: np.ndarray      # (192, 192), symmetric
    epsilon: float

    def __post_init__(self):
        if self.mean.ndim != 1 or self.zca.shape != (self.mean.size, self.mean.size):
            raise ValueError("inconsistent normalization stat shapes")


def select_channels(rgb_image: np.ndarray) -> ChannelImage:
    """Pick the G, Y and Cr planes of an 8-bit RGB image, scaled to [0, 1].

    Y and Cr come from the BT.601 full-range transform, so achromatic
    pixels map to Cr = 0.5 and the planes span the whole unit interval.

    Parameters
    ----------
    rgb_image : (H, W, 3) uint8 array, H and W both >= 8.

    Raises
    ------
    ValueError
        For grayscale or alpha-carrying inputs (channel count != 3) and
        for images smaller than 8x8.
    """
    arr = np.asarray(rgb_image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        n = 1 if arr.ndim == 2 else arr.shape[-1]
        raise ValueError(f"expected 3 channels, got {n}; grayscale/alpha inputs are rejected")
    if arr.shape[0] < PATCH_SIZE or arr.shape[1] < PATCH_SIZE:
        raise ValueError(f"image {arr.shape[0]}x{arr.shape[1]} is smaller than 8x8")

    rgb = arr.astype(np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = _KR * r + _KG * g + _KB * b
    cr = (r - y) / (2.0 * (1.0 - _KR)) + 0.5
    return ChannelImage(g_plane=g, y_plane=y, cr_plane=cr)


def load_channel_image(path: str | Path) -> ChannelImage:
    """Read a PNG/JPEG/BMP file and select its G, Y, Cr planes."""
    with Image.open(path) as img:
        if img.mode == "P" and "transparency" not in img.info:
            img = img.convert("RGB")
        if img.mode != "RGB":
            raise ValueError(
                f"{path}: mode {img.mode!r} is not plain RGB; "
                "grayscale/alpha inputs are rejected"
            )
        arr = np.asarray(img, dtype=np.uint8)
    return select_channels(arr)


def _patches_at(image: ChannelImage, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Gather 8x8 patches whose top-left corners are (rows[i], cols[i])."""
    rr = rows[:, None, None] + np.arange(PATCH_SIZE)[None, :, None]
    cc = cols[:, None, None] + np.arange(PATCH_SIZE)[None, None, :]
    parts = [
        plane[rr, cc].reshape(rows.size, PATCH_SIZE * PATCH_SIZE)
        for plane in (image.g_plane, image.y_plane, image.cr_plane)
    ]
    return np.concatenate(parts, axis=1).T.copy()  # (192, M)


def sample_random_patches(image: ChannelImage, count: int, seed) -> PatchBatch:
    """Sample `count` random 8x8 patches, uniform over valid corner positions.

    `seed` may be anything `np.random.default_rng` accepts, including an
    existing Generator (so a caller can sample across many images from one
    stream).  Same image + same seed gives bit-identical batches.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    h, w = image.height, image.width
    if h < PATCH_SIZE or w < PATCH_SIZE:
        raise ValueError(f"image {h}x{w} is smaller than 8x8")
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, h - PATCH_SIZE + 1, size=count)
    cols = rng.integers(0, w - PATCH_SIZE + 1, size=count)
    return PatchBatch(_patches_at(image, rows, cols))


def tile_nonoverlapping(image: ChannelImage) -> PatchBatch:
    """Tile the image into floor(H/8) x floor(W/8) patches, row-major.

    Right/bottom remainder strips are discarded, never padded.  Pure and
    order-stable: the same image always yields the identical batch.
    """
    h, w = image.height, image.width
    if h < PATCH_SIZE or w < PATCH_SIZE:
        raise ValueError(f"image {h}x{w} is smaller than 8x8")
    nh, nw = h // PATCH_SIZE, w // PATCH_SIZE
    rows = np.repeat(np.arange(nh), nw) * PATCH_SIZE
    cols = np.tile(np.arange(nw), nh) * PATCH_SIZE
    return PatchBatch(_patches_at(image, rows, cols))


def fit_normalization(batch: PatchBatch, epsilon: float = 0.1) -> NormalizationStats:
    """Fit the per-location mean and ZCA whitening transform.

    The transform is U (L + eps I)^(-1/2) U^T from the eigendecomposition
    of the centered sample covariance C = Xc Xc^T / M (population
    normalization, so whitening its own batch with eps = 0 yields exactly
    the identity covariance).

    Raises
    ------
    ValueError
        Non-finite inputs, epsilon < 0, or a covariance that is rank
        deficient while epsilon == 0 (including M < 192 by construction).
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    x = batch.data
    if not np.all(np.isfinite(x)):
        raise ValueError("patch batch contains non-finite values")
    d, m = x.shape
    if epsilon == 0 and m < d:
        raise ValueError(f"need at least {d} patches for epsilon=0, got {m}")

    mean = x.mean(axis=1)
    xc = x - mean[:, None]
    cov = (xc @ xc.T) / m
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, 0.0)
    if epsilon == 0 and evals.min() <= evals.max() * 1e-10:
        raise ValueError("covariance is rank deficient; whitening with epsilon=0 is unbounded")

    zca = (evecs / np.sqrt(evals + epsilon)) @ evecs.T
    zca = 0.5 * (zca + zca.T)  # kill rounding asymmetry
    return NormalizationStats(mean=mean, zca=zca, epsilon=float(epsilon))


def apply_normalization(batch: PatchBatch, stats: NormalizationStats) -> PatchBatch:
    """Whiten a batch with previously fit stats: zca @ (column - mean)."""
    if batch.data.shape[0] != stats.mean.size:
        raise ValueError(
            f"batch rows {batch.data.shape[0]} != stats dimension {stats.mean.size}"
        )
    return PatchBatch(stats.zca @ (batch.data - stats.mean[:, None]))
