"""Pair scoring: compare sparse representations of reference and distorted images.

Both images are tiled into non-overlapping 8x8 patches, whitened with the
model's training-time stats, and encoded.  Activations well below the
vector's own mean are zeroed (suppression), and the two flattened vectors
are compared with Spearman rank correlation; the reported score is the
correlation raised to the 10th power, which stretches the usable range
toward [0, 1].

Note the 10th power maps a correlation of -1 to a perfect score; the raw
correlation is surfaced alongside the score so callers can detect that.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .decoder import DecoderModel, encode
from .preprocess import ChannelImage, apply_normalization, tile_nonoverlapping

SCORE_EXPONENT = 10


@dataclass(frozen=True)
class SuppressionPolicy:
    """How to decide which activations count as suppressed.

    mode "mean_relative" zeroes entries below tau * mean(values); mode
    "absolute" zeroes entries below a fixed threshold.
    """

    mode: str = "mean_relative"
    tau: float = 0.5
    threshold: float = 0.0

    def __post_init__(self):
        if self.mode not in ("mean_relative", "absolute"):
            raise ValueError(f"unknown suppression mode {self.mode!r}")

    @classmethod
    def mean_relative(cls, tau: float = 0.5) -> "SuppressionPolicy":
        return cls(mode="mean_relative", tau=tau)

    @classmethod
    def absolute(cls, threshold: float) -> "SuppressionPolicy":
        return cls(mode="absolute", threshold=threshold)


@dataclass(frozen=True)
class SparseRepresentation:
    """Flattened hidden activations of one image, patch-major.

    values[k * n_hidden : (k+1) * n_hidden] are the activations of patch k.
    All entries lie in [0, 1]; exact zeros appear after suppression.
    `degenerate` flags an all-zero input that suppression left unchanged.
    """

    values: np.ndarray
    n_hidden: int
    patch_count: int
    degenerate: bool = False

    def __post_init__(self):
        if self.values.shape != (self.n_hidden * self.patch_count,):
            raise ValueError("representation length != n_hidden * patch_count")


@dataclass(frozen=True)
class QualityScore:
    """Final score (spearman_raw ** 10, in [0, 1]) plus the raw correlation."""

    value: float
    spearman_raw: float


def represent(model: DecoderModel, image: ChannelImage) -> SparseRepresentation:
    """Encode an image: tile, whiten with the model's stored stats, flatten."""
    if model.stats is None:
        raise ValueError("model carries no normalization stats; cannot represent images")
    batch = apply_normalization(tile_nonoverlapping(image), model.stats)
    acts = encode(model, batch)  # (n_hidden, patches)
    return SparseRepresentation(
        values=np.ascontiguousarray(acts.T).ravel(),
        n_hidden=acts.shape[0],
        patch_count=acts.shape[1],
    )


def suppress(rep: SparseRepresentation,
             policy: SuppressionPolicy = SuppressionPolicy()) -> SparseRepresentation:
    """Zero every entry below the policy threshold; other entries pass through.

    The mean-relative threshold is computed once, from the input vector,
    before any zeroing.  An all-zero input comes back unchanged with its
    `degenerate` flag set.
    """
    values = rep.values
    if not np.any(values):
        return replace(rep, degenerate=True)
    if policy.mode == "mean_relative":
        cut = policy.tau * float(values.mean())
    else:
        cut = policy.threshold
    out = np.where(values < cut, 0.0, values)
    return replace(rep, values=out)


def _average_ranks(v: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean of their positions."""
    _, inverse, counts = np.unique(v, return_inverse=True, return_counts=True)
    starts = np.cumsum(counts) - counts
    return (starts + (counts + 1) / 2.0)[inverse]


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    """Spearman rank correlation: Pearson correlation of fractional ranks.

    Ties receive average ranks.  Identical inputs return exactly 1.0.
    Constant inputs are rejected (the statistic is undefined).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least 2 elements")
    for name, v in (("first", a), ("second", b)):
        if np.all(v == v[0]):
            raise ValueError(f"{name} input is constant; Spearman is undefined")
    ra = _average_ranks(a)
    rb = _average_ranks(b)
    if np.array_equal(ra, rb):
        return 1.0
    da = ra - ra.mean()
    db = rb - rb.mean()
    r = float(da @ db) / (np.sqrt(float(da @ da)) * np.sqrt(float(db @ db)))
    return float(np.clip(r, -1.0, 1.0))


def quality_score(
    model: DecoderModel,
    reference: ChannelImage,
    distorted: ChannelImage,
    policy: SuppressionPolicy = SuppressionPolicy(),
) -> QualityScore:
    """Score a (reference, distorted) pair with a trained model.

    Images must have identical dimensions (no silent resampling).
    Symmetric in its two image arguments; identical images score exactly 1.
    """
    if (reference.height, reference.width) != (distorted.height, distorted.width):
        raise ValueError(
            f"image size mismatch: reference {reference.height}x{reference.width} "
            f"vs distorted {distorted.height}x{distorted.width}"
        )
    rep_ref = suppress(represent(model, reference), policy)
    rep_dist = suppress(represent(model, distorted), policy)
    for name, rep in (("reference", rep_ref), ("distorted", rep_dist)):
        v = rep.values
        if np.all(v == v.flat[0]):
            raise ValueError(f"{name} image degenerated to a constant representation "
                             "after suppression; Spearman is undefined")
    raw = spearman(rep_ref.values, rep_dist.values)
    return QualityScore(value=raw ** SCORE_EXPONENT, spearman_raw=raw)
