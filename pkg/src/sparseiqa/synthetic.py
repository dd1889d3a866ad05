"""Synthetic textured images for desk-scale experiments and fixtures.

Multi-octave smooth noise plus oriented gratings and a few hard-edged
shapes gives patch statistics rich enough to train a small decoder
without any external corpus.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def _smooth_noise(rng, h: int, w: int, scale: int) -> np.ndarray:
    """Bilinear upsampling of coarse Gaussian noise; one (h, w, 3) octave."""
    ch = max(2, -(-h // scale) + 1)
    cw = max(2, -(-w // scale) + 1)
    coarse = rng.standard_normal((ch, cw, 3))
    ys = np.linspace(0, ch - 1, h)
    xs = np.linspace(0, cw - 1, w)
    y0 = np.clip(ys.astype(int), 0, ch - 2)
    x0 = np.clip(xs.astype(int), 0, cw - 2)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    c00 = coarse[y0][:, x0]
    c01 = coarse[y0][:, x0 + 1]
    c10 = coarse[y0 + 1][:, x0]
    c11 = coarse[y0 + 1][:, x0 + 1]
    return (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
            + c10 * fy * (1 - fx) + c11 * fy * fx)


def synth_image(seed, height: int = 96, width: int = 128) -> np.ndarray:
    """One (height, width, 3) uint8 RGB image with mixed-scale structure."""
    rng = np.random.default_rng(seed)
    img = 0.5 + 0.22 * _smooth_noise(rng, height, width, 32)
    img += 0.14 * _smooth_noise(rng, height, width, 8)
    img += 0.08 * _smooth_noise(rng, height, width, 3)

    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(rng.integers(2, 5)):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.15, 0.9)
        phase = rng.uniform(0, 2 * np.pi)
        grating = np.sin(freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        amp = rng.uniform(0.03, 0.10)
        img += amp * grating[:, :, None] * rng.uniform(0.3, 1.0, size=3)

    for _ in range(rng.integers(2, 6)):
        r0, c0 = rng.integers(0, height), rng.integers(0, width)
        rh = rng.integers(height // 8, height // 2)
        rw = rng.integers(width // 8, width // 2)
        shift = rng.uniform(-0.25, 0.25, size=3)
        img[r0:r0 + rh, c0:c0 + rw] += shift

    img += 0.02 * rng.standard_normal(img.shape)
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def make_corpus(directory: str | Path, count: int, seed=0,
                height: int = 96, width: int = 128) -> list[Path]:
    """Write `count` synthetic PNGs into `directory`; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    root = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        arr = synth_image(root.integers(0, 2**63 - 1), height=height, width=width)
        path = directory / f"img_{i:04d}.png"
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
        paths.append(path)
    return paths
