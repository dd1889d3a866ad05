#!/usr/bin/env python3
"""End-to-end desk-scale experiment, no external data required.

Builds a synthetic corpus, trains a 100-unit decoder on 10,000 patches,
then scores blur and noise distortion ladders against clean references to
show the monotone score decay.  Takes a couple of minutes.

Usage: python scripts/run_desk_scale.py [--workdir DIR] [--hidden 100]
"""

import argparse
import tempfile
import time
from pathlib import Path

import numpy as np
from PIL import Image, ImageFilter

from sparseiqa import (DecoderHyperparams, apply_normalization,
                       fit_normalization, load_channel_image, quality_score,
                       sample_random_patches, save_model, select_channels,
                       train)
from sparseiqa.decoder import export_filter_grid
from sparseiqa.preprocess import PatchBatch
from sparseiqa.synthetic import make_corpus, synth_image


def blur(arr, sigma):
    img = Image.fromarray(arr, "RGB").filter(ImageFilter.GaussianBlur(sigma))
    return np.asarray(img)


def noise(arr, variance, seed):
    rng = np.random.default_rng(seed)
    f = arr.astype(np.float64) / 255.0 + rng.normal(0, np.sqrt(variance), arr.shape)
    return np.clip(np.round(f * 255), 0, 255).astype(np.uint8)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default=None)
    parser.add_argument("--images", type=int, default=50)
    parser.add_argument("--patches-per-image", type=int, default=200)
    parser.add_argument("--hidden", type=int, default=100)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    workdir = Path(args.workdir or tempfile.mkdtemp(prefix="sparseiqa_"))
    corpus = workdir / "corpus"
    print(f"workdir: {workdir}")

    paths = make_corpus(corpus, args.images, seed=11)
    rng = np.random.default_rng(args.seed)
    cols = [sample_random_patches(load_channel_image(p), args.patches_per_image, rng).data
            for p in paths]
    raw = PatchBatch(np.concatenate(cols, axis=1))
    print(f"sampled {raw.count} patches from {len(paths)} images")

    stats = fit_normalization(raw, epsilon=0.1)
    whitened = apply_normalization(raw, stats)
    hp = DecoderHyperparams(n_hidden=args.hidden)
    start = time.monotonic()
    model, trace = train(whitened, hp, stats=stats, seed=args.seed)
    print(f"trained in {time.monotonic() - start:.0f}s: "
          f"objective {trace.objective[0]:.1f} -> {trace.objective[-1]:.3f}, "
          f"mean activation {trace.rho_hat_mean[-1]:.4f}")

    save_model(model, workdir / "model.siq",
               provenance={"seed": args.seed, "patch_count": raw.count})
    trace.to_csv(workdir / "trace.csv")
    export_filter_grid(model, workdir / "filters.png")

    sigmas = (0.5, 1.0, 2.0, 4.0)
    variances = (0.001, 0.004, 0.016, 0.064)
    print("\nimage         blur sigma: " + "  ".join(f"{s:>7}" for s in sigmas)
          + "   noise var: " + "  ".join(f"{v:>7}" for v in variances))
    for i in range(5):
        arr = synth_image(1000 + i, 96, 96)
        ref = select_channels(arr)
        bs = [quality_score(model, ref, select_channels(blur(arr, s))).value
              for s in sigmas]
        ns = [quality_score(model, ref, select_channels(noise(arr, v, 50 + i))).value
              for v in variances]
        print(f"synthetic-{i}              "
              + "  ".join(f"{v:7.4f}" for v in bs) + "              "
              + "  ".join(f"{v:7.4f}" for v in ns))
    print(f"\nartifacts in {workdir}: model.siq, trace.csv, filters.png")


if __name__ == "__main__":
    main()
