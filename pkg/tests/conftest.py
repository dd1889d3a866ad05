"""Shared fixtures: synthetic corpus, desk-scale trained model, toy images."""

import os
import time

import numpy as np
import pytest
from hypothesis import settings

from sparseiqa import (DecoderHyperparams, apply_normalization,
                       fit_normalization, load_channel_image,
                       sample_random_patches, select_channels, train)
from sparseiqa.preprocess import PatchBatch
from sparseiqa.synthetic import make_corpus, synth_image

settings.register_profile("default", deadline=None)
settings.register_profile("ci", deadline=None, max_examples=25)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


def sample_corpus_patches(paths, per_image, seed):
    rng = np.random.default_rng(seed)
    cols = [sample_random_patches(load_channel_image(p), per_image, rng).data
            for p in paths]
    return PatchBatch(np.concatenate(cols, axis=1))


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    """50 synthetic textured PNGs, 96x128."""
    root = tmp_path_factory.mktemp("corpus")
    return make_corpus(root, 50, seed=11)


@pytest.fixture(scope="session")
def desk_model(fixture_corpus):
    """The desk-scale recipe: 50 images, 10,000 patches, 100 hidden units,
    defaults otherwise.  Returns (model, trace, train_seconds)."""
    raw = sample_corpus_patches(fixture_corpus, per_image=200, seed=7)
    assert raw.count == 10_000
    stats = fit_normalization(raw, epsilon=0.1)
    whitened = apply_normalization(raw, stats)
    start = time.monotonic()
    model, trace = train(whitened, DecoderHyperparams(n_hidden=100), stats=stats, seed=7)
    elapsed = time.monotonic() - start
    return model, trace, elapsed


@pytest.fixture(scope="session")
def mini_model(fixture_corpus):
    """A small fast model for plumbing tests (not the acceptance recipe)."""
    raw = sample_corpus_patches(fixture_corpus[:12], per_image=150, seed=3)
    stats = fit_normalization(raw, epsilon=0.1)
    whitened = apply_normalization(raw, stats)
    hp = DecoderHyperparams(n_hidden=30, max_iterations=120)
    model, _ = train(whitened, hp, stats=stats, seed=3)
    return model


@pytest.fixture(scope="session")
def fixture_images():
    """Ten 64x64 synthetic ChannelImages."""
    return [select_channels(synth_image(2000 + i, 64, 64)) for i in range(10)]
