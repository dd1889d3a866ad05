"""Sparse linear decoder: sigmoid encoder, linear reconstruction.

The model maps a whitened patch p to hidden activations
s = sigmoid(w1 @ p + b1) and reconstructs it linearly as w2 @ s + b2.
Training minimizes, jointly over (w1, b1, w2, b2),

    J = (1/2M) sum_i ||w2 @ s_i + b2 - p_i||^2
        + beta * sum_j KL(rho || rho_hat_j)
        + lambda * (||w1||_F^2 + ||w2||_F^2)

where rho_hat_j is the mean activation of hidden unit j over the batch
and KL is the Bernoulli divergence that pulls every unit toward the small
target rate rho.  Minimization uses full-batch L-BFGS, so rho_hat is
recomputed from the whole batch at every objective evaluation.

The hidden layer is overcomplete (default 400 units for 192 inputs); the
output layer is linear, not sigmoid, so whitened targets outside [0, 1]
are representable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .lbfgs import lbfgs_minimize
from .preprocess import PATCH_SIZE, NormalizationStats, PatchBatch

_RHO_HAT_FLOOR = 1e-8  # saturation guard for the training path


class SaturatedUnitError(ValueError):
    """A hidden unit's mean activation hit exactly 0 or 1, so KL is undefined."""

    def __init__(self, unit: int, value: float):
        self.unit = unit
        self.value = value
        super().__init__(f"hidden unit {unit} saturated: mean activation is exactly {value}")


@dataclass(frozen=True)
class DecoderHyperparams:
    """Training knobs; defaults follow the 400-unit recipe."""

    n_hidden: int = 400
    rho: float = 0.035          # target mean activation per hidden unit
    beta: float = 5.0           # sparsity penalty weight
    weight_decay: float = 3e-3  # lambda; applies to w1 and w2, never biases
    max_iterations: int = 400
    lbfgs_memory: int = 10

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError("rho must be in (0, 1)")
        if self.beta < 0 or self.weight_decay < 0:
            raise ValueError("beta and weight_decay must be >= 0")
        if self.n_hidden < 1:
            raise ValueError("n_hidden must be >= 1")


@dataclass
class DecoderModel:
    """Trained encoder/decoder weights plus the preprocessing stats they expect.

    w1 is stored (n_hidden, n_inputs) so the hidden pre-activation is
    simply w1 @ p + b1.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    hyperparams: DecoderHyperparams
    stats: NormalizationStats | None = None

    def __post_init__(self):
        n_hidden, n_in = self.w1.shape
        if self.b1.shape != (n_hidden,) or self.w2.shape != (n_in, n_hidden) \
                or self.b2.shape != (n_in,):
            raise ValueError("decoder weight shapes are mutually inconsistent")
        if n_hidden != self.hyperparams.n_hidden:
            raise ValueError(
                f"w1 has {n_hidden} hidden units but hyperparams say "
                f"{self.hyperparams.n_hidden}"
            )
        for name in ("w1", "b1", "w2", "b2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def n_inputs(self) -> int:
        return self.w1.shape[1]


@dataclass
class TrainingTrace:
    """Per-iteration objective decomposition, exportable as CSV."""

    iteration: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    reconstruction: list = field(default_factory=list)
    sparsity: list = field(default_factory=list)
    decay: list = field(default_factory=list)
    rho_hat_mean: list = field(default_factory=list)
    rho_hat_min: list = field(default_factory=list)
    rho_hat_max: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    line_search_failed: bool = False
    stop_reason: str = ""

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["iteration", "objective", "reconstruction", "sparsity", "decay",
                 "rho_hat_mean", "rho_hat_min", "rho_hat_max"]
            )
            for row in zip(self.iteration, self.objective, self.reconstruction,
                           self.sparsity, self.decay, self.rho_hat_mean,
                           self.rho_hat_min, self.rho_hat_max):
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _as_array(batch) -> np.ndarray:
    data = batch.data if isinstance(batch, PatchBatch) else np.asarray(batch, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("batch must be a 2-D (dim, count) array")
    return data


def encode(model: DecoderModel, whitened_batch) -> np.ndarray:
    """Hidden activations sigmoid(w1 @ p + b1), column per patch.

    Outputs lie strictly inside (0, 1) for moderate pre-activations
    (float64 saturates to exact 0/1 beyond |z| ~ 37).
    """
    x = _as_array(whitened_batch)
    if x.shape[0] != model.n_inputs:
        raise ValueError(f"batch rows {x.shape[0]} != model inputs {model.n_inputs}")
    return sigmoid(model.w1 @ x + model.b1[:, None])


def mean_activation(activations: np.ndarray) -> np.ndarray:
    """Per-unit mean activation over the batch: rho_hat_j = mean_i s[j, i]."""
    acts = np.asarray(activations, dtype=np.float64)
    if acts.ndim != 2 or acts.shape[1] < 1:
        raise ValueError("need a non-empty (n_hidden, M) activation matrix")
    return acts.mean(axis=1)


def kl_sparsity(rho: float, rho_hat: np.ndarray) -> float:
    """sum_j [rho log(rho/rho_hat_j) + (1-rho) log((1-rho)/(1-rho_hat_j))].

    Non-negative, zero iff every rho_hat_j equals rho.  Components must lie
    strictly inside (0, 1).
    """
    rho_hat = np.atleast_1d(np.asarray(rho_hat, dtype=np.float64))
    if not 0 < rho < 1:
        raise ValueError("rho must be in (0, 1)")
    bad = np.nonzero((rho_hat <= 0) | (rho_hat >= 1))[0]
    if bad.size:
        raise SaturatedUnitError(int(bad[0]), float(rho_hat[bad[0]]))
    return float(np.sum(rho * np.log(rho / rho_hat)
                        + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - rho_hat))))


def _pack(w1, b1, w2, b2) -> np.ndarray:
    return np.concatenate([w1.ravel(), b1, w2.ravel(), b2])


def _unpack(theta: np.ndarray, n_hidden: int, n_in: int):
    k = 0
    w1 = theta[k:k + n_hidden * n_in].reshape(n_hidden, n_in); k += n_hidden * n_in
    b1 = theta[k:k + n_hidden]; k += n_hidden
    w2 = theta[k:k + n_in * n_hidden].reshape(n_in, n_hidden); k += n_in * n_hidden
    b2 = theta[k:k + n_in]
    return w1, b1, w2, b2


def _objective_core(theta, x, hp: DecoderHyperparams, saturation_guard: bool):
    """Objective value, flat gradient and the term decomposition.

    With `saturation_guard` the mean activations are clamped into
    [1e-8, 1 - 1e-8] before the KL terms instead of raising, which keeps
    line searches alive; the clamp is reported in the returned terms.
    """
    n_hidden = hp.n_hidden
    n_in = x.shape[0]
    m = x.shape[1]
    w1, b1, w2, b2 = _unpack(theta, n_hidden, n_in)

    s = sigmoid(w1 @ x + b1[:, None])
    residual = (w2 @ s + b2[:, None]) - x
    recon = 0.5 / m * float(np.sum(residual * residual))

    rho_hat = s.mean(axis=1)
    clamped = False
    sparsity = 0.0
    if hp.beta > 0:
        if saturation_guard:
            guarded = np.clip(rho_hat, _RHO_HAT_FLOOR, 1.0 - _RHO_HAT_FLOOR)
            clamped = bool(np.any(guarded != rho_hat))
            rho_hat_kl = guarded
        else:
            bad = np.nonzero((rho_hat <= 0) | (rho_hat >= 1))[0]
            if bad.size:
                raise SaturatedUnitError(int(bad[0]), float(rho_hat[bad[0]]))
            rho_hat_kl = rho_hat
        rho = hp.rho
        sparsity = hp.beta * float(
            np.sum(rho * np.log(rho / rho_hat_kl)
                   + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - rho_hat_kl)))
        )

    lam = hp.weight_decay
    decay = lam * (float(np.sum(w1 * w1)) + float(np.sum(w2 * w2)))
    j = recon + sparsity + decay

    # backpropagation
    d2 = residual / m                                   # dJ_recon / d(w2 s + b2)
    gw2 = d2 @ s.T + 2.0 * lam * w2
    gb2 = d2.sum(axis=1)
    back = w2.T @ d2
    if hp.beta > 0:
        rho = hp.rho
        sp = (hp.beta / m) * (-rho / rho_hat_kl + (1.0 - rho) / (1.0 - rho_hat_kl))
        back = back + sp[:, None]
    d1 = back * s * (1.0 - s)
    gw1 = d1 @ x.T + 2.0 * lam * w1
    gb1 = d1.sum(axis=1)

    terms = {
        "reconstruction": recon,
        "sparsity": sparsity,
        "decay": decay,
        "rho_hat_mean": float(rho_hat.mean()),
        "rho_hat_min": float(rho_hat.min()),
        "rho_hat_max": float(rho_hat.max()),
        "clamped": clamped,
    }
    return j, _pack(gw1, gb1, gw2, gb2), terms


def objective(model: DecoderModel, batch, saturation_guard: bool = False):
    """Objective J and its flat gradient over (w1, b1, w2, b2).

    The gradient layout matches `_pack`: w1 row-major, then b1, w2
    row-major, then b2.  Raises SaturatedUnitError when a unit's mean
    activation is exactly 0 or 1 unless `saturation_guard` is set.
    """
    x = _as_array(batch)
    if x.shape[1] < 1:
        raise ValueError("batch must be non-empty")
    if x.shape[0] != model.n_inputs:
        raise ValueError(f"batch rows {x.shape[0]} != model inputs {model.n_inputs}")
    theta = _pack(model.w1, model.b1, model.w2, model.b2)
    j, grad, _ = _objective_core(theta, x, model.hyperparams, saturation_guard)
    return j, grad


def initial_parameters(n_hidden: int, n_in: int, seed) -> np.ndarray:
    """Seeded flat start vector: weights uniform in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    r = np.sqrt(6.0 / (n_in + n_hidden))
    w1 = rng.uniform(-r, r, size=(n_hidden, n_in))
    w2 = rng.uniform(-r, r, size=(n_in, n_hidden))
    return _pack(w1, np.zeros(n_hidden), w2, np.zeros(n_in))


def train(
    batch,
    hyperparams: DecoderHyperparams = DecoderHyperparams(),
    stats: NormalizationStats | None = None,
    seed=0,
    gtol: float = 1e-5,
    ftol: float = 1e-9,
) -> tuple[DecoderModel, TrainingTrace]:
    """Fit the decoder to an already-whitened batch with full-batch L-BFGS.

    Deterministic given the seed.  A stalled line search ends training at
    the best iterate found and flags the trace; a non-finite objective is
    a hard error.
    """
    x = _as_array(batch)
    if x.shape[1] < 1:
        raise ValueError("batch must be non-empty")
    n_in = x.shape[0]
    hp = hyperparams
    theta0 = initial_parameters(hp.n_hidden, n_in, seed)

    trace = TrainingTrace()
    last = {"theta": None, "terms": None}

    def f_and_grad(theta):
        j, grad, terms = _objective_core(theta, x, hp, saturation_guard=True)
        if not np.isfinite(j):
            raise ValueError("objective became non-finite during training")
        last["theta"] = theta
        last["terms"] = terms
        return j, grad

    def record(k, theta, f, gnorm):
        terms = last["terms"]
        if last["theta"] is not theta and not np.array_equal(last["theta"], theta):
            _, _, terms = _objective_core(theta, x, hp, saturation_guard=True)
        trace.iteration.append(k)
        trace.objective.append(f)
        trace.reconstruction.append(terms["reconstruction"])
        trace.sparsity.append(terms["sparsity"])
        trace.decay.append(terms["decay"])
        trace.rho_hat_mean.append(terms["rho_hat_mean"])
        trace.rho_hat_min.append(terms["rho_hat_min"])
        trace.rho_hat_max.append(terms["rho_hat_max"])
        if terms["clamped"] and "saturation clamp engaged" not in trace.warnings:
            trace.warnings.append("saturation clamp engaged")

    result = lbfgs_minimize(
        f_and_grad, theta0,
        memory=hp.lbfgs_memory, max_iter=hp.max_iterations,
        gtol=gtol, ftol=ftol, callback=record,
    )
    trace.stop_reason = result.stop_reason
    if result.line_search_failed:
        trace.line_search_failed = True
        trace.warnings.append("line search stalled; returning best iterate found")

    w1, b1, w2, b2 = (a.copy() for a in _unpack(result.x, hp.n_hidden, n_in))
    model = DecoderModel(w1=w1, b1=b1, w2=w2, b2=b2, hyperparams=hp, stats=stats)
    return model, trace


def export_filter_grid(model: DecoderModel, path: str | Path | None = None,
                       border: int = 1) -> np.ndarray:
    """Render every encoder row as an 8x8x3 tile in a near-square grid.

    Each row of w1 is split back into its G/Y/Cr rasters, contrast
    normalized per tile (flat tiles become mid-gray), and tiled with thin
    black separators.  Returns the uint8 image; also writes a PNG when
    `path` is given.  Qualitative inspection only.
    """
    n_hidden, n_in = model.w1.shape
    if n_in != 3 * PATCH_SIZE * PATCH_SIZE:
        raise ValueError(f"filter grid needs {3 * PATCH_SIZE * PATCH_SIZE}-dim inputs, got {n_in}")
    cols = int(np.ceil(np.sqrt(n_hidden)))
    rows = int(np.ceil(n_hidden / cols))
    cell = PATCH_SIZE + border
    canvas = np.zeros((rows * cell + border, cols * cell + border, 3), dtype=np.uint8)
    for j in range(n_hidden):
        tile = model.w1[j].reshape(3, PATCH_SIZE, PATCH_SIZE).transpose(1, 2, 0)
        lo, hi = tile.min(), tile.max()
        if hi - lo < 1e-12:
            norm = np.full_like(tile, 0.5)
        else:
            norm = (tile - lo) / (hi - lo)
        r, c = divmod(j, cols)
        y0, x0 = border + r * cell, border + c * cell
        canvas[y0:y0 + PATCH_SIZE, x0:x0 + PATCH_SIZE] = np.round(norm * 255).astype(np.uint8)
    if path is not None:
        Image.fromarray(canvas, mode="RGB").save(path, format="PNG")
    return canvas
