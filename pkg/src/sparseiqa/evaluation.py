"""Validation harness: regression to subjective scores and benchmark metrics.

Objective scores are mapped to the subjective-score scale with the
standard five-parameter monotonic logistic

    q(x) = b1 * (1/2 - 1/(1 + exp(b2 * (x - b3)))) + b4 * x + b5

fit by damped Gauss-Newton (Levenberg-Marquardt) least squares from a
fixed initialization.  The regressed predictions are then compared to
MOS/DMOS with RMSE, Pearson and Spearman correlations, the outlier ratio
(when per-image standard deviations exist), and five histogram-difference
measures (EMD, KL, JS, histogram-intersection difference, L2); lower is
better for all five.  Pairs of correlations are compared with the
Fisher-z two-sided test at the 95% level.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .scorer import spearman

DEFAULT_INIT = (0.0, 0.1, 0.0, 0.0, 0.0)
DEFAULT_BINS = 10
_KL_SMOOTHING = 1e-10
# two-sided 95% normal quantile
_Z_CRIT = 1.959963984540054


@dataclass(frozen=True)
class LogisticParams:
    b1: float
    b2: float
    b3: float
    b4: float
    b5: float

    def as_array(self) -> np.ndarray:
        return np.array([self.b1, self.b2, self.b3, self.b4, self.b5], dtype=np.float64)

    @classmethod
    def from_array(cls, p) -> "LogisticParams":
        return cls(*(float(v) for v in p))


@dataclass
class FitInfo:
    sse: float
    n_iterations: int
    converged: bool
    warning: str | None = None


@dataclass
class EvalMetrics:
    rmse: float
    plcc: float
    srcc: float
    outlier_ratio: float | None = None


@dataclass
class EvalReport:
    regression: LogisticParams
    rmse: float
    plcc: float
    srcc: float
    outlier_ratio: float | None
    histogram_distances: dict
    n_images: int
    config: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_json(self, path: str | Path | None = None) -> str:
        payload = asdict(self)
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _inv_logistic(u: np.ndarray) -> np.ndarray:
    """1 / (1 + exp(u)) without overflow for large |u|."""
    out = np.empty_like(u)
    pos = u >= 0
    t = np.exp(-u[pos])
    out[pos] = t / (1.0 + t)
    out[~pos] = 1.0 / (1.0 + np.exp(u[~pos]))
    return out


def logistic_5param(params: LogisticParams | np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate the five-parameter monotonic logistic at x."""
    p = params.as_array() if isinstance(params, LogisticParams) else np.asarray(params, float)
    x = np.asarray(x, dtype=np.float64)
    g = _inv_logistic(p[1] * (x - p[2]))
    return p[0] * (0.5 - g) + p[3] * x + p[4]


def _jacobian(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of logistic_5param wrt the five coefficients."""
    g = _inv_logistic(p[1] * (x - p[2]))
    gg = g * (1.0 - g)
    jac = np.empty((x.size, 5))
    jac[:, 0] = 0.5 - g
    jac[:, 1] = p[0] * gg * (x - p[2])
    jac[:, 2] = -p[0] * gg * p[1]
    jac[:, 3] = x
    jac[:, 4] = 1.0
    return jac


def fit_logistic(
    objective_scores: np.ndarray,
    mos: np.ndarray,
    init: LogisticParams | None = None,
    max_iter: int = 1000,
    ftol: float = 1e-10,
    full_output: bool = False,
):
    """Least-squares fit of the five-parameter logistic.

    Levenberg-Marquardt with the analytic Jacobian, starting from `init`
    (default (0, 0.1, 0, 0, 0)).  Steps are accepted only when they lower
    the sum of squared residuals, so the fit never ends worse than its
    initialization.  If damping exceeds its budget without progress the
    best parameters so far are returned with a warning; a non-finite
    residual is a hard error.
    """
    x = np.asarray(objective_scores, dtype=np.float64).ravel()
    y = np.asarray(mos, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} scores vs {y.size} subjective values")
    if x.size < 5:
        raise ValueError("need at least 5 samples to fit 5 parameters")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs contain non-finite values")

    p = (init or LogisticParams(*DEFAULT_INIT)).as_array()
    r = logistic_5param(p, x) - y
    sse = float(r @ r)
    if not np.isfinite(sse):
        raise ValueError("residual is non-finite at the initialization")

    mu = 1e-3
    warning = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jac = _jacobian(p, x)
        a = jac.T @ jac
        g = jac.T @ r
        if float(np.max(np.abs(g))) < 1e-14:
            converged = True
            break
        accepted = False
        while mu <= 1e12:
            try:
                step = np.linalg.solve(a + mu * np.eye(5), -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            p_try = p + step
            r_try = logistic_5param(p_try, x) - y
            sse_try = float(r_try @ r_try)
            if not np.isfinite(sse_try):
                mu *= 10.0
                continue
            if sse_try < sse:
                improvement = sse - sse_try
                p, r, sse = p_try, r_try, sse_try
                mu = max(mu * 0.3, 1e-12)
                accepted = True
                if improvement <= ftol * max(sse, 1e-300):
                    converged = True
                break
            mu *= 10.0
        if not accepted:
            warning = "damping budget exhausted; returning best parameters found"
            break
        if converged:
            break

    params = LogisticParams.from_array(p)
    if full_output:
        return params, FitInfo(sse=sse, n_iterations=it, converged=converged, warning=warning)
    return params


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size or x.size < 2:
        raise ValueError("need two equal-length vectors with >= 2 elements")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(dx @ dx)
    sy = float(dy @ dy)
    if sx == 0 or sy == 0:
        raise ValueError("constant input; Pearson correlation is undefined")
    return float(np.clip(float(dx @ dy) / (np.sqrt(sx) * np.sqrt(sy)), -1.0, 1.0))


def compute_metrics(
    regressed: np.ndarray,
    mos: np.ndarray,
    mos_std: np.ndarray | None = None,
    raw_scores: np.ndarray | None = None,
) -> EvalMetrics:
    """RMSE, PLCC, SRCC and (optionally) the outlier ratio.

    SRCC is rank-based, so it is computed on `raw_scores` when provided
    (the monotone regression leaves it unchanged anyway) and on the
    regressed predictions otherwise.  The outlier ratio is the fraction of
    predictions farther than two subjective standard deviations from MOS;
    it is omitted when `mos_std` is absent.
    """
    regressed = np.asarray(regressed, dtype=np.float64).ravel()
    mos = np.asarray(mos, dtype=np.float64).ravel()
    if regressed.size != mos.size or regressed.size < 2:
        raise ValueError("need two equal-length vectors with >= 2 elements")
    resid = regressed - mos
    rmse = float(np.sqrt(np.mean(resid * resid)))
    plcc = _pearson(regressed, mos)
    srcc_input = regressed if raw_scores is None else np.asarray(raw_scores, float).ravel()
    srcc = spearman(srcc_input, mos)
    outlier_ratio = None
    if mos_std is not None:
        std = np.asarray(mos_std, dtype=np.float64).ravel()
        if std.size != mos.size:
            raise ValueError("mos_std length mismatch")
        if np.any(std <= 0):
            raise ValueError("mos_std values must be positive")
        outlier_ratio = float(np.mean(np.abs(resid) > 2.0 * std))
    return EvalMetrics(rmse=rmse, plcc=plcc, srcc=srcc, outlier_ratio=outlier_ratio)


def histogram_distances(scores_a, scores_b, bins: int = DEFAULT_BINS) -> dict:
    """Five differences between unit-mass histograms on shared bins.

    Both samples are binned over the union of their ranges.  Reported
    values: 1-D EMD (sum of |CDF| gaps), KL divergence (with additive
    smoothing so empty bins stay finite), JS divergence (0 log 0 = 0
    convention, bounded by log 2), histogram intersection as the
    difference 1 - sum(min), and the L2 norm of the bin-wise gap.  All are
    zero for identical inputs; a zero-width union range yields zeros by
    convention.
    """
    a = np.asarray(scores_a, dtype=np.float64).ravel()
    b = np.asarray(scores_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both score vectors must be non-empty")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if lo == hi:
        return {"emd": 0.0, "kl": 0.0, "js": 0.0, "hi": 0.0, "l2": 0.0}

    ha = np.histogram(a, bins=bins, range=(lo, hi))[0] / a.size
    hb = np.histogram(b, bins=bins, range=(lo, hi))[0] / b.size

    emd = float(np.sum(np.abs(np.cumsum(ha) - np.cumsum(hb))))

    has = ha + _KL_SMOOTHING
    has /= has.sum()
    hbs = hb + _KL_SMOOTHING
    hbs /= hbs.sum()
    kl = float(np.sum(has * np.log(has / hbs)))

    m = 0.5 * (ha + hb)
    ja = np.where(ha > 0, ha * np.log(np.where(ha > 0, ha / np.where(m > 0, m, 1.0), 1.0)), 0.0)
    jb = np.where(hb > 0, hb * np.log(np.where(hb > 0, hb / np.where(m > 0, m, 1.0), 1.0)), 0.0)
    js = float(0.5 * ja.sum() + 0.5 * jb.sum())

    hi_diff = float(1.0 - np.sum(np.minimum(ha, hb)))
    l2 = float(np.sqrt(np.sum((ha - hb) ** 2)))
    return {"emd": emd, "kl": kl, "js": js, "hi": hi_diff, "l2": l2}


def significance(plcc_a: float, plcc_b: float, n: int) -> int:
    """Fisher-z comparison of two correlations measured on n samples.

    Returns +1 when b is significantly superior to a, -1 when inferior,
    and 0 when the two are statistically similar at the two-sided 95%
    level, using the combined standard error sqrt(2 / (n - 3)).
    """
    if n < 4:
        raise ValueError("need n >= 4 samples")
    for name, r in (("plcc_a", plcc_a), ("plcc_b", plcc_b)):
        if not -1.0 < r < 1.0:
            raise ValueError(f"{name}={r} is at or beyond +-1; Fisher z is unbounded")
    se = math.sqrt(2.0 / (n - 3))
    stat = (math.atanh(plcc_b) - math.atanh(plcc_a)) / se
    if abs(stat) <= _Z_CRIT:
        return 0
    return 1 if stat > 0 else -1


@dataclass(frozen=True)
class EvalConfig:
    bins: int = DEFAULT_BINS
    init: tuple = DEFAULT_INIT
    srcc_on_raw: bool = True


def _read_csv(path: str | Path, required: tuple, optional: tuple = ()) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file")
        names = [n.strip() for n in reader.fieldnames]
        missing = [c for c in required if c not in names]
        if missing:
            raise ValueError(f"{path}: missing required columns {missing}; found {names}")
        rows = []
        for row in reader:
            rows.append({(k.strip() if k else k): v for k, v in row.items()})
    return rows


def _parse_float(path, row, column):
    raw = row.get(column)
    try:
        return float(raw)
    except (TypeError, ValueError) as exc:
        raise ValueError(
            f"{path}: bad {column} value {raw!r} for image_id {row.get('image_id')!r}"
        ) from exc


def load_objective_scores(path: str | Path) -> dict:
    """CSV (image_id, reference_id, score) -> {image_id: (reference_id, score)}."""
    rows = _read_csv(path, ("image_id", "reference_id", "score"))
    out: dict = {}
    for row in rows:
        iid = row["image_id"]
        if iid in out:
            raise ValueError(f"{path}: duplicate image_id {iid!r}")
        out[iid] = (row["reference_id"], _parse_float(path, row, "score"))
    return out


def load_subjective_scores(path: str | Path) -> dict:
    """CSV (image_id, mos[, mos_std]) -> {image_id: (mos, mos_std | None)}."""
    rows = _read_csv(path, ("image_id", "mos"))
    has_std = rows and "mos_std" in rows[0]
    out: dict = {}
    for row in rows:
        iid = row["image_id"]
        if iid in out:
            raise ValueError(f"{path}: duplicate image_id {iid!r}")
        mos = float(row["mos"])
        if not np.isfinite(mos):
            raise ValueError(f"{path}: non-finite mos for {iid!r}")
        std = None
        if has_std:
            raw = (row.get("mos_std") or "").strip()
            if raw == "":
                raise ValueError(f"{path}: mos_std present but empty for {iid!r}")
            std = float(raw)
            if not std > 0:
                raise ValueError(f"{path}: mos_std must be > 0, got {std} for {iid!r}")
        out[iid] = (mos, std)
    return out


def evaluate_database(
    scores_file: str | Path,
    mos_file: str | Path,
    config: EvalConfig = EvalConfig(),
) -> tuple[EvalReport, list[tuple[float, float, float]]]:
    """Join objective scores to subjective records and produce a full report.

    Returns the report and the scatter rows (objective, regressed, mos),
    one per image, in the objective file's order.  Unmatched ids on either
    side are an error listing every offender; duplicates are rejected at
    parse time.
    """
    objective = load_objective_scores(scores_file)
    subjective = load_subjective_scores(mos_file)

    only_obj = sorted(set(objective) - set(subjective))
    only_subj = sorted(set(subjective) - set(objective))
    if only_obj or only_subj:
        raise ValueError(
            "image ids do not join one-to-one; "
            f"only in scores file: {only_obj}; only in subjective file: {only_subj}"
        )

    ids = list(objective)
    x = np.array([objective[i][1] for i in ids])
    y = np.array([subjective[i][0] for i in ids])
    stds = [subjective[i][1] for i in ids]
    mos_std = None
    if all(s is not None for s in stds):
        mos_std = np.array(stds, dtype=np.float64)

    warnings: list[str] = []
    params, info = fit_logistic(x, y, init=LogisticParams(*config.init), full_output=True)
    if info.warning:
        warnings.append(info.warning)
    regressed = logistic_5param(params, x)

    metrics = compute_metrics(
        regressed, y, mos_std=mos_std,
        raw_scores=x if config.srcc_on_raw else None,
    )
    hist = histogram_distances(y, regressed, bins=config.bins)

    report = EvalReport(
        regression=params,
        rmse=metrics.rmse,
        plcc=metrics.plcc,
        srcc=metrics.srcc,
        outlier_ratio=metrics.outlier_ratio,
        histogram_distances=hist,
        n_images=len(ids),
        config={"bins": config.bins, "init": list(config.init),
                "srcc_on_raw": config.srcc_on_raw},
        warnings=warnings,
    )
    scatter = [(float(xi), float(ri), float(yi)) for xi, ri, yi in zip(x, regressed, y)]
    return report, scatter


def write_scatter_tsv(path: str | Path, scatter) -> None:
    """Write (objective, regressed, mos) rows as TSV with a header."""
    with open(path, "w", newline="") as fh:
        fh.write("objective\tregressed\tmos\n")
        for obj, reg, mos in scatter:
            fh.write(f"{obj!r}\t{reg!r}\t{mos!r}\n")
