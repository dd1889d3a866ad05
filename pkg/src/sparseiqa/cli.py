"""Command-line entry point: train, score, evaluate, export-filters.

Config precedence is CLI flags > --config JSON file > built-in defaults,
and the effective configuration is echoed into every output artifact.
Exit codes: 0 success, 1 partial per-item failure, 2 usage/config error,
3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, model_io
from .decoder import DecoderHyperparams, export_filter_grid, train
from .preprocess import (PatchBatch, apply_normalization, fit_normalization,
                         load_channel_image, sample_random_patches)
from .scorer import SuppressionPolicy, quality_score

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Effective configuration of one CLI invocation."""

    subcommand: str = ""
    corpus: str = ""
    patches_per_image: int = 100
    image_budget: int = 1000
    n_hidden: int = 400
    rho: float = 0.035
    beta: float = 5.0
    weight_decay: float = 3e-3
    epsilon: float = 0.1
    max_iterations: int = 400
    lbfgs_memory: int = 10
    seed: int = 0
    tau: float = 0.5
    abs_threshold: float | None = None
    bins: int = 10
    jobs: int = 1
    model: str = ""
    ref: str = ""
    dist: str = ""
    batch: str = ""
    scores: str = ""
    mos: str = ""
    out: str = ""
    trace: str = ""
    filters: str = ""
    report: str = ""
    scatter: str = ""
    extra: dict = field(default_factory=dict)

    def suppression(self) -> SuppressionPolicy:
        if self.abs_threshold is not None:
            return SuppressionPolicy.absolute(self.abs_threshold)
        return SuppressionPolicy.mean_relative(self.tau)

    def hyperparams(self) -> DecoderHyperparams:
        return DecoderHyperparams(
            n_hidden=self.n_hidden, rho=self.rho, beta=self.beta,
            weight_decay=self.weight_decay,
            max_iterations=self.max_iterations, lbfgs_memory=self.lbfgs_memory,
        )

    def echo(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k != "extra"}


def _add_common(sub):
    sub.add_argument("--config", default=argparse.SUPPRESS,
                     help="JSON file of defaults; CLI flags override it")
    sub.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                     help="random seed (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparseiqa",
        description="Train a sparse patch decoder on generic images and score "
                    "distorted images against references by comparing the rank "
                    "order of their sparse representations.",
    )
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("train", help="train a decoder on an image corpus")
    p.add_argument("--corpus", required=True, help="directory of PNG/JPEG/BMP images")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--patches-per-image", type=int, default=argparse.SUPPRESS,
                   help="random patches sampled per image (default 100)")
    p.add_argument("--image-budget", type=int, default=argparse.SUPPRESS,
                   help="number of corpus images to use (default 1000)")
    p.add_argument("--hidden", dest="n_hidden", type=int, default=argparse.SUPPRESS,
                   help="hidden units (default 400)")
    p.add_argument("--rho", type=float, default=argparse.SUPPRESS,
                   help="target mean activation (default 0.035)")
    p.add_argument("--beta", type=float, default=argparse.SUPPRESS,
                   help="sparsity penalty weight (default 5)")
    p.add_argument("--weight-decay", type=float, default=argparse.SUPPRESS,
                   help="weight decay lambda (default 3e-3)")
    p.add_argument("--epsilon", type=float, default=argparse.SUPPRESS,
                   help="ZCA whitening regularizer (default 0.1)")
    p.add_argument("--max-iter", dest="max_iterations", type=int, default=argparse.SUPPRESS,
                   help="L-BFGS iteration cap (default 400)")
    p.add_argument("--memory", dest="lbfgs_memory", type=int, default=argparse.SUPPRESS,
                   help="L-BFGS history length (default 10)")
    p.add_argument("--tau", type=float, default=argparse.SUPPRESS,
                   help="default suppression factor stored in the model (default 0.5)")
    p.add_argument("--trace", default=argparse.SUPPRESS, help="write training trace CSV here")
    p.add_argument("--filters", default=argparse.SUPPRESS, help="write filter grid PNG here")
    _add_common(p)

    p = subs.add_parser("score", help="score (reference, distorted) pairs")
    p.add_argument("--model", required=True)
    p.add_argument("--ref", default=argparse.SUPPRESS, help="reference image")
    p.add_argument("--dist", default=argparse.SUPPRESS, help="distorted image")
    p.add_argument("--batch", default=argparse.SUPPRESS,
                   help="TSV list of ref<TAB>dist paths, one pair per line")
    p.add_argument("--tau", type=float, default=argparse.SUPPRESS,
                   help="mean-relative suppression factor (default 0.5)")
    p.add_argument("--abs-threshold", dest="abs_threshold", type=float,
                   default=argparse.SUPPRESS, help="absolute suppression threshold")
    p.add_argument("--jobs", type=int, default=argparse.SUPPRESS,
                   help="parallel workers for batch scoring (default 1)")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output TSV (default stdout)")
    _add_common(p)

    p = subs.add_parser("evaluate", help="validate scores against a subjective database")
    p.add_argument("--scores", required=True,
                   help="CSV with header image_id,reference_id,score")
    p.add_argument("--mos", required=True, help="CSV with header image_id,mos[,mos_std]")
    p.add_argument("--bins", type=int, default=argparse.SUPPRESS,
                   help="histogram bins (default 10)")
    p.add_argument("--report", required=True, help="output report JSON")
    p.add_argument("--scatter", default=argparse.SUPPRESS,
                   help="output scatter TSV (objective, regressed, mos)")
    _add_common(p)

    p = subs.add_parser("export-filters", help="render a trained model's encoder rows")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output PNG")
    _add_common(p)

    return parser


def _merge_config(args: argparse.Namespace) -> RunConfig:
    given = vars(args).copy()
    config_path = given.pop("config", None)
    file_values: dict = {}
    if config_path:
        try:
            file_values = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {config_path}: {exc}") from exc
        if not isinstance(file_values, dict):
            raise UsageError(f"config file {config_path} must hold a JSON object")

    cfg = RunConfig()
    known = set(asdict(cfg))
    for source in (file_values, given):
        for key, value in source.items():
            key = key.replace("-", "_")
            if key in known and key != "extra":
                setattr(cfg, key, value)
            else:
                cfg.extra[key] = value
    if cfg.extra:
        raise UsageError(f"unknown config keys: {sorted(cfg.extra)}")
    return cfg


def _corpus_files(directory: str) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise UsageError(f"corpus directory {directory!r} does not exist")
    files = sorted(p for p in root.iterdir()
                   if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise UsageError(f"corpus directory {directory!r} contains no decodable images")
    return files


def cmd_train(cfg: RunConfig) -> int:
    files = _corpus_files(cfg.corpus)
    rng = np.random.default_rng(cfg.seed)
    if cfg.image_budget < len(files):
        chosen = [files[i] for i in sorted(rng.choice(len(files), cfg.image_budget,
                                                      replace=False))]
    else:
        chosen = files
        if cfg.image_budget > len(files):
            print(f"note: budget {cfg.image_budget} exceeds corpus size; "
                  f"using all {len(files)} images", file=sys.stderr)

    columns = []
    digest = hashlib.sha256()
    skipped = 0
    for path in chosen:
        try:
            image = load_channel_image(path)
        except (OSError, ValueError) as exc:
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
            skipped += 1
            continue
        batch = sample_random_patches(image, cfg.patches_per_image, rng)
        columns.append(batch.data)
        digest.update(path.name.encode())
    if not columns:
        raise UsageError(f"no image in {cfg.corpus!r} could be decoded "
                         f"({skipped} skipped)")
    if skipped:
        print(f"note: skipped {skipped} undecodable file(s)", file=sys.stderr)

    raw = PatchBatch(np.concatenate(columns, axis=1))
    print(f"sampled {raw.count} patches from {len(columns)} images")
    stats = fit_normalization(raw, epsilon=cfg.epsilon)
    whitened = apply_normalization(raw, stats)

    model, trace = train(whitened, cfg.hyperparams(), stats=stats, seed=cfg.seed)
    for warning in trace.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"training stopped after {trace.iteration[-1]} iterations ({trace.stop_reason})")
    print(f"objective {trace.objective[0]:.6g} -> {trace.objective[-1]:.6g} "
          f"(reconstruction {trace.reconstruction[-1]:.6g}, "
          f"sparsity {trace.sparsity[-1]:.6g}, decay {trace.decay[-1]:.6g}); "
          f"mean activation {trace.rho_hat_mean[-1]:.4f}")

    provenance = {
        "seed": cfg.seed,
        "patch_count": raw.count,
        "corpus_digest": digest.hexdigest(),
        "config": cfg.echo(),
    }
    model_io.save_model(model, cfg.out, provenance=provenance,
                        suppression=cfg.suppression())
    print(f"model written to {cfg.out}")
    if cfg.trace:
        trace.to_csv(cfg.trace)
        print(f"trace written to {cfg.trace}")
    if cfg.filters:
        export_filter_grid(model, cfg.filters)
        print(f"filter grid written to {cfg.filters}")
    return EXIT_OK


def _score_one(model, policy, ref_path: str, dist_path: str) -> tuple[str, str, str]:
    try:
        ref = load_channel_image(ref_path)
        dist = load_channel_image(dist_path)
        score = quality_score(model, ref, dist, policy)
        return repr(score.spearman_raw), repr(score.value), "ok"
    except (OSError, ValueError) as exc:
        return "NA", "NA", f"error: {exc}"


def cmd_score(cfg: RunConfig) -> int:
    if bool(cfg.batch) == bool(cfg.ref or cfg.dist):
        raise UsageError("provide either --ref/--dist or --batch, not both")
    if not cfg.batch and not (cfg.ref and cfg.dist):
        raise UsageError("--ref and --dist must be given together")
    try:
        model = model_io.load_model(cfg.model)
    except (OSError, model_io.ModelIOError) as exc:
        raise UsageError(str(exc)) from exc
    policy = cfg.suppression()

    if cfg.batch:
        try:
            lines = [ln.split("\t") for ln in
                     Path(cfg.batch).read_text().splitlines() if ln.strip()]
        except OSError as exc:
            raise UsageError(f"cannot read batch list {cfg.batch}: {exc}") from exc
        bad = [ln for ln in lines if len(ln) < 2]
        if bad:
            raise UsageError(f"batch lines need ref<TAB>dist: {bad[:3]}")
        pairs = [(ln[0], ln[1]) for ln in lines]
    else:
        pairs = [(cfg.ref, cfg.dist)]

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(lambda p: _score_one(model, policy, *p), pairs))
    else:
        results = [_score_one(model, policy, *pair) for pair in pairs]

    out = open(cfg.out, "w") if cfg.out else sys.stdout
    try:
        out.write(f"# config: {json.dumps(cfg.echo(), sort_keys=True)}\n")
        out.write("ref\tdist\tspearman_raw\tscore\tstatus\n")
        for (ref_path, dist_path), (raw, value, status) in zip(pairs, results):
            out.write(f"{ref_path}\t{dist_path}\t{raw}\t{value}\t{status}\n")
    finally:
        if cfg.out:
            out.close()
    failures = sum(1 for _, _, status in results if status != "ok")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    eval_config = evaluation.EvalConfig(bins=cfg.bins)
    try:
        report, scatter = evaluation.evaluate_database(cfg.scores, cfg.mos, eval_config)
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    report.config["cli"] = cfg.echo()
    report.to_json(cfg.report)
    print(f"report written to {cfg.report}")
    if cfg.scatter:
        evaluation.write_scatter_tsv(cfg.scatter, scatter)
        print(f"scatter data written to {cfg.scatter}")
    print(f"n={report.n_images} rmse={report.rmse:.4f} plcc={report.plcc:.4f} "
          f"srcc={report.srcc:.4f} outlier_ratio={report.outlier_ratio}")
    return EXIT_OK


def cmd_export_filters(cfg: RunConfig) -> int:
    try:
        model = model_io.load_model(cfg.model)
    except (OSError, model_io.ModelIOError) as exc:
        raise UsageError(str(exc)) from exc
    export_filter_grid(model, cfg.out)
    print(f"filter grid written to {cfg.out}")
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "export-filters": cmd_export_filters,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
        cfg.subcommand = args.subcommand
        return _COMMANDS[args.subcommand](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
