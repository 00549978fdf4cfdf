"""Command-line entry point.

Exit codes: 0 success, 1 data or contract error, 2 bad command-line usage,
3 missing input file, 4 malformed config, 5 training diverged. Failures print
one JSON object ``{"error", "code", "message"}`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import numerics as nx
from .adapters import pixels_to_vectors
from .alignment import AlignmentModel, ConfidenceWeightedAligner
from .config import RunConfig
from .confidence import MaskedConfidenceEstimator, write_confidence_report
from .datapipe import (
    HistogramShotDetector,
    ManifestRecord,
    MockCaptioner,
    RetryingCaptioner,
    Source,
    read_limf,
    read_manifest,
    run_pipeline,
    write_manifest,
)
from .evalkit import evaluate_linear_probe, evaluate_zero_shot, load_prompts, write_results
from .exceptions import ConfigError, NoisyAlignError, TrainingDivergenceError
from .runs import load_run, write_run
from .synth import generate, load_split, write_dataset
from .tokens import tokenize

log = logging.getLogger("noisyalign")

EXIT_OK, EXIT_DATA, EXIT_USAGE, EXIT_MISSING, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3, 4, 5

GRADCHECK_TOLERANCE = 1e-4

_PATH_FLAGS = {
    "data": "paths.data",
    "test_data": "paths.test_data",
    "prompts": "paths.prompts",
    "model": "paths.model",
    "sources": "paths.sources",
    "confidences": "paths.confidences",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisyalign",
        description="Confidence-weighted video-text alignment toolkit.",
        epilog="Any RunConfig key can be overridden as --section.key VALUE (e.g. --optim.base_lr 1e-3).",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("prep", "curate LIMF source videos into a clip manifest"),
        ("confidence", "score manifest captions by masked-token recovery"),
        ("synth", "write a synthetic phase-recognition dataset"),
        ("train", "train the alignment model"),
        ("eval-zeroshot", "zero-shot classification with class prompts"),
        ("eval-linear", "linear probe on frozen, LoRA-merged features"),
        ("gradcheck", "compare analytic gradients with finite differences"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON RunConfig file")
        p.add_argument("--seed", type=int, help="global seed (overrides config)")
        p.add_argument("--out", help="output directory")
        for flag in _PATH_FLAGS:
            p.add_argument("--" + flag.replace("_", "-"), dest=flag, help=f"sets {_PATH_FLAGS[flag]}")
    return parser


def parse_overrides(extra: list[str]) -> dict:
    """Turn ``--a.b VALUE`` / ``--a.b=VALUE`` pairs into a dotted-key mapping with JSON-typed values."""
    out = {}
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or "." not in token:
            raise ConfigError(f"unrecognized argument {token!r}")
        key, eq, value = token[2:].partition("=")
        if not eq:
            if i + 1 >= len(extra):
                raise ConfigError(f"override {token} needs a value")
            value = extra[i + 1]
            i += 1
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
        i += 1
    return out


def resolve_config(args, extra: list[str]) -> RunConfig:
    cfg = RunConfig.load(_existing(args.config)) if args.config else RunConfig()
    overrides = parse_overrides(extra)
    if args.seed is not None:
        overrides["seed"] = args.seed
    for flag, key in _PATH_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return cfg.with_overrides(overrides) if overrides else cfg


def _existing(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    return path


def _require(value, key: str) -> Path:
    if value is None:
        raise ConfigError(f"{key} is required for this command")
    return _existing(value)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


# --- commands ---------------------------------------------------------------
def cmd_synth(cfg: RunConfig, args) -> dict:
    out = _out_dir(args)
    data = generate(cfg.synth, cfg.temporal_window, cfg.model.frame_width, cfg.model.frame_height, cfg.seed,
                    cfg.model.vocab_size)
    write_dataset(out, data)
    cfg.save(out / "synth_config.json")
    return {"command": "synth", "out": str(out), "train_clips": data.train.n_clips,
            "test_clips": data.test.n_clips, "corrupted": int(data.train.corrupted.sum())}


def cmd_prep(cfg: RunConfig, args) -> dict:
    src_dir = _require(cfg.paths.sources, "paths.sources")
    sources = []
    for path in sorted(src_dir.glob("*.limf")):
        meta_path = path.with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        sources.append(Source(path.stem, read_limf(path), meta))
    pc = cfg.pipeline
    result = run_pipeline(sources, HistogramShotDetector(pc.shot_threshold),
                          RetryingCaptioner(MockCaptioner(), pc.caption_retries), pc)
    out = _out_dir(args)
    write_manifest(out / "manifest.jsonl", result.records)
    stats = {**result.stats.__dict__, "blur_fraction": result.stats.blur_fraction}
    (out / "pipeline_stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n")
    return {"command": "prep", "sources": len(sources), **stats}


def cmd_confidence(cfg: RunConfig, args) -> dict:
    data_dir = _require(cfg.paths.data, "paths.data")
    manifest_path = data_dir / "manifest.jsonl" if data_dir.is_dir() else data_dir
    records = read_manifest(_existing(manifest_path))
    vocab = cfg.model.vocab_size
    if cfg.confidence.corpus:
        corpus = [line for line in _existing(cfg.confidence.corpus).read_text().splitlines() if line.strip()]
    else:
        corpus = [r.caption for r in records]
    estimator = MaskedConfidenceEstimator(vocab, cfg.confidence.floor).fit(corpus)
    sequences = [tokenize(r.caption, vocab) for r in records]
    scores = estimator.transform(sequences)
    out = _out_dir(args)
    write_confidence_report(out / "confidence.jsonl", [r.clip_id for r in records], sequences, scores)
    scored = [ManifestRecord(**{**r.__dict__, "confidence": float(c)}) for r, c in zip(records, scores)]
    write_manifest(out / "manifest.jsonl", scored)
    return {"command": "confidence", "clips": len(records), "mean_confidence": float(np.mean(scores)),
            "min_confidence": float(np.min(scores)), "max_confidence": float(np.max(scores))}


def _training_confidences(cfg: RunConfig, records) -> np.ndarray | None:
    if not cfg.confidence.enabled:
        return None
    if cfg.paths.confidences:
        report = _existing(cfg.paths.confidences)
        if report.is_dir():
            report = _existing(report / "confidence.jsonl")
        by_id = {}
        for line in report.read_text().splitlines():
            if line.strip():
                row = json.loads(line)
                by_id[row["clip_id"]] = row["confidence"]
        missing = [r.clip_id for r in records if r.clip_id not in by_id]
        if missing:
            raise ConfigError(f"confidence report lacks {len(missing)} clips, e.g. {missing[0]}")
        return np.array([by_id[r.clip_id] for r in records])
    values = [r.confidence for r in records]
    if any(v is None for v in values):
        raise ConfigError("confidence.enabled is true but the manifest has no confidences; "
                          "run `confidence` first or set paths.confidences")
    return np.asarray(values, dtype=np.float64)


def cmd_train(cfg: RunConfig, args) -> dict:
    split = load_split(_require(cfg.paths.data, "paths.data"), cfg.temporal_window)
    confidences = _training_confidences(cfg, split.records)
    X = pixels_to_vectors(split.pixels)
    aligner = ConfidenceWeightedAligner.from_config(cfg)
    start = time.perf_counter()
    aligner.fit(X, [r.caption for r in split.records], confidences)
    out = _out_dir(args)
    write_run(out, cfg, aligner)
    return {"command": "train", "out": str(out), "steps": len(aligner.history_),
            "final_loss": aligner.history_[-1]["loss"], "epoch_losses": aligner.epoch_losses_,
            "tau": aligner.model_.tau, "seconds": round(time.perf_counter() - start, 3)}


def _split_for_eval(cfg: RunConfig, key: str):
    split = load_split(_require(getattr(cfg.paths, key), f"paths.{key}"))
    if split.labels is None:
        raise ConfigError(f"paths.{key} has no labels.json")
    return split


def cmd_eval_zeroshot(cfg: RunConfig, args) -> dict:
    aligner, _ = load_run(_require(cfg.paths.model, "paths.model"))
    key = "test_data" if cfg.paths.test_data else "data"
    split = _split_for_eval(cfg, key)
    prompts = load_prompts(_require(cfg.paths.prompts, "paths.prompts"))
    result = evaluate_zero_shot(pixels_to_vectors(split.pixels), split.labels, aligner, prompts)
    write_results(_out_dir(args) / "results.json", result)
    return {"command": "eval-zeroshot", **result}


def cmd_eval_linear(cfg: RunConfig, args) -> dict:
    aligner, _ = load_run(_require(cfg.paths.model, "paths.model"))
    train = _split_for_eval(cfg, "data")
    test = _split_for_eval(cfg, "test_data")
    result = evaluate_linear_probe(
        aligner.pooled_features(pixels_to_vectors(train.pixels)), train.labels,
        aligner.pooled_features(pixels_to_vectors(test.pixels)), test.labels, random_state=cfg.seed,
    )
    write_results(_out_dir(args) / "results.json", result)
    return {"command": "eval-linear", **result}


def gradcheck_report(seed: int = 0, batch: int = 3, frames: int = 4, width: int = 16, depth: int = 1,
                     rank: int = 2, alpha: float = 4.0, h: float = 1e-5) -> dict:
    """Finite-difference check of every trainable tensor of a small end-to-end model.

    LoRA ``b`` factors start at zero, which would make the ``a`` gradients
    vanish, so they are randomized first.
    """
    rng = np.random.default_rng([seed, 99])
    model = AlignmentModel.build(patch_dim=4, n_patches=4, d_v=width, d_t=width, proj_dim=width, depth=depth,
                                 vocab_size=256, rank=rank, alpha=alpha, seed=seed)
    for enc in (model.vision, model.text):
        for _, layer in enc.lora_layers():
            layer.b.data = rng.normal(0.0, 0.1, size=layer.b.shape)
    clips = rng.normal(size=(batch, frames, 16))
    sentences = [tokenize(" ".join(f"w{rng.integers(1000)}" for _ in range(5))) for _ in range(batch)]
    weights = rng.uniform(0.2, 1.0, size=batch)
    params = [t for _, t in model.trainable_parameters()]
    start = time.perf_counter()
    err = nx.grad_check(lambda: model.loss(clips, sentences, weights), params, h)
    return {"max_rel_error": float(err), "n_parameters": int(sum(p.size for p in params)), "h": h,
            "batch": batch, "frames": frames, "width": width, "depth": depth, "rank": rank,
            "tolerance": GRADCHECK_TOLERANCE, "passed": bool(err < GRADCHECK_TOLERANCE),
            "seconds": round(time.perf_counter() - start, 3)}


def cmd_gradcheck(cfg: RunConfig, args) -> dict:
    report = gradcheck_report(seed=cfg.seed)
    if args.out:
        (_out_dir(args) / "gradcheck.json").write_text(json.dumps(report, indent=1) + "\n")
    return {"command": "gradcheck", **report}


COMMANDS = {
    "prep": cmd_prep,
    "confidence": cmd_confidence,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval-zeroshot": cmd_eval_zeroshot,
    "eval-linear": cmd_eval_linear,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        cfg = resolve_config(args, extra)
        result = COMMANDS[args.command](cfg, args)
    except OSError as exc:
        return _fail(EXIT_MISSING, "missing-file", exc)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except TrainingDivergenceError as exc:
        return _fail(EXIT_DIVERGED, "diverged", exc)
    except (NoisyAlignError, ValueError, KeyError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    _emit(result)
    if args.command == "gradcheck" and not result["passed"]:
        return EXIT_DATA
    return EXIT_OK


def _fail(code: int, kind: str, exc: Exception) -> int:
    print(json.dumps({"error": kind, "code": code, "message": str(exc)}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
