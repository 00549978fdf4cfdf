"""Synthetic phase-recognition corpus with controllable caption corruption.

Each class owns a latent thumbnail prototype and a fixed word pattern. A clip
is its class prototype plus independent Gaussian jitter on each of its T
frames. A clip's caption is the class pattern, or, with probability ``rho``,
the same number of words drawn from a gibberish vocabulary whose token ids
never overlap the class words.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SynthConfig
from .datapipe import Frame, FrameSequence, ManifestRecord, clip_sharpness, read_limf, read_manifest
from .datapipe import write_limf, write_manifest
from .exceptions import FormatError
from .tokens import DEFAULT_VOCAB_SIZE, word_id

CLIP_SECONDS = 5.0
_CONSONANTS = "bcdfghklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class SyntheticSplit:
    pixels: np.ndarray  # (N, T, H, W, 1) uint8
    labels: np.ndarray
    captions: list[str]
    clean_captions: list[str]
    corrupted: np.ndarray

    @property
    def n_clips(self) -> int:
        return len(self.labels)


@dataclass
class SyntheticDataset:
    class_names: list[str]
    patterns: list[list[str]]
    train: SyntheticSplit
    test: SyntheticSplit

    def prompts(self) -> dict[str, list[str]]:
        return {name: [" ".join(words)] for name, words in zip(self.class_names, self.patterns)}


def _word(rng: np.random.Generator, syllables: int) -> str:
    return "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(syllables))


def _vocabularies(rng, n_classes: int, pattern_len: int, vocab_size: int, n_gibberish: int):
    used: set[int] = set()
    patterns = []
    for _ in range(n_classes):
        words = []
        while len(words) < pattern_len:
            w = _word(rng, 3)
            if word_id(w, vocab_size) not in used:
                used.add(word_id(w, vocab_size))
                words.append(w)
        patterns.append(words)
    gibberish: list[str] = []
    while len(gibberish) < n_gibberish:
        w = "x" + _word(rng, 2) + "q"
        if word_id(w, vocab_size) not in used and w not in gibberish:
            gibberish.append(w)
    return patterns, gibberish


def _make_split(rng, prototypes, patterns, gibberish, per_class, cfg: SynthConfig, T: int):
    k, h, w = prototypes.shape
    labels = np.repeat(np.arange(k), per_class)
    n = labels.size
    jitter = rng.normal(0.0, cfg.noise, size=(n, T, h, w))
    pixels = np.clip(np.floor(prototypes[labels][:, None] + jitter + 0.5), 0, 255).astype(np.uint8)[..., None]
    corrupted = rng.random(n) < cfg.rho
    clean = [" ".join(patterns[c]) for c in labels]
    captions = []
    for i in range(n):
        if corrupted[i]:
            captions.append(" ".join(rng.choice(gibberish, size=cfg.pattern_len)))
        else:
            captions.append(clean[i])
    return SyntheticSplit(pixels, labels, captions, clean, corrupted)


def generate(cfg: SynthConfig, temporal_window: int = 8, frame_width: int = 8, frame_height: int = 4,
             seed: int = 0, vocab_size: int = DEFAULT_VOCAB_SIZE) -> SyntheticDataset:
    rng = np.random.default_rng([int(seed), 11])
    patterns, gibberish = _vocabularies(rng, cfg.n_classes, cfg.pattern_len, vocab_size,
                                        cfg.gibberish_vocab)
    prototypes = rng.uniform(0.0, 255.0, size=(cfg.n_classes, frame_height, frame_width))
    train = _make_split(rng, prototypes, patterns, gibberish, cfg.clips_per_class, cfg, temporal_window)
    clean_cfg = SynthConfig(**{**cfg.__dict__, "rho": 0.0})
    test = _make_split(rng, prototypes, patterns, gibberish, cfg.test_clips_per_class, clean_cfg,
                       temporal_window)
    names = [f"phase_{i}" for i in range(cfg.n_classes)]
    return SyntheticDataset(names, patterns, train, test)


def write_split(directory, split: SyntheticSplit, class_names, source_id: str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n, T = split.pixels.shape[:2]
    write_limf(directory / "frames.limf", FrameSequence(split.pixels.reshape((n * T,) + split.pixels.shape[2:]),
                                                        T / CLIP_SECONDS))
    records = []
    for i in range(n):
        sharp = clip_sharpness([Frame(p) for p in split.pixels[i]])
        records.append(ManifestRecord(f"{source_id}-{i:05d}", source_id, i * CLIP_SECONDS,
                                      (i + 1) * CLIP_SECONDS, sharp, split.captions[i]))
    write_manifest(directory / "manifest.jsonl", records)
    meta = {
        "classes": list(class_names),
        "labels": [int(v) for v in split.labels],
        "corrupted": [bool(v) for v in split.corrupted],
        "temporal_window": int(T),
    }
    (directory / "labels.json").write_text(json.dumps(meta, indent=1) + "\n")


def write_dataset(out, data: SyntheticDataset) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_split(out / "train", data.train, data.class_names, "synth-train")
    write_split(out / "test", data.test, data.class_names, "synth-test")
    (out / "prompts.json").write_text(json.dumps(data.prompts(), indent=1) + "\n")
    (out / "reference_corpus.txt").write_text("".join(c + "\n" for c in data.train.clean_captions))


@dataclass
class LoadedSplit:
    pixels: np.ndarray
    records: list[ManifestRecord]
    labels: np.ndarray | None
    classes: list[str] | None
    corrupted: np.ndarray | None


def load_split(directory, temporal_window: int | None = None) -> LoadedSplit:
    """Read ``frames.limf`` + ``manifest.jsonl`` (+ ``labels.json`` if present) from a split directory."""
    directory = Path(directory)
    seq = read_limf(directory / "frames.limf")
    records = read_manifest(directory / "manifest.jsonl")
    labels = classes = corrupted = None
    meta_path = directory / "labels.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        labels = np.asarray(meta["labels"], dtype=np.int64)
        classes = meta["classes"]
        corrupted = np.asarray(meta.get("corrupted", [False] * len(labels)), dtype=bool)
        temporal_window = temporal_window or meta.get("temporal_window")
    T = temporal_window or len(seq) // max(len(records), 1)
    if len(seq) != T * len(records):
        raise FormatError(f"{len(seq)} frames cannot be split into {len(records)} clips of {T}")
    pixels = seq.frames.reshape((len(records), T) + seq.frames.shape[1:])
    return LoadedSplit(pixels, records, labels, classes, corrupted)
