"""Run directories: config snapshot, per-step loss log, and model checkpoint."""
from __future__ import annotations

import csv
from pathlib import Path

from .alignment import ConfidenceWeightedAligner
from .config import RunConfig
from .numerics import load_checkpoint, save_checkpoint

CONFIG_FILE = "config.json"
LOSS_FILE = "loss.csv"
EPOCH_FILE = "epochs.csv"
CHECKPOINT_FILE = "model.limt"


def frame_input_width(cfg: RunConfig) -> int:
    return cfg.model.frame_width * cfg.model.frame_height * cfg.model.channels


def write_run(run_dir, cfg: RunConfig, aligner: ConfidenceWeightedAligner) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / CONFIG_FILE)
    with open(run_dir / LOSS_FILE, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss", "tau", "lr"])
        for row in aligner.history_:
            writer.writerow([row["step"], repr(row["loss"]), repr(row["tau"]), repr(row["lr"])])
    with open(run_dir / EPOCH_FILE, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(aligner.epoch_losses_, start=1):
            writer.writerow([i, repr(loss)])
    save_checkpoint(run_dir / CHECKPOINT_FILE, aligner.model_.state_dict())


def load_run(run_dir) -> tuple[ConfidenceWeightedAligner, RunConfig]:
    run_dir = Path(run_dir)
    cfg = RunConfig.load(run_dir / CONFIG_FILE)
    aligner = ConfidenceWeightedAligner.from_config(cfg)
    model = aligner.build_model(frame_input_width(cfg))
    model.load_state_dict(load_checkpoint(run_dir / CHECKPOINT_FILE))
    aligner.model_ = model
    return aligner, cfg
