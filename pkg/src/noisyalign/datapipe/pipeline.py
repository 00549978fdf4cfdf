"""End-to-end curation: standardize, cut, prune short shots, window, blur-prune, caption."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..config import PipelineConfig
from .frames import Frame, FrameSequence
from .manifest import ManifestRecord
from .providers import CaptionProvider, ShotBoundaryProvider, shots_from_cuts
from .stages import build_caption_prompt, clip_sharpness, standardize_frame, window_clips

log = logging.getLogger(__name__)


@dataclass
class Source:
    source_id: str
    frames: FrameSequence
    metadata: dict = field(default_factory=dict)


@dataclass
class PipelineStats:
    shots: int = 0
    short_shots: int = 0
    windows: int = 0
    blurred: int = 0
    caption_failures: int = 0
    records: int = 0

    @property
    def blur_fraction(self) -> float:
        return self.blurred / self.windows if self.windows else 0.0


@dataclass
class PipelineResult:
    records: list[ManifestRecord]
    stats: PipelineStats


def window_frame_indices(start_s: float, end_s: float, fps: float, n_frames: int) -> range:
    """Indices of frames whose timestamps fall in ``[start_s, end_s)``."""
    lo = math.ceil(start_s * fps - 1e-9)
    hi = math.ceil(end_s * fps - 1e-9)
    return range(max(lo, 0), min(hi, n_frames))


def run_pipeline(sources: Sequence[Source], shot_provider: ShotBoundaryProvider,
                 caption_provider: CaptionProvider, config: PipelineConfig | None = None) -> PipelineResult:
    config = config or PipelineConfig()
    stats = PipelineStats()
    records: list[ManifestRecord] = []
    for source in sources:
        std = FrameSequence(
            np.stack([
                standardize_frame(source.frames[i], config.target_width, config.target_height).pixels
                for i in range(len(source.frames))
            ]) if len(source.frames) else np.zeros((0, config.target_height, config.target_width, 1), np.uint8),
            source.frames.fps,
        )
        if len(std) == 0:
            continue
        prompt = build_caption_prompt({"title": source.source_id, **source.metadata})
        shots = shots_from_cuts(shot_provider.boundaries(std), std.duration)
        stats.shots += len(shots)
        serial = 0
        for shot in shots:
            if shot.length < config.min_shot_s - 1e-9:
                stats.short_shots += 1
                continue
            for start, end in window_clips(shot, config.window_s, config.stride_s):
                stats.windows += 1
                idx = window_frame_indices(start, end, std.fps, len(std))
                if len(idx) == 0:
                    stats.blurred += 1
                    continue
                clip = FrameSequence(std.frames[idx.start : idx.stop], std.fps)
                sharpness = clip_sharpness([Frame(p) for p in clip.frames], config.sharpness_frames)
                if sharpness < config.sharpness_threshold:
                    stats.blurred += 1
                    continue
                clip_id = f"{source.source_id}-{serial:05d}"
                serial += 1
                try:
                    caption = caption_provider.caption(clip, prompt)
                except Exception as exc:  # provider faults must not stop the run
                    stats.caption_failures += 1
                    log.warning("skipping %s: caption provider failed (%s)", clip_id, exc)
                    continue
                records.append(ManifestRecord(clip_id, source.source_id, start, end, sharpness, caption))
    stats.records = len(records)
    log.info(
        "pipeline: %d shots (%d too short), %d windows, %d blurred (%.1f%%), %d caption failures, %d records",
        stats.shots, stats.short_shots, stats.windows, stats.blurred, 100.0 * stats.blur_fraction,
        stats.caption_failures, stats.records,
    )
    return PipelineResult(records, stats)
