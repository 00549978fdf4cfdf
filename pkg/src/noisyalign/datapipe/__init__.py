from .frames import Frame, FrameSequence, decode_limf, encode_limf, read_limf, write_limf
from .manifest import ManifestRecord, dumps_manifest, read_manifest, write_manifest
from .pipeline import PipelineResult, PipelineStats, Source, run_pipeline, window_frame_indices
from .providers import (
    CaptionProvider,
    HistogramShotDetector,
    MockCaptioner,
    RetryingCaptioner,
    ShotBoundaryProvider,
    caption_request,
    parse_caption_request,
    parse_caption_response,
    shots_from_cuts,
)
from .stages import (
    PROMPT_ASPECTS,
    FrameStandardizer,
    ShotSpan,
    bilinear_resize,
    build_caption_prompt,
    clip_sharpness,
    laplacian_sharpness,
    prune_blurred,
    sample_indices,
    standardize_frame,
    standardize_geometry,
    window_clips,
)
