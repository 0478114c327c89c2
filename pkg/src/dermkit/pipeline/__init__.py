from .clients import GenClient, HttpClient, MockClient, StaticClient
from .dedup import DedupItem, dedup, jaccard, shingles
from .lexicon import DEFAULT_LEXICON, LeakLexicon
from .runner import (
    PIPELINE_VERSION,
    CoTRecord,
    ManifestEntry,
    PipelineResult,
    read_manifest,
    run_pipeline,
    stable_record_id,
    validate_record,
)
from .stages import StageError, stage_caption, stage_draft, stage_normalize

__all__ = [
    "GenClient",
    "HttpClient",
    "MockClient",
    "StaticClient",
    "DedupItem",
    "dedup",
    "jaccard",
    "shingles",
    "DEFAULT_LEXICON",
    "LeakLexicon",
    "PIPELINE_VERSION",
    "CoTRecord",
    "ManifestEntry",
    "PipelineResult",
    "read_manifest",
    "run_pipeline",
    "stable_record_id",
    "validate_record",
    "StageError",
    "stage_caption",
    "stage_draft",
    "stage_normalize",
]
