"""Datasets, manifests, batch composition and denoising queries."""
from .batching import BatchComposer, BatchPlan, EmptyGroupError, batch_counts, compose_batches
from .denoising import DenoisedQueryGroup, build_dn_queries, flip_labels, jitter_boxes
from .manifest import IngestResult, ManifestError, ResizePolicy, ingest_manifest, serialize_manifest
from .records import KINDS, CaptionRecord, DatasetSpec, ImageRecord, VideoRecord, group_of, multi_hot
from .synthetic import (generate_synthetic_actions, generate_synthetic_captions,
                        generate_synthetic_detection)

__all__ = [
    "BatchComposer", "BatchPlan", "EmptyGroupError", "batch_counts", "compose_batches",
    "DenoisedQueryGroup", "build_dn_queries", "flip_labels", "jitter_boxes",
    "IngestResult", "ManifestError", "ResizePolicy", "ingest_manifest", "serialize_manifest",
    "KINDS", "CaptionRecord", "DatasetSpec", "ImageRecord", "VideoRecord", "group_of", "multi_hot",
    "generate_synthetic_actions", "generate_synthetic_captions", "generate_synthetic_detection",
]
