"""Incremental embeddings of dynamic graphs from evolving biased random walks."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("dynwalk")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .embedding import Embedding, read_embedding, write_embedding
from .graph_store import (GraphSnapshot, NodeIndex, SnapshotDelta, SnapshotSequence, bucket_stream,
                          compute_delta, ingest_snapshot, read_snapshot)
from .pipeline import PipelineConfig, TimestepResult, bench, run
from .sgns import SgnsModel, TrainConfig, embedding_of, train, update_vocabulary, warm_start
from .walker import TransitionCache, WalkCorpus, WalkParams, full_walks, generate_walks

__all__ = [
    "Embedding", "GraphSnapshot", "NodeIndex", "PipelineConfig", "SgnsModel", "SnapshotDelta",
    "SnapshotSequence", "TimestepResult", "TrainConfig", "TransitionCache", "WalkCorpus", "WalkParams",
    "bench", "bucket_stream", "compute_delta", "embedding_of", "full_walks", "generate_walks",
    "ingest_snapshot", "read_embedding", "read_snapshot", "run", "train", "update_vocabulary",
    "warm_start", "write_embedding",
]
