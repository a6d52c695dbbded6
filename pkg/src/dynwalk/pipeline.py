"""End-to-end embedding of a snapshot sequence.

``dyn`` walks from the evolving nodes only and warm-starts the model,
``all`` walks from every node but still warm-starts, and ``static`` trains an
independent cold model per snapshot. All three do the same thing at ``t = 1``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from ._rng import derive_seed
from .embedding import Embedding, write_embedding
from .graph_store import GraphSnapshot, SnapshotSequence, compute_delta
from .sgns import SgnsModel, TrainConfig, load_checkpoint, save_checkpoint, train, update_vocabulary, warm_start
from .walker import TransitionCache, WalkParams, generate_walks

logger = logging.getLogger(__name__)

MODES = ("dyn", "all", "static")


@dataclass(frozen=True)
class PipelineConfig:
    walk: WalkParams = field(default_factory=WalkParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "dyn"
    include_change: bool = True
    output_dir: str | None = None
    seed: int = 0
    workers: int = 1
    skip_train: bool = False
    keep_embeddings: bool = True
    checkpoint: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class TimestepResult:
    timestamp: int
    num_nodes: int
    num_edges: int
    num_evolving: int
    num_walks: int
    num_pairs: int
    new_nodes: int
    stale_nodes: int
    loss: float
    time_delta: float
    time_walks: float
    time_train: float
    embedding: Embedding | None = field(default=None, repr=False)

    @property
    def time_total(self) -> float:
        return self.time_delta + self.time_walks + self.time_train

    def to_json(self) -> dict:
        d = {k: v for k, v in dataclasses.asdict(self).items() if k != "embedding"}
        d["time_total"] = self.time_total
        if not np.isfinite(d["loss"]):
            d["loss"] = None
        return d


def _epochs(cfg: PipelineConfig, t: int) -> int:
    return cfg.train.epochs if t == 1 or cfg.mode == "static" else cfg.train.warm_epochs


def run(snapshots: Iterable[GraphSnapshot], cfg: PipelineConfig, *, start: int = 1,
        model: SgnsModel | None = None, prev: GraphSnapshot | None = None,
        on_step: Callable[[TimestepResult, SgnsModel], None] | None = None) -> list[TimestepResult]:
    """Embed every snapshot in order and return one result per timestamp.

    ``start``, ``model`` and ``prev`` resume a run after timestamp ``start - 1``
    (see :func:`resume`). Only the model and the last two snapshots are held.
    """
    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        if start == 1 and (out_dir / "results.jsonl").exists():
            (out_dir / "results.jsonl").unlink()
    cache = TransitionCache()
    results = []
    it = iter(snapshots)
    if start > 1 and (model is None or prev is None):
        raise ValueError("resuming needs the previous model and snapshot")
    for t, g in enumerate(it, start):
        if g.num_nodes == 0:
            raise ValueError(f"snapshot {t} has no nodes")
        walk = dataclasses.replace(cfg.walk, seed=derive_seed(cfg.seed, 1, t))
        tcfg = dataclasses.replace(cfg.train, seed=derive_seed(cfg.seed, 2, t))

        t0 = time.perf_counter()
        cold = t == 1 or cfg.mode == "static"
        if cold:
            starts = g.nodes
            n_evolving = g.num_nodes
            model = SgnsModel(cfg.train.dim, g.interner, seed=derive_seed(cfg.seed, 3, t))
        else:
            delta = compute_delta(prev, g, include_change=cfg.include_change)
            starts = delta.evolving if cfg.mode == "dyn" else g.nodes
            n_evolving = len(delta.evolving)
            model = warm_start(model)
        t1 = time.perf_counter()
        if cold:
            cache = TransitionCache()
        else:
            cache.invalidate(delta)
        corpus = generate_walks(g, starts, walk, cache, workers=cfg.workers)
        t2 = time.perf_counter()
        upd = update_vocabulary(model, corpus, g.nodes, graph=g, init=cfg.train.init)
        trace = None
        if not cfg.skip_train:
            trace = train(model, corpus, tcfg, epochs=_epochs(cfg, t), workers=cfg.workers)
        t3 = time.perf_counter()

        emb = model.to_embedding() if (cfg.keep_embeddings or out_dir) else None
        res = TimestepResult(
            timestamp=t, num_nodes=g.num_nodes, num_edges=g.num_edges, num_evolving=n_evolving,
            num_walks=len(corpus), num_pairs=(trace.pairs_per_epoch if trace else 0),
            new_nodes=len(upd.new_nodes), stale_nodes=upd.stale,
            loss=(trace.final if trace else float("nan")),
            time_delta=t1 - t0, time_walks=t2 - t1, time_train=t3 - t2,
            embedding=emb if cfg.keep_embeddings else None,
        )
        logger.info("t=%d nodes=%d evolving=%d walks=%d walk=%.3fs train=%.3fs",
                    t, g.num_nodes, n_evolving, len(corpus), res.time_walks, res.time_train)
        if out_dir:
            write_embedding(emb, out_dir / f"emb_{t}.txt")
            with open(out_dir / "results.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(res.to_json()) + "\n")
            if cfg.checkpoint:
                save_checkpoint(model, out_dir / "checkpoint.bin", extra={"timestamp": t})
        if on_step:
            on_step(res, model)
        results.append(res)
        prev = g
    if not results and start == 1:
        raise ValueError("need at least one snapshot")
    return results


def resume(snapshots: Sequence[GraphSnapshot], cfg: PipelineConfig, checkpoint: str | os.PathLike) -> list[TimestepResult]:
    """Continue a run from a checkpoint written after timestamp ``t``.

    ``snapshots`` is the full sequence; snapshots ``t + 1 ..`` are processed.
    A :class:`SnapshotSequence` is re-read through the checkpointed node index;
    an in-memory list must already share that index's label order.
    """
    model, extra = load_checkpoint(checkpoint)
    t = int(extra["timestamp"])
    if isinstance(snapshots, SnapshotSequence):
        snapshots = snapshots.with_interner(model.interner)
    else:
        if snapshots[0].interner.labels[:len(model.interner)] != model.interner.labels:
            raise ValueError("snapshot node index does not match the checkpoint")
        model.interner = snapshots[0].interner
    rest = (snapshots[i] for i in range(t, len(snapshots)))
    return run(rest, cfg, start=t + 1, model=model, prev=snapshots[t - 1])


# --------------------------------------------------------------------------- bench and grid

BENCH_COLUMNS = ("mode", "timestamp", "num_nodes", "num_evolving", "num_walks",
                 "time_delta", "time_walks", "time_train", "time_total")


def warmup_kernels() -> None:
    """Compile the walk and training kernels so the first timed run pays no JIT cost."""
    g = GraphSnapshot.from_edges([("a", "b"), ("b", "c"), ("c", "a")])
    corpus = generate_walks(g, g.nodes, WalkParams(walks_per_node=1, walk_length=4))
    m = SgnsModel(4, g.interner)
    update_vocabulary(m, corpus, g.nodes)
    train(m, corpus, TrainConfig(dim=4, window=2, epochs=1))


def bench(snapshots: Sequence[GraphSnapshot], cfg: PipelineConfig, modes: Iterable[str] = ("dyn", "all")) -> list[dict]:
    """Run each mode with the same seeds and return one timing row per (mode, timestamp)."""
    if len(snapshots) < 2:
        raise ValueError("bench needs at least 2 snapshots")
    modes = list(modes)
    for m in modes:
        if m not in MODES:
            raise ValueError(f"unknown mode {m!r}")
    warmup_kernels()
    rows = []
    for mode in modes:
        results = run(snapshots, cfg.replace(mode=mode, keep_embeddings=False, output_dir=None))
        for r in results:
            rows.append({"mode": mode, "timestamp": r.timestamp, "num_nodes": r.num_nodes,
                         "num_evolving": r.num_evolving, "num_walks": r.num_walks,
                         "time_delta": r.time_delta, "time_walks": r.time_walks,
                         "time_train": r.time_train, "time_total": r.time_total})
    return rows


def bench_totals(rows: list[dict]) -> dict[str, dict[str, float]]:
    """Per-mode sums of the timing columns."""
    out: dict[str, dict[str, float]] = {}
    for r in rows:
        acc = out.setdefault(r["mode"], {"time_delta": 0.0, "time_walks": 0.0, "time_train": 0.0,
                                         "time_total": 0.0, "num_walks": 0})
        for k in acc:
            acc[k] += r[k]
    return out


PQ_GRID = (0.5, 1.0, 2.0, 4.0)


def grid_search(snapshots: Sequence[GraphSnapshot], cfg: PipelineConfig,
                score: Callable[[list[TimestepResult]], float], grid: Iterable[float] = PQ_GRID) -> list[dict]:
    """Re-run the pipeline for every (p, q) cell and score it.

    Returns one row per cell, best first. Nothing is applied to ``cfg``.
    """
    rows = []
    grid = list(grid)
    for p in grid:
        for q in grid:
            walk = dataclasses.replace(cfg.walk, p=p, q=q)
            results = run(snapshots, cfg.replace(walk=walk, output_dir=None, keep_embeddings=True))
            rows.append({"p": p, "q": q, "score": float(score(results))})
    rows.sort(key=lambda r: -r["score"] if np.isfinite(r["score"]) else np.inf)
    return rows
