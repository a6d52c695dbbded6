"""Churn-controlled synthetic dynamic graphs.

Each step removes a fraction of the current edges and adds the same number
of fresh ones, so the edge count stays fixed. Nodes are split into equal
blocks; ``mixing`` is the probability a new edge ignores the blocks.
Shock steps replace their fraction of edges with uniformly random ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .graph_store import GraphSnapshot, NodeIndex, write_snapshot


@dataclass
class SynthSpec:
    n: int = 1000
    edges: int = 3000
    steps: int = 10
    churn: float = 0.01
    communities: int = 1
    mixing: float = 0.1
    shocks: Mapping[int, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.edges < 1 or self.steps < 1:
            raise ValueError("need n >= 2, edges >= 1, steps >= 1")
        if not 0 <= self.churn <= 1:
            raise ValueError("churn must be in [0, 1]")
        if self.edges > self.n * (self.n - 1) // 4:
            raise ValueError("too many edges for n; keep the graph at most half dense")
        if not 1 <= self.communities <= self.n:
            raise ValueError("communities must be in [1, n]")


def community_of(spec: SynthSpec) -> np.ndarray:
    return (np.arange(spec.n) * spec.communities) // spec.n


def _draw_edge(rng, spec: SynthSpec, comm: np.ndarray, blocks: list[np.ndarray], uniform: bool):
    while True:
        if uniform or spec.communities == 1 or rng.random() < spec.mixing:
            u, v = rng.integers(0, spec.n, 2)
        else:
            members = blocks[rng.integers(0, spec.communities)]
            if len(members) < 2:
                continue
            u, v = members[rng.integers(0, len(members), 2)]
        if u != v:
            return (int(min(u, v)), int(max(u, v)))


def generate(spec: SynthSpec) -> list[set[tuple[int, int]]]:
    """Edge sets (pairs of node ids ``0..n-1``) for snapshots ``1..steps``."""
    rng = np.random.default_rng(spec.seed)
    comm = community_of(spec)
    blocks = [np.flatnonzero(comm == c) for c in range(spec.communities)]
    edges: set[tuple[int, int]] = set()
    while len(edges) < spec.edges:
        edges.add(_draw_edge(rng, spec, comm, blocks, False))
    out = [set(edges)]
    for t in range(2, spec.steps + 1):
        frac = spec.shocks.get(t, spec.churn)
        shock = t in spec.shocks
        k = int(round(frac * len(edges)))
        current = sorted(edges)
        drop = rng.choice(len(current), size=k, replace=False) if k else []
        for i in drop:
            edges.discard(current[i])
        removed = {current[i] for i in drop}
        while len(edges) < spec.edges:
            e = _draw_edge(rng, spec, comm, blocks, shock)
            if e not in removed:
                edges.add(e)
        out.append(set(edges))
    return out


def snapshots(spec: SynthSpec, interner: NodeIndex | None = None) -> list[GraphSnapshot]:
    interner = NodeIndex() if interner is None else interner
    return [GraphSnapshot.from_edges(((str(u), str(v)) for u, v in sorted(es)), timestamp=t, interner=interner)
            for t, es in enumerate(generate(spec), 1)]


def write(spec: SynthSpec, out_dir: str | Path, labels: bool = True) -> list[Path]:
    """Write ``snapshot_<t>.tsv`` files (and ``labels.tsv`` with block ids)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for g in snapshots(spec):
        p = out / f"snapshot_{g.timestamp}.tsv"
        write_snapshot(g, p)
        paths.append(p)
    if labels:
        comm = community_of(spec)
        with open(out / "labels.tsv", "w", encoding="utf-8") as fh:
            for v in range(spec.n):
                fh.write(f"{v}\tc{comm[v]}\n")
    return paths
