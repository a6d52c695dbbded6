"""Timestamped graph snapshots: ingestion, bucketing and per-step deltas.

Node labels are interned into dense integer indices through a
:class:`NodeIndex` shared by every snapshot of a run, so an index never
changes meaning between timestamps (a node deleted at ``t`` and re-added at
``t + 3`` gets its old index back).
"""

from __future__ import annotations

import logging
import math
import os
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

Edge = tuple[int, int]


class GraphFormatError(ValueError):
    """Raised for malformed edge lists, event files and snapshot directories."""


class NodeIndex:
    """Bijective label <-> index mapping; indices are assigned on first sight."""

    def __init__(self, labels: Iterable[str] = ()):
        self._labels: list[str] = []
        self._index: dict[str, int] = {}
        for label in labels:
            self.intern(label)

    def intern(self, label: str) -> int:
        idx = self._index.get(label)
        if idx is None:
            idx = len(self._labels)
            self._index[label] = idx
            self._labels.append(label)
        return idx

    def index(self, label: str) -> int:
        return self._index[label]

    def get(self, label: str, default=None):
        return self._index.get(label, default)

    def label(self, idx: int) -> str:
        return self._labels[idx]

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    def __contains__(self, label) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self._labels)


@dataclass(frozen=True, eq=False)
class GraphSnapshot:
    """One graph ``G_t``; immutable once built.

    ``edges`` maps ``(u, v)`` to a positive weight. Undirected edges are stored
    once with ``u <= v``.
    """

    timestamp: int
    edges: Mapping[Edge, float]
    nodes: frozenset[int]
    directed: bool
    interner: NodeIndex = field(repr=False)

    def __post_init__(self):
        for (u, v), w in self.edges.items():
            if not (w > 0 and math.isfinite(w)):
                raise GraphFormatError(f"edge ({u}, {v}) has invalid weight {w!r}")
            if not self.directed and u > v:
                raise GraphFormatError(f"undirected edge ({u}, {v}) is not canonical")
            if u not in self.nodes or v not in self.nodes:
                raise GraphFormatError(f"edge ({u}, {v}) has an endpoint outside the node set")

    @classmethod
    def from_edges(cls, edges: Iterable[tuple], *, timestamp: int = 1, directed: bool = False,
                   interner: NodeIndex | None = None, nodes: Iterable[str] = ()) -> "GraphSnapshot":
        """Build from ``(u, v)`` or ``(u, v, w)`` label tuples; later duplicates win."""
        interner = NodeIndex() if interner is None else interner
        table: dict[Edge, float] = {}
        node_set = {interner.intern(str(n)) for n in nodes}
        for e in edges:
            u, v = interner.intern(str(e[0])), interner.intern(str(e[1]))
            w = float(e[2]) if len(e) > 2 else 1.0
            node_set.add(u)
            node_set.add(v)
            table[canonical(u, v, directed)] = w
        return cls(timestamp, table, frozenset(node_set), directed, interner)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def label(self, idx: int) -> str:
        return self.interner.label(idx)

    def has_edge(self, u: int, v: int) -> bool:
        return canonical(u, v, self.directed) in self.edges

    def weight(self, u: int, v: int) -> float:
        return self.edges[canonical(u, v, self.directed)]

    def neighbors(self, u: int) -> np.ndarray:
        """Out-neighbours of ``u`` in ascending index order."""
        indptr, indices, _ = self.csr
        if u + 1 >= len(indptr):
            return indices[:0]
        return indices[indptr[u]:indptr[u + 1]]

    @cached_property
    def size(self) -> int:
        """Length of the index space covered by the CSR arrays."""
        return max(self.nodes) + 1 if self.nodes else 0

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Out-adjacency as ``(indptr, indices, weights)``, rows sorted by neighbour."""
        return _build_csr(self.edges, self.size, symmetric=not self.directed)

    @cached_property
    def adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        """Symmetrised adjacency ``(indptr, indices)`` used for distance-1 tests."""
        if not self.directed:
            indptr, indices, _ = self.csr
            return indptr, indices
        indptr, indices, _ = _build_csr(self.edges, self.size, symmetric=True)
        return indptr, indices


def canonical(u: int, v: int, directed: bool) -> Edge:
    if directed or u <= v:
        return (u, v)
    return (v, u)


def _build_csr(edges: Mapping[Edge, float], n: int, symmetric: bool):
    m = len(edges)
    if m:
        pairs = np.fromiter((x for e in edges for x in e), dtype=np.int64, count=2 * m).reshape(m, 2)
        weights = np.fromiter(edges.values(), dtype=np.float64, count=m)
    else:
        pairs = np.empty((0, 2), dtype=np.int64)
        weights = np.empty(0, dtype=np.float64)
    src, dst = pairs[:, 0], pairs[:, 1]
    if symmetric:
        loop = src == dst
        src, dst = np.concatenate([src, dst[~loop]]), np.concatenate([dst, src[~loop]])
        weights = np.concatenate([weights, weights[~loop]])
    # a directed graph holding both (u,v) and (v,u) yields duplicates once symmetrised
    order = np.lexsort((dst, src))
    src, dst, weights = src[order], dst[order], weights[order]
    if len(src) > 1:
        keep = np.ones(len(src), dtype=bool)
        keep[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
        if not keep.all():
            src, dst, weights = src[keep], dst[keep], weights[keep]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, dst.astype(np.int64), weights.astype(np.float64)


# --------------------------------------------------------------------------- ingestion


def _parse_weight(token: str, where: str) -> float:
    try:
        w = float(token)
    except ValueError:
        raise GraphFormatError(f"{where}: weight {token!r} is not a number") from None
    if not math.isfinite(w):
        raise GraphFormatError(f"{where}: weight {token!r} is not finite")
    if w <= 0:
        raise GraphFormatError(f"{where}: weight {token!r} is non-positive")
    return w


def _split(line: str) -> list[str]:
    return line.split("\t") if "\t" in line else line.split()


def ingest_snapshot(source: str | Iterable[str], directed: bool = False, *, timestamp: int = 1,
                    interner: NodeIndex | None = None, name: str = "<input>") -> GraphSnapshot:
    """Parse ``u<TAB>v[<TAB>w]`` lines into a validated snapshot.

    ``#`` lines and blank lines are skipped; a repeated pair keeps its last weight.
    """
    lines = source.splitlines() if isinstance(source, str) else source
    interner = NodeIndex() if interner is None else interner
    edges: list[tuple[str, str, float]] = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = _split(line)
        where = f"{name}:{lineno}"
        if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
            raise GraphFormatError(f"{where}: expected 'u<TAB>v[<TAB>w]', got {raw.rstrip()!r}")
        w = _parse_weight(parts[2], where) if len(parts) == 3 else 1.0
        edges.append((parts[0], parts[1], w))
    if not edges:
        raise GraphFormatError(f"{name}: no edges")
    return GraphSnapshot.from_edges(edges, timestamp=timestamp, directed=directed, interner=interner)


def read_snapshot(path: str | os.PathLike, directed: bool = False, *, timestamp: int = 1,
                  interner: NodeIndex | None = None) -> GraphSnapshot:
    with open(path, encoding="utf-8") as fh:
        return ingest_snapshot(fh, directed, timestamp=timestamp, interner=interner, name=str(path))


def write_snapshot(g: GraphSnapshot, path: str | os.PathLike) -> None:
    lab = g.interner.label
    with open(path, "w", encoding="utf-8") as fh:
        for (u, v) in sorted(g.edges):
            fh.write(f"{lab(u)}\t{lab(v)}\t{g.edges[(u, v)]!r}\n")


_SNAPSHOT_RE = re.compile(r"^snapshot_(\d+)\.tsv$")


class SnapshotSequence(Sequence[GraphSnapshot]):
    """Snapshot directory loaded lazily; at most ``keep`` snapshots stay in memory."""

    def __init__(self, root: str | os.PathLike, directed: bool = False,
                 interner: NodeIndex | None = None, keep: int = 2):
        self.root = Path(root)
        if not self.root.is_dir():
            raise GraphFormatError(f"{self.root}: not a directory")
        found = {}
        for p in self.root.iterdir():
            m = _SNAPSHOT_RE.match(p.name)
            if m:
                found[int(m.group(1))] = p
        if not found:
            raise GraphFormatError(f"{self.root}: no snapshot_<t>.tsv files")
        ts = sorted(found)
        if ts != list(range(1, len(ts) + 1)):
            raise GraphFormatError(f"{self.root}: snapshot timestamps must be 1..T without gaps, got {ts}")
        self.paths = [found[t] for t in ts]
        self.directed = directed
        self.interner = NodeIndex() if interner is None else interner
        self._keep = keep
        self._loaded: dict[int, GraphSnapshot] = {}

    def __len__(self) -> int:
        return len(self.paths)

    def with_interner(self, interner: NodeIndex) -> "SnapshotSequence":
        """Same directory, read through another node index (used when resuming)."""
        return SnapshotSequence(self.root, self.directed, interner, self._keep)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        g = self._loaded.get(i)
        if g is None:
            g = read_snapshot(self.paths[i], self.directed, timestamp=i + 1, interner=self.interner)
            self._loaded[i] = g
            while len(self._loaded) > self._keep:
                self._loaded.pop(max(self._loaded, key=lambda k: abs(k - i)))
        return g

    def __iter__(self) -> Iterator[GraphSnapshot]:
        for i in range(len(self)):
            yield self[i]


# --------------------------------------------------------------------------- event streams


@dataclass(frozen=True)
class Event:
    u: str
    v: str
    w: float
    time: float


def read_events(source: str | os.PathLike | Iterable[str]) -> list[Event]:
    """Parse ``u v w epoch_seconds`` lines (tab or whitespace separated)."""
    name = "<events>"
    if isinstance(source, (str, os.PathLike)) and not (isinstance(source, str) and "\n" in source):
        name = str(source)
        with open(source, encoding="utf-8") as fh:
            lines = fh.readlines()
    elif isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = list(source)
    events = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = _split(line)
        where = f"{name}:{lineno}"
        if len(parts) != 4:
            raise GraphFormatError(f"{where}: expected 'u v w epoch_seconds', got {raw.rstrip()!r}")
        w = _parse_weight(parts[2], where)
        try:
            ts = float(parts[3])
        except ValueError:
            raise GraphFormatError(f"{where}: unparseable timestamp {parts[3]!r}") from None
        if not math.isfinite(ts):
            raise GraphFormatError(f"{where}: unparseable timestamp {parts[3]!r}")
        events.append(Event(parts[0], parts[1], w, ts))
    return events


def bucket_stream(events: Iterable[Event | tuple], *, buckets: int | None = None,
                  duration: float | None = None, cumulative: bool = False, directed: bool = False,
                  interner: NodeIndex | None = None) -> list[GraphSnapshot]:
    """Split a timestamped edge stream into consecutive snapshots.

    Exactly one of ``buckets`` (equal-width windows over the observed time span)
    or ``duration`` (fixed window length starting at the earliest event) must be
    given. In cumulative mode snapshot ``k`` holds every event of windows ``1..k``.
    """
    evs = [e if isinstance(e, Event) else Event(str(e[0]), str(e[1]), float(e[2]), e[3]) for e in events]
    if (buckets is None) == (duration is None):
        raise ValueError("give exactly one of buckets= or duration=")
    if buckets is not None and buckets <= 0:
        raise ValueError("number of buckets must be positive")
    if duration is not None and not duration > 0:
        raise ValueError("bucket duration must be positive")
    if not evs:
        raise GraphFormatError("empty event stream")
    times = []
    for e in evs:
        try:
            times.append(float(e.time))
        except (TypeError, ValueError):
            raise GraphFormatError(f"unparseable timestamp {e.time!r}") from None
    order = sorted(range(len(evs)), key=lambda i: times[i])
    t0, t1 = times[order[0]], times[order[-1]]
    if buckets is None:
        buckets = max(1, math.floor((t1 - t0) / duration) + 1)
        width = duration
    else:
        width = (t1 - t0) / buckets
    interner = NodeIndex() if interner is None else interner

    per_bucket: list[list[Event]] = [[] for _ in range(buckets)]
    for i in order:
        b = 0 if width == 0 else min(int((times[i] - t0) / width), buckets - 1)
        per_bucket[b].append(evs[i])

    snapshots = []
    acc: dict[Edge, float] = {}
    acc_nodes: set[int] = set()
    for k, bucket in enumerate(per_bucket, 1):
        if not cumulative:
            acc, acc_nodes = {}, set()
        for e in bucket:
            u, v = interner.intern(e.u), interner.intern(e.v)
            w = _parse_weight(str(e.w), f"event {e}")
            acc[canonical(u, v, directed)] = w
            acc_nodes.update((u, v))
        snapshots.append(GraphSnapshot(k, dict(acc), frozenset(acc_nodes), directed, interner))
    logger.info("bucketed %d events into %d snapshots", len(evs), buckets)
    return snapshots


# --------------------------------------------------------------------------- deltas


@dataclass(frozen=True)
class SnapshotDelta:
    v_add: frozenset[int]
    v_del: frozenset[int]
    e_add: frozenset[Edge]
    e_del: frozenset[Edge]
    e_change: frozenset[tuple[Edge, float, float]]
    evolving: frozenset[int]
    new_weights: Mapping[Edge, float] = field(default_factory=dict, repr=False)

    @property
    def touched(self) -> frozenset[int]:
        """Endpoints of every added, deleted or re-weighted edge."""
        out: set[int] = set()
        for u, v in self.e_add | self.e_del:
            out.update((u, v))
        for (u, v), _, _ in self.e_change:
            out.update((u, v))
        return frozenset(out)

    def is_empty(self) -> bool:
        return not (self.v_add or self.v_del or self.e_add or self.e_del or self.e_change)


def compute_delta(prev: GraphSnapshot, cur: GraphSnapshot, include_change: bool = True) -> SnapshotDelta:
    """Changes from ``prev`` to ``cur`` and the resulting evolving node set.

    The evolving set is every added node plus every current node incident to an
    added or deleted edge. With ``include_change`` (default) endpoints of
    re-weighted edges are included too.
    """
    if prev.directed != cur.directed:
        raise ValueError("cannot diff a directed snapshot against an undirected one")
    if prev.interner is not cur.interner:
        raise ValueError("snapshots must share one NodeIndex")
    pe, ce = prev.edges, cur.edges
    e_add = frozenset(e for e in ce if e not in pe)
    e_del = frozenset(e for e in pe if e not in ce)
    e_change = frozenset((e, pe[e], w) for e, w in ce.items() if e in pe and pe[e] != w)
    v_add = cur.nodes - prev.nodes
    v_del = prev.nodes - cur.nodes

    evolving = set(v_add)
    incident = list(e_add) + list(e_del)
    if include_change:
        incident += [e for e, _, _ in e_change]
    for u, v in incident:
        evolving.add(u)
        evolving.add(v)
    evolving &= cur.nodes
    new_weights = {e: ce[e] for e in e_add}
    new_weights.update({e: w for e, _, w in e_change})
    return SnapshotDelta(v_add, v_del, e_add, e_del, e_change, frozenset(evolving), new_weights)


def apply_delta(prev: GraphSnapshot, delta: SnapshotDelta, timestamp: int | None = None) -> GraphSnapshot:
    """Replay ``delta`` on ``prev``; inverse of :func:`compute_delta`."""
    edges = {e: w for e, w in prev.edges.items() if e not in delta.e_del}
    edges.update(delta.new_weights)
    nodes = (prev.nodes - delta.v_del) | delta.v_add
    ts = prev.timestamp + 1 if timestamp is None else timestamp
    return GraphSnapshot(ts, edges, frozenset(nodes), prev.directed, prev.interner)
