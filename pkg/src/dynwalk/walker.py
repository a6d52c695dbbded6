"""Second-order (p, q)-biased random walks with a reusable transition cache.

Transition tables are alias tables, built the first time a walk crosses a
directed pair ``(prev, cur)`` and kept across timestamps until a delta
touches ``cur`` or one of its neighbours.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numba
import numpy as np
from numba import njit, prange

from ._rng import derive, next_float
from .graph_store import GraphSnapshot, SnapshotDelta

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WalkParams:
    p: float = 0.5
    q: float = 1.0
    walks_per_node: int = 10
    walk_length: int = 80
    seed: int = 0

    def __post_init__(self):
        for name in ("p", "q"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v!r}")
        if self.walks_per_node < 1:
            raise ValueError("walks_per_node must be >= 1")
        if self.walk_length < 1:
            raise ValueError("walk_length must be >= 1")


def transition_weight(prev: int | None, cur: int, nxt: int, params: WalkParams, g: GraphSnapshot) -> float:
    """Unnormalised probability of stepping ``cur -> nxt`` having arrived from ``prev``.

    ``prev=None`` marks the first step of a walk, which is weighted by the edge alone.
    """
    w = g.weight(cur, nxt)
    if prev is None:
        return w
    if nxt == prev:
        return w / params.p
    if g.has_edge(prev, nxt) or (g.directed and g.has_edge(nxt, prev)):
        return w
    return w / params.q


def transition_probs(g: GraphSnapshot, prev: int | None, cur: int, params: WalkParams):
    """Neighbours of ``cur`` and their normalised transition probabilities."""
    nbrs = [int(x) for x in g.neighbors(cur)]
    alpha = np.array([transition_weight(prev, cur, x, params, g) for x in nbrs], dtype=float)
    return np.array(nbrs, dtype=np.int64), alpha / alpha.sum()


# --------------------------------------------------------------------------- kernels


@njit(cache=True)
def _alias_build(probs, n, out_prob, out_alias, off, small, large):
    """Vose alias table for ``probs[:n]`` (need not be normalised) into ``out_*[off:off+n]``."""
    total = 0.0
    for i in range(n):
        total += probs[i]
    ns = 0
    nl = 0
    for i in range(n):
        probs[i] = probs[i] * n / total
        if probs[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        l = large[nl - 1]
        out_prob[off + s] = probs[s]
        out_alias[off + s] = l
        probs[l] = (probs[l] + probs[s]) - 1.0
        if probs[l] < 1.0:
            nl -= 1
            small[ns] = l
            ns += 1
    while nl > 0:
        nl -= 1
        out_prob[off + large[nl]] = 1.0
        out_alias[off + large[nl]] = large[nl]
    while ns > 0:
        ns -= 1
        out_prob[off + small[ns]] = 1.0
        out_alias[off + small[ns]] = small[ns]


@njit(cache=True, inline="always")
def _alias_draw(prob, alias, off, n, state):
    u = next_float(state) * n
    k = int(u)
    if k >= n:
        k = n - 1
    if u - k < prob[off + k]:
        return k
    return alias[off + k]


@njit(cache=True, inline="always")
def _is_adjacent(adj_indptr, adj_indices, a, b):
    lo = adj_indptr[a]
    hi = adj_indptr[a + 1]
    i = lo + np.searchsorted(adj_indices[lo:hi], b)
    return i < hi and adj_indices[i] == b


@njit(cache=True)
def _pair_alpha(indptr, indices, weights, adj_indptr, adj_indices, inv_p, inv_q, prev, cur, alpha):
    lo = indptr[cur]
    n = indptr[cur + 1] - lo
    for j in range(n):
        x = indices[lo + j]
        w = weights[lo + j]
        if x == prev:
            alpha[j] = w * inv_p
        elif _is_adjacent(adj_indptr, adj_indices, prev, x):
            alpha[j] = w
        else:
            alpha[j] = w * inv_q
    return n


@njit(cache=True)
def _pair_table(indptr, indices, weights, adj_indptr, adj_indices, inv_p, inv_q,
                pair_off, pool_prob, pool_alias, pair_built, slot, prev, cur, lookup, store,
                alpha, s_prob, s_alias, small, large):
    """Return (prob, alias, offset) arrays holding the table for the pair at ``slot``."""
    if lookup and pair_built[slot]:
        return pool_prob, pool_alias, pair_off[slot]
    n = _pair_alpha(indptr, indices, weights, adj_indptr, adj_indices, inv_p, inv_q, prev, cur, alpha)
    if store:
        _alias_build(alpha, n, pool_prob, pool_alias, pair_off[slot], small, large)
        pair_built[slot] = 1
        return pool_prob, pool_alias, pair_off[slot]
    _alias_build(alpha, n, s_prob, s_alias, 0, small, large)
    return s_prob, s_alias, 0


@njit(cache=True)
def _node_table(indptr, weights, node_prob, node_alias, node_built, cur, lookup, store,
                alpha, s_prob, s_alias, small, large):
    lo = indptr[cur]
    if lookup and node_built[cur]:
        return node_prob, node_alias, lo
    n = indptr[cur + 1] - lo
    for j in range(n):
        alpha[j] = weights[lo + j]
    if store:
        _alias_build(alpha, n, node_prob, node_alias, lo, small, large)
        node_built[cur] = 1
        return node_prob, node_alias, lo
    _alias_build(alpha, n, s_prob, s_alias, 0, small, large)
    return s_prob, s_alias, 0


@njit(cache=True)
def _walk_range(indptr, indices, weights, adj_indptr, adj_indices, inv_p, inv_q,
                pair_off, pool_prob, pool_alias, pair_built, node_prob, node_alias, node_built,
                starts, gamma, length, seed, lookup, store, out, out_len, lo, hi, max_deg):
    alpha = np.empty(max_deg + 1)
    s_prob = np.empty(max_deg + 1)
    s_alias = np.empty(max_deg + 1, dtype=np.int64)
    small = np.empty(max_deg + 1, dtype=np.int64)
    large = np.empty(max_deg + 1, dtype=np.int64)
    state = np.empty(1, dtype=np.uint64)
    n_rows = len(indptr) - 1
    for j in range(lo, hi):
        start = starts[j // gamma]
        state[0] = derive(seed, start, j % gamma)
        out[j, 0] = start
        n_out = 1
        if length > 1 and start < n_rows and indptr[start + 1] > indptr[start]:
            deg = indptr[start + 1] - indptr[start]
            prob, alias, off = _node_table(indptr, weights, node_prob, node_alias, node_built, start,
                                           lookup, store, alpha, s_prob, s_alias, small, large)
            slot = indptr[start] + _alias_draw(prob, alias, off, deg, state)
            prev = start
            cur = indices[slot]
            out[j, 1] = cur
            n_out = 2
            while n_out < length:
                deg = indptr[cur + 1] - indptr[cur]
                if deg == 0:
                    break
                prob, alias, off = _pair_table(indptr, indices, weights, adj_indptr, adj_indices, inv_p, inv_q,
                                               pair_off, pool_prob, pool_alias, pair_built, slot, prev, cur,
                                               lookup, store, alpha, s_prob, s_alias, small, large)
                slot = indptr[cur] + _alias_draw(prob, alias, off, deg, state)
                prev = cur
                cur = indices[slot]
                out[j, n_out] = cur
                n_out += 1
        out_len[j] = n_out


@njit(cache=True, parallel=True)
def _walk_parallel(indptr, indices, weights, adj_indptr, adj_indices, inv_p, inv_q,
                   pair_off, pool_prob, pool_alias, pair_built, node_prob, node_alias, node_built,
                   starts, gamma, length, seed, lookup, out, out_len, n_chunks, max_deg):
    total = len(starts) * gamma
    step = (total + n_chunks - 1) // n_chunks
    for c in prange(n_chunks):
        lo = c * step
        hi = min(total, lo + step)
        if lo < hi:
            # read-only cache: a miss is rebuilt in thread-local scratch, never published
            _walk_range(indptr, indices, weights, adj_indptr, adj_indices, inv_p, inv_q,
                        pair_off, pool_prob, pool_alias, pair_built, node_prob, node_alias, node_built,
                        starts, gamma, length, seed, lookup, False, out, out_len, lo, hi, max_deg)


@njit(cache=True)
def _sample_pair(indptr, indices, weights, adj_indptr, adj_indices, inv_p, inv_q,
                 pair_off, pool_prob, pool_alias, pair_built, slot, prev, cur, n_draws, seed, max_deg):
    alpha = np.empty(max_deg + 1)
    s_prob = np.empty(max_deg + 1)
    s_alias = np.empty(max_deg + 1, dtype=np.int64)
    small = np.empty(max_deg + 1, dtype=np.int64)
    large = np.empty(max_deg + 1, dtype=np.int64)
    prob, alias, off = _pair_table(indptr, indices, weights, adj_indptr, adj_indices, inv_p, inv_q,
                                   pair_off, pool_prob, pool_alias, pair_built, slot, prev, cur,
                                   True, True, alpha, s_prob, s_alias, small, large)
    deg = indptr[cur + 1] - indptr[cur]
    state = np.empty(1, dtype=np.uint64)
    state[0] = derive(seed, prev, cur)
    out = np.empty(n_draws, dtype=np.int64)
    for i in range(n_draws):
        out[i] = indices[indptr[cur] + _alias_draw(prob, alias, off, deg, state)]
    return out


@njit(cache=True)
def _migrate(old_indptr, old_indices, old_pair_off, old_pool_prob, old_pool_alias, old_built,
             old_node_prob, old_node_alias, old_node_built,
             new_indptr, new_indices, new_pair_off, new_pool_prob, new_pool_alias, new_built,
             new_node_prob, new_node_alias, new_node_built):
    """Copy every still-valid table from the old CSR layout into the new one."""
    n_old = len(old_indptr) - 1
    n_new = len(new_indptr) - 1
    moved = 0
    for cur in range(min(n_old, n_new)):
        if old_node_built[cur]:
            a = old_indptr[cur]
            b = new_indptr[cur]
            n = old_indptr[cur + 1] - a
            for i in range(n):
                new_node_prob[b + i] = old_node_prob[a + i]
                new_node_alias[b + i] = old_node_alias[a + i]
            new_node_built[cur] = 1
    for prev in range(min(n_old, n_new)):
        olo = old_indptr[prev]
        ohi = old_indptr[prev + 1]
        if ohi == olo:
            continue
        for e in range(new_indptr[prev], new_indptr[prev + 1]):
            cur = new_indices[e]
            i = olo + np.searchsorted(old_indices[olo:ohi], cur)
            if i >= ohi or old_indices[i] != cur or not old_built[i]:
                continue
            a = old_pair_off[i]
            b = new_pair_off[e]
            n = old_pair_off[i + 1] - a
            for k in range(n):
                new_pool_prob[b + k] = old_pool_prob[a + k]
                new_pool_alias[b + k] = old_pool_alias[a + k]
            new_built[e] = 1
            moved += 1
    return moved


# --------------------------------------------------------------------------- cache


class TransitionCache:
    """Lazily built alias tables keyed by directed pair ``(prev, cur)``.

    A cache is bound to one snapshot at a time. Moving to the next snapshot
    goes through :func:`invalidate` (drop entries the delta made stale) and
    then :meth:`bind`, which carries the surviving entries over.
    """

    def __init__(self):
        self.graph: GraphSnapshot | None = None
        self.pq: tuple[float, float] | None = None
        self._validated = False

    def _allocate(self, g: GraphSnapshot):
        indptr, indices, weights = g.csr
        deg = np.diff(indptr)
        block = deg[indices] if len(indices) else np.empty(0, dtype=np.int64)
        pair_off = np.zeros(len(indices) + 1, dtype=np.int64)
        np.cumsum(block, out=pair_off[1:])
        self.pair_off = pair_off
        self.pool_prob = np.empty(pair_off[-1])
        self.pool_alias = np.empty(pair_off[-1], dtype=np.int64)
        self.pair_built = np.zeros(len(indices), dtype=np.uint8)
        self.node_prob = np.empty(len(indices))
        self.node_alias = np.empty(len(indices), dtype=np.int64)
        self.node_built = np.zeros(len(indptr) - 1, dtype=np.uint8)
        self.max_deg = int(deg.max()) if len(deg) else 0

    def bind(self, g: GraphSnapshot, params: WalkParams) -> None:
        pq = (float(params.p), float(params.q))
        if self.graph is g and self.pq == pq:
            return
        old = self.graph
        old_arrays = None
        if old is not None and self.pq == pq and (self._validated or old.edges == g.edges):
            old_arrays = (old.csr[0], old.csr[1], self.pair_off, self.pool_prob, self.pool_alias, self.pair_built,
                          self.node_prob, self.node_alias, self.node_built)
        self._allocate(g)
        if old_arrays is not None:
            indptr, indices, _ = g.csr
            moved = _migrate(*old_arrays, indptr, indices, self.pair_off, self.pool_prob, self.pool_alias,
                             self.pair_built, self.node_prob, self.node_alias, self.node_built)
            logger.debug("transition cache: carried %d pair tables to t=%d", moved, g.timestamp)
        self.graph = g
        self.pq = pq
        self._validated = False

    def clear(self) -> None:
        if self.graph is not None:
            self.pair_built[:] = 0
            self.node_built[:] = 0

    def invalidate(self, delta: SnapshotDelta) -> None:
        """Drop every entry whose ``cur`` or a neighbour of ``cur`` was touched by ``delta``."""
        self._validated = True
        if self.graph is None:
            return
        touched = np.fromiter(delta.touched, dtype=np.int64)
        touched = touched[touched < self.graph.size]
        if len(touched) == 0:
            return
        indptr, indices, _ = self.graph.csr
        n = len(indptr) - 1
        is_touched = np.zeros(n, dtype=bool)
        is_touched[touched] = True
        dirty = is_touched.copy()
        src = np.repeat(np.arange(n), np.diff(indptr))
        dirty[src[is_touched[indices]]] = True
        self.node_built[dirty] = 0
        self.pair_built[dirty[indices]] = 0

    def keys(self) -> set[tuple[int, int]]:
        """Directed pairs ``(prev, cur)`` with a built table."""
        if self.graph is None:
            return set()
        indptr, indices, _ = self.graph.csr
        src = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
        hit = self.pair_built.astype(bool)
        return set(zip(src[hit].tolist(), indices[hit].tolist()))

    def node_keys(self) -> set[int]:
        if self.graph is None:
            return set()
        return set(np.flatnonzero(self.node_built).tolist())

    def __len__(self) -> int:
        return 0 if self.graph is None else int(self.pair_built.sum())

    def kernel_args(self):
        g = self.graph
        indptr, indices, weights = g.csr
        adj_indptr, adj_indices = g.adjacency
        p, q = self.pq
        return (indptr, indices, weights, adj_indptr, adj_indices, 1.0 / p, 1.0 / q,
                self.pair_off, self.pool_prob, self.pool_alias, self.pair_built,
                self.node_prob, self.node_alias, self.node_built)

    def table(self, prev: int, cur: int) -> np.ndarray:
        """Normalised transition distribution over ``neighbors(cur)`` from the cached alias table."""
        indptr, indices, _ = self.graph.csr
        lo, hi = indptr[prev], indptr[prev + 1]
        slot = lo + int(np.searchsorted(indices[lo:hi], cur))
        if not self.pair_built[slot] or indices[slot] != cur:
            raise KeyError((prev, cur))
        a, b = self.pair_off[slot], self.pair_off[slot + 1]
        n = b - a
        prob, alias = self.pool_prob[a:b], self.pool_alias[a:b]
        dist = prob / n
        np.add.at(dist, alias, (1.0 - prob) / n)
        return dist


def invalidate(cache: TransitionCache, delta: SnapshotDelta) -> None:
    cache.invalidate(delta)


# --------------------------------------------------------------------------- corpora


@dataclass
class WalkCorpus:
    """Walks stored flat: walk ``i`` is ``tokens[indptr[i]:indptr[i+1]]`` (node indices)."""

    tokens: np.ndarray
    indptr: np.ndarray

    @classmethod
    def empty(cls) -> "WalkCorpus":
        return cls(np.empty(0, dtype=np.int64), np.zeros(1, dtype=np.int64))

    @classmethod
    def from_walks(cls, walks: Iterable[Sequence[int]]) -> "WalkCorpus":
        walks = [np.asarray(w, dtype=np.int64) for w in walks]
        indptr = np.zeros(len(walks) + 1, dtype=np.int64)
        np.cumsum([len(w) for w in walks], out=indptr[1:])
        tokens = np.concatenate(walks) if walks else np.empty(0, dtype=np.int64)
        return cls(tokens, indptr)

    def __len__(self) -> int:
        return len(self.indptr) - 1

    def __getitem__(self, i: int) -> np.ndarray:
        return self.tokens[self.indptr[i]:self.indptr[i + 1]]

    def __iter__(self) -> Iterator[np.ndarray]:
        for i in range(len(self)):
            yield self[i]

    @property
    def num_tokens(self) -> int:
        return len(self.tokens)

    def starts(self) -> np.ndarray:
        return self.tokens[self.indptr[:-1]]

    def tolist(self) -> list[list[int]]:
        return [w.tolist() for w in self]

    def concat(self, other: "WalkCorpus") -> "WalkCorpus":
        return WalkCorpus(np.concatenate([self.tokens, other.tokens]),
                          np.concatenate([self.indptr, other.indptr[1:] + self.indptr[-1]]))

    def dump(self, path: str | os.PathLike, labels: Sequence[str]) -> None:
        """One walk per line, space separated node labels."""
        with open(path, "w", encoding="utf-8") as fh:
            for walk in self:
                fh.write(" ".join(labels[i] for i in walk))
                fh.write("\n")


def _set_threads(workers: int) -> int:
    workers = max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(workers)
    return workers


def generate_walks(g: GraphSnapshot, starts: Iterable[int], params: WalkParams,
                   cache: TransitionCache | None = None, *, cached: bool = True, workers: int = 1) -> WalkCorpus:
    """``walks_per_node`` walks from each start node, concatenated in start-index order.

    Each walk owns a random stream seeded from ``(params.seed, start, walk index)``,
    so the corpus does not depend on ``workers`` or on cache state.
    """
    starts = np.array(sorted(set(int(s) for s in starts)), dtype=np.int64)
    if len(starts) == 0:
        return WalkCorpus.empty()
    missing = [int(s) for s in starts if s not in g.nodes]
    if missing:
        raise ValueError(f"start nodes not in snapshot: {missing[:5]}")
    cache = TransitionCache() if cache is None else cache
    cache.bind(g, params)
    gamma, length = params.walks_per_node, params.walk_length
    total = len(starts) * gamma
    out = np.empty((total, length), dtype=np.int64)
    out_len = np.empty(total, dtype=np.int64)
    seed = np.uint64(params.seed & 0xFFFFFFFFFFFFFFFF)
    args = cache.kernel_args()
    if workers > 1:
        n = _set_threads(workers)
        _walk_parallel(*args, starts, gamma, length, seed, cached, out, out_len, 4 * n, cache.max_deg)
    else:
        _walk_range(*args, starts, gamma, length, seed, cached, cached, out, out_len, 0, total, cache.max_deg)
    indptr = np.zeros(total + 1, dtype=np.int64)
    np.cumsum(out_len, out=indptr[1:])
    tokens = out[np.arange(length)[None, :] < out_len[:, None]]
    return WalkCorpus(tokens, indptr)


def full_walks(g: GraphSnapshot, params: WalkParams, cache: TransitionCache | None = None, **kw) -> WalkCorpus:
    return generate_walks(g, g.nodes, params, cache, **kw)


def sample_transitions(g: GraphSnapshot, prev: int, cur: int, params: WalkParams, n: int,
                       cache: TransitionCache | None = None, seed: int | None = None) -> np.ndarray:
    """Draw ``n`` next nodes for the pair ``(prev, cur)`` from its alias table."""
    cache = TransitionCache() if cache is None else cache
    cache.bind(g, params)
    indptr, indices, _ = g.csr
    lo, hi = indptr[prev], indptr[prev + 1]
    slot = lo + int(np.searchsorted(indices[lo:hi], cur))
    if slot >= hi or indices[slot] != cur:
        raise ValueError(f"({prev}, {cur}) is not an edge")
    seed = params.seed if seed is None else seed
    args = cache.kernel_args()
    return _sample_pair(*args[:11], slot, prev, cur, n, np.uint64(seed & 0xFFFFFFFFFFFFFFFF), cache.max_deg)
