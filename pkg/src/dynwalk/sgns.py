"""Skip-gram with negative sampling over walk corpora, warm-startable.

The model keeps one row per node ever seen. Rows are appended when a corpus
brings in new nodes and never move afterwards, so the embedding at time ``t``
lives in the same coordinate system as the one at ``t - 1``. Nodes that left
the graph keep their last vector and are frozen.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numba
import numpy as np
from numba import njit, prange

from ._rng import derive, next_float
from .embedding import Embedding
from .graph_store import GraphSnapshot, NodeIndex
from .walker import WalkCorpus

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 128
    window: int = 10
    negatives: int = 5
    epochs: int = 5
    warm_epochs: int = 2
    lr0: float = 0.025
    lr1: float = 0.0001
    neg_exponent: float = 0.75
    negative_source: str = "current"
    init: str = "uniform"
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("dim", "window", "negatives", "epochs", "warm_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (self.lr0 > 0 and 0 < self.lr1 <= self.lr0):
            raise ValueError("learning rates must satisfy 0 < lr1 <= lr0")
        if not math.isfinite(self.neg_exponent):
            raise ValueError("neg_exponent must be finite")
        if self.negative_source not in ("current", "cumulative"):
            raise ValueError("negative_source must be 'current' or 'cumulative'")
        if self.init not in ("uniform", "neighbor_mean"):
            raise ValueError("init must be 'uniform' or 'neighbor_mean'")


class Vocabulary:
    """Node -> row map with per-row corpus counts and stale flags."""

    def __init__(self):
        self.node_ids = np.empty(0, dtype=np.int64)
        self.counts = np.empty(0, dtype=np.int64)
        self.cum_counts = np.empty(0, dtype=np.int64)
        self.stale = np.empty(0, dtype=bool)
        self._row_of_node = np.full(0, -1, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.node_ids)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_of_nodes(self, size: int) -> np.ndarray:
        if len(self._row_of_node) < size:
            grown = np.full(size, -1, dtype=np.int64)
            grown[:len(self._row_of_node)] = self._row_of_node
            self._row_of_node = grown
        return self._row_of_node

    def row(self, node: int) -> int:
        if 0 <= node < len(self._row_of_node):
            return int(self._row_of_node[node])
        return -1

    def append(self, nodes: np.ndarray) -> np.ndarray:
        start = len(self.node_ids)
        rows = np.arange(start, start + len(nodes))
        self.node_ids = np.concatenate([self.node_ids, nodes])
        self.counts = np.concatenate([self.counts, np.zeros(len(nodes), dtype=np.int64)])
        self.cum_counts = np.concatenate([self.cum_counts, np.zeros(len(nodes), dtype=np.int64)])
        self.stale = np.concatenate([self.stale, np.zeros(len(nodes), dtype=bool)])
        lookup = self.row_of_nodes(int(nodes.max()) + 1 if len(nodes) else 0)
        lookup[nodes] = rows
        return rows


@dataclass
class SgnsModel:
    """Input matrix ``Z`` (the embedding) and context matrix ``C`` over one vocabulary."""

    dim: int
    interner: NodeIndex = field(default_factory=NodeIndex, repr=False)
    seed: int = 0
    Z: np.ndarray = None
    C: np.ndarray = None
    vocab: Vocabulary = field(default_factory=Vocabulary, repr=False)

    def __post_init__(self):
        if self.Z is None:
            self.Z = np.empty((0, self.dim))
            self.C = np.empty((0, self.dim))

    def __len__(self) -> int:
        return len(self.vocab)

    @property
    def labels(self) -> list[str]:
        lab = self.interner.label
        return [lab(int(i)) for i in self.vocab.node_ids]

    def to_embedding(self) -> Embedding:
        labels = self.labels
        stale = frozenset(lab for lab, s in zip(labels, self.vocab.stale) if s)
        return Embedding(labels, self.Z.copy(), stale)


@dataclass(frozen=True)
class VocabUpdate:
    new_nodes: list[int]
    refreshed_counts: bool
    stale: int = 0


@dataclass
class LossTrace:
    epoch_loss: list[float]
    pairs_per_epoch: int
    negative_rows: np.ndarray

    @property
    def final(self) -> float:
        return self.epoch_loss[-1] if self.epoch_loss else float("nan")


# --------------------------------------------------------------------------- vocabulary


def update_vocabulary(model: SgnsModel, corpus: WalkCorpus, present: Iterable[int] | None = None,
                      graph: GraphSnapshot | None = None, init: str = "uniform") -> VocabUpdate:
    """Add rows for unseen corpus nodes and refresh frequency counts from ``corpus``.

    ``present`` is the current node set; vocabulary nodes outside it are marked
    stale, nodes inside it are revived. ``init="neighbor_mean"`` seeds a new row
    with the mean vector of its already-embedded neighbours in ``graph``.
    """
    vocab = model.vocab
    new_nodes: np.ndarray = np.empty(0, dtype=np.int64)
    if corpus.num_tokens:
        seen = np.unique(corpus.tokens)
        lookup = vocab.row_of_nodes(int(seen.max()) + 1)
        new_nodes = seen[lookup[seen] < 0]
        if len(new_nodes):
            old_rows = len(vocab)
            rows = vocab.append(new_nodes)
            d = model.dim
            rng = np.random.default_rng([model.seed & 0xFFFFFFFF, old_rows])
            z_new = (rng.random((len(rows), d)) - 0.5) / d
            if init == "neighbor_mean":
                if graph is None:
                    raise ValueError("neighbor_mean init needs the current graph")
                lookup = vocab.row_of_nodes(0)
                for k, node in enumerate(new_nodes):
                    nb = graph.neighbors(int(node))
                    nb_rows = lookup[nb[nb < len(lookup)]]
                    nb_rows = nb_rows[(nb_rows >= 0) & (nb_rows < old_rows)]
                    if len(nb_rows):
                        z_new[k] = model.Z[nb_rows].mean(axis=0)
            model.Z = np.vstack([model.Z, z_new])
            model.C = np.vstack([model.C, np.zeros((len(rows), d))])
        rows = vocab.row_of_nodes(0)[corpus.tokens]
        vocab.counts = np.bincount(rows, minlength=len(vocab)).astype(np.int64)
        vocab.cum_counts = vocab.cum_counts + vocab.counts
    n_stale = 0
    if present is not None and len(vocab):
        present_arr = np.fromiter((int(v) for v in present), dtype=np.int64)
        alive = np.zeros(len(vocab), dtype=bool)
        lookup = vocab.row_of_nodes(int(present_arr.max()) + 1 if len(present_arr) else 0)
        hit = lookup[present_arr] if len(present_arr) else present_arr
        alive[hit[hit >= 0]] = True
        vocab.stale = ~alive
        n_stale = int(vocab.stale.sum())
    return VocabUpdate([int(v) for v in new_nodes], bool(corpus.num_tokens), n_stale)


# --------------------------------------------------------------------------- objective


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def log_sigmoid(x):
    x = np.asarray(x, dtype=float)
    return -np.logaddexp(0.0, -x)


def pair_loss(zu: np.ndarray, cv: np.ndarray, cneg: np.ndarray) -> float:
    """Negative log-likelihood of one (center, context) pair and its negatives."""
    return float(-log_sigmoid(zu @ cv) - log_sigmoid(-(cneg @ zu)).sum())


def pair_grad(zu: np.ndarray, cv: np.ndarray, cneg: np.ndarray):
    """Gradients of :func:`pair_loss` w.r.t. ``zu``, ``cv`` and each row of ``cneg``."""
    gp = sigmoid(zu @ cv) - 1.0
    gn = sigmoid(cneg @ zu)
    g_zu = gp * cv + gn @ cneg
    return g_zu, gp * zu, gn[:, None] * zu[None, :]


def window_pairs(walk: Iterable[int], window: int) -> list[tuple[int, int]]:
    """All ordered (center, context) pairs at distance 1..window, in training order."""
    walk = list(walk)
    out = []
    for i, u in enumerate(walk):
        for j in range(max(0, i - window), min(len(walk), i + window + 1)):
            if j != i:
                out.append((u, walk[j]))
    return out


# --------------------------------------------------------------------------- kernels


@njit(cache=True)
def _pairs_per_walk(indptr, window):
    n = len(indptr) - 1
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        L = indptr[i + 1] - indptr[i]
        s = 0
        for k in range(L):
            s += min(k, window) + min(L - 1 - k, window)
        out[i] = s
    return out


@njit(cache=True, inline="always")
def _draw_negative(cum, neg_rows, state):
    u = next_float(state) * cum[-1]
    i = np.searchsorted(cum, u, side="right")
    if i >= len(cum):
        i = len(cum) - 1
    return neg_rows[i]


@njit(cache=True, fastmath=True)
def _train_walks(Z, C, tokens, indptr, order, pair_start, lo, hi, window, k, cum, neg_rows,
                 lr0, lr1, total_pairs, seed, epoch, neg_mark, neu):
    d = Z.shape[1]
    state = np.empty(1, dtype=np.uint64)
    loss = 0.0
    count = 0
    for oi in range(lo, hi):
        wi = order[oi]
        state[0] = derive(seed, epoch, wi)
        done = pair_start[oi]
        a = indptr[wi]
        b = indptr[wi + 1]
        for i in range(a, b):
            zu = Z[tokens[i]]
            jlo = max(a, i - window)
            jhi = min(b, i + window + 1)
            for j in range(jlo, jhi):
                if j == i:
                    continue
                lr = lr0 - (lr0 - lr1) * (done / total_pairs)
                done += 1
                cv = C[tokens[j]]
                f = 0.0
                for x in range(d):
                    f += zu[x] * cv[x]
                e = math.exp(-abs(f))
                sp = 1.0 / (1.0 + e) if f >= 0 else e / (1.0 + e)
                g = sp - 1.0
                loss += math.log1p(e) - min(f, 0.0)
                for x in range(d):
                    neu[x] = g * cv[x]
                    cv[x] -= lr * g * zu[x]
                for s in range(k):
                    n = _draw_negative(cum, neg_rows, state)
                    neg_mark[n] = 1
                    cn = C[n]
                    f = 0.0
                    for x in range(d):
                        f += zu[x] * cn[x]
                    e = math.exp(-abs(f))
                    g = 1.0 / (1.0 + e) if f >= 0 else e / (1.0 + e)
                    loss += math.log1p(e) + max(f, 0.0)
                    for x in range(d):
                        neu[x] += g * cn[x]
                        cn[x] -= lr * g * zu[x]
                for x in range(d):
                    zu[x] -= lr * neu[x]
                count += 1
    return loss, count


@njit(cache=True, parallel=True)
def _train_parallel(Z, C, tokens, indptr, order, pair_start, window, k, cum, neg_rows,
                    lr0, lr1, total_pairs, seed, epoch, neg_mark, n_chunks):
    # lock-free: chunks race on shared rows of Z and C, updates may be lost
    n = len(order)
    step = (n + n_chunks - 1) // n_chunks
    losses = np.zeros(n_chunks)
    counts = np.zeros(n_chunks, dtype=np.int64)
    for c in prange(n_chunks):
        lo = c * step
        hi = min(n, lo + step)
        if lo < hi:
            neu = np.empty(Z.shape[1])
            l, m = _train_walks(Z, C, tokens, indptr, order, pair_start, lo, hi, window, k, cum, neg_rows,
                                lr0, lr1, total_pairs, seed, epoch, neg_mark, neu)
            losses[c] = l
            counts[c] = m
    return losses.sum(), counts.sum()


@njit(cache=True)
def _corpus_loss(Z, C, tokens, indptr, window, k, cum, neg_rows, seed):
    # same pairs as training, frozen parameters, negatives fixed by seed
    d = Z.shape[1]
    state = np.empty(1, dtype=np.uint64)
    loss = 0.0
    count = 0
    for wi in range(len(indptr) - 1):
        state[0] = derive(seed, 0, wi)
        a = indptr[wi]
        b = indptr[wi + 1]
        for i in range(a, b):
            zu = Z[tokens[i]]
            for j in range(max(a, i - window), min(b, i + window + 1)):
                if j == i:
                    continue
                f = 0.0
                cv = C[tokens[j]]
                for x in range(d):
                    f += zu[x] * cv[x]
                loss += math.log1p(math.exp(-abs(f))) - min(f, 0.0)
                for s in range(k):
                    cn = C[_draw_negative(cum, neg_rows, state)]
                    f = 0.0
                    for x in range(d):
                        f += zu[x] * cn[x]
                    loss += math.log1p(math.exp(-abs(f))) + max(f, 0.0)
                count += 1
    return loss, count


@njit(cache=True)
def _sample_many(cum, neg_rows, n, seed):
    state = np.empty(1, dtype=np.uint64)
    state[0] = derive(seed, 0, 0)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _draw_negative(cum, neg_rows, state)
    return out


# --------------------------------------------------------------------------- training


def negative_distribution(model: SgnsModel, cfg: TrainConfig) -> np.ndarray:
    """Per-row probability of being drawn as a negative: ``count ** beta``, stale rows excluded."""
    counts = model.vocab.cum_counts if cfg.negative_source == "cumulative" else model.vocab.counts
    weights = np.where((counts > 0) & ~model.vocab.stale, counts.astype(float) ** cfg.neg_exponent, 0.0)
    total = weights.sum()
    return weights / total if total > 0 else weights


def _negative_table(model: SgnsModel, cfg: TrainConfig):
    probs = negative_distribution(model, cfg)
    rows = np.flatnonzero(probs > 0).astype(np.int64)
    return np.cumsum(probs[rows]), rows


def sample_negatives(model: SgnsModel, cfg: TrainConfig, n: int, seed: int = 0) -> np.ndarray:
    cum, rows = _negative_table(model, cfg)
    if len(rows) == 0:
        raise ValueError("no rows eligible as negatives")
    return _sample_many(cum, rows, n, np.uint64(seed & 0xFFFFFFFFFFFFFFFF))


def _corpus_rows(model: SgnsModel, corpus: WalkCorpus) -> np.ndarray:
    lookup = model.vocab.row_of_nodes(0)
    if corpus.tokens.max() >= len(lookup) or (lookup[corpus.tokens] < 0).any():
        raise ValueError("corpus contains nodes missing from the vocabulary; call update_vocabulary first")
    return lookup[corpus.tokens]


def corpus_loss(model: SgnsModel, corpus: WalkCorpus, cfg: TrainConfig, seed: int = 0) -> float:
    """Mean objective per window pair with the parameters held fixed.

    Negatives depend only on ``seed`` and the walk index, so calls with the
    same seed score the same sample. The running loss reported by
    :func:`train` is measured mid-update and sits below this value.
    """
    if corpus.num_tokens == 0:
        return float("nan")
    rows = _corpus_rows(model, corpus)
    cum, neg_rows = _negative_table(model, cfg)
    if len(neg_rows) == 0:
        raise ValueError("negative distribution is empty")
    loss, count = _corpus_loss(model.Z, model.C, rows, corpus.indptr, cfg.window, cfg.negatives, cum, neg_rows,
                               np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    return loss / count if count else float("nan")


def train(model: SgnsModel, corpus: WalkCorpus, cfg: TrainConfig, *, epochs: int | None = None,
          workers: int = 1, on_epoch: Callable[[int, SgnsModel], None] | None = None) -> LossTrace:
    """Run SGD over every window pair of ``corpus``; returns mean loss per pair for each epoch.

    ``workers > 1`` switches to lock-free parallel updates, which are not reproducible.
    ``on_epoch(epoch, model)`` is called after each epoch.
    """
    epochs = cfg.epochs if epochs is None else epochs
    vocab = model.vocab
    if corpus.num_tokens == 0 or epochs == 0:
        return LossTrace([], 0, np.empty(0, dtype=np.int64))
    rows = _corpus_rows(model, corpus)
    if vocab.stale[rows].any():
        raise ValueError("corpus contains stale nodes")
    if model.Z.shape != model.C.shape:
        raise ValueError("Z and C shapes differ")

    cum, neg_rows = _negative_table(model, cfg)
    if len(neg_rows) == 0:
        raise ValueError("negative distribution is empty")
    per_walk = _pairs_per_walk(corpus.indptr, cfg.window)
    pairs_per_epoch = int(per_walk.sum())
    total = float(max(1, pairs_per_epoch * epochs))
    neg_mark = np.zeros(len(vocab), dtype=np.uint8)
    seed = np.uint64(cfg.seed & 0xFFFFFFFFFFFFFFFF)
    losses = []
    rng = np.random.default_rng(cfg.seed & 0xFFFFFFFF)
    neu = np.empty(model.dim)
    if workers > 1:
        workers = max(1, min(workers, numba.config.NUMBA_NUM_THREADS))
        numba.set_num_threads(workers)
    for ep in range(epochs):
        order = rng.permutation(len(corpus)) if cfg.shuffle else np.arange(len(corpus))
        pair_start = np.zeros(len(order), dtype=np.int64)
        np.cumsum(per_walk[order][:-1], out=pair_start[1:])
        pair_start += ep * pairs_per_epoch
        if workers > 1:
            loss, count = _train_parallel(model.Z, model.C, rows, corpus.indptr, order, pair_start, cfg.window,
                                          cfg.negatives, cum, neg_rows, cfg.lr0, cfg.lr1, total, seed, ep,
                                          neg_mark, 4 * workers)
        else:
            loss, count = _train_walks(model.Z, model.C, rows, corpus.indptr, order, pair_start, 0, len(order),
                                       cfg.window, cfg.negatives, cum, neg_rows, cfg.lr0, cfg.lr1, total,
                                       seed, ep, neg_mark, neu)
        losses.append(loss / count if count else float("nan"))
        logger.debug("epoch %d: %d pairs, mean loss %.5f", ep + 1, count, losses[-1])
        if on_epoch is not None:
            on_epoch(ep + 1, model)
    return LossTrace(losses, pairs_per_epoch, np.flatnonzero(neg_mark))


def warm_start(prev: SgnsModel) -> SgnsModel:
    """Independent copy of ``prev`` to continue training from."""
    model = copy.copy(prev)
    model.Z = prev.Z.copy()
    model.C = prev.C.copy()
    model.vocab = copy.deepcopy(prev.vocab)
    return model


def embedding_of(model: SgnsModel, node: str | int) -> np.ndarray | None:
    """Z row of ``node`` (a label or an interned index), stale rows included."""
    idx = model.interner.get(node) if isinstance(node, str) else node
    if idx is None:
        return None
    r = model.vocab.row(int(idx))
    return None if r < 0 else model.Z[r].copy()


# --------------------------------------------------------------------------- checkpoint

_MAGIC = b"DWCKPT01"


def save_checkpoint(model: SgnsModel, path: str | os.PathLike, extra: dict | None = None) -> None:
    """Write the full model in a little-endian binary layout.

    Layout::

        8 bytes   magic b"DWCKPT01"
        u32       header length H
        H bytes   UTF-8 JSON: rows, dim, seed, interner labels, extra
        f64[rows*dim]  Z (row major)
        f64[rows*dim]  C
        i64[rows]      node index per row
        i64[rows]      current counts
        i64[rows]      cumulative counts
        u8[rows]       stale flags
    """
    rows, dim = model.Z.shape
    header = json.dumps({"rows": rows, "dim": dim, "seed": model.seed,
                         "labels": model.interner.labels, "extra": extra or {}}).encode("utf-8")
    v = model.vocab
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(model.Z, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.C, dtype="<f8").tobytes())
        fh.write(v.node_ids.astype("<i8").tobytes())
        fh.write(v.counts.astype("<i8").tobytes())
        fh.write(v.cum_counts.astype("<i8").tobytes())
        fh.write(v.stale.astype("u1").tobytes())


def load_checkpoint(path: str | os.PathLike) -> tuple[SgnsModel, dict]:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        rows, dim = header["rows"], header["dim"]

        def arr(dtype, n):
            size = np.dtype(dtype).itemsize * n
            return np.frombuffer(fh.read(size), dtype=dtype, count=n).astype(np.dtype(dtype).newbyteorder("="))

        Z = arr("<f8", rows * dim).reshape(rows, dim)
        C = arr("<f8", rows * dim).reshape(rows, dim)
        node_ids = arr("<i8", rows)
        counts = arr("<i8", rows)
        cum = arr("<i8", rows)
        stale = arr("u1", rows).astype(bool)
    interner = NodeIndex(header["labels"])
    model = SgnsModel(dim, interner, header["seed"], Z.copy(), C.copy())
    model.vocab.append(node_ids.astype(np.int64))
    model.vocab.counts = counts.astype(np.int64)
    model.vocab.cum_counts = cum.astype(np.int64)
    model.vocab.stale = stale
    return model, header["extra"]
