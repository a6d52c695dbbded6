"""Downstream tasks: temporal link prediction, node classification, drift anomalies."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .embedding import Embedding
from .graph_store import GraphSnapshot

logger = logging.getLogger(__name__)

OPERATORS = ("weighted_l1", "weighted_l2", "hadamard", "average")


class EvaluationError(ValueError):
    pass


def edge_embed(zu: np.ndarray, zv: np.ndarray, op: str) -> np.ndarray:
    """Combine two node vectors (or two stacks of row vectors) into edge features."""
    zu = np.asarray(zu, dtype=float)
    zv = np.asarray(zv, dtype=float)
    if zu.shape != zv.shape:
        raise ValueError(f"dimension mismatch: {zu.shape} vs {zv.shape}")
    if op == "weighted_l1":
        return np.abs(zu - zv)
    if op == "weighted_l2":
        return (zu - zv) ** 2
    if op == "hadamard":
        return zu * zv
    if op == "average":
        return (zu + zv) / 2.0
    raise ValueError(f"unknown edge operator {op!r}; expected one of {OPERATORS}")


# --------------------------------------------------------------------------- AUC


def auc_score(pos_scores: Sequence[float], neg_scores: Sequence[float]) -> float:
    """Mann-Whitney AUC: P(pos > neg) with ties counted one half."""
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    n_pos, n_neg = len(pos), len(neg)
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUC needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# --------------------------------------------------------------------------- logistic regression


@dataclass
class LogisticRegression:
    """Binary logistic regression by batch gradient descent.

    Minimises ``mean cross-entropy + l2 / (2 n) * ||w||^2`` (bias unpenalised)
    on standardised features.
    """

    l2: float = 1.0
    iterations: int = 500
    step: float = 0.1
    standardize: bool = True
    coef_: np.ndarray | None = None
    intercept_: float = 0.0

    def _prep(self, X: np.ndarray) -> np.ndarray:
        if not self.standardize:
            return X
        return (X - self._mu) / self._sd

    def objective(self, w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray) -> float:
        z = X @ w + b
        ce = np.mean(np.logaddexp(0.0, z) - y * z)
        return float(ce + self.l2 / (2 * len(y)) * w @ w)

    def gradient(self, w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray):
        n = len(y)
        r = _sigmoid(X @ w + b) - y
        return X.T @ r / n + self.l2 / n * w, float(r.mean())

    def fit(self, X, y) -> "LogisticRegression":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(np.unique(y)) < 2:
            raise EvaluationError("training data has a single class")
        self._mu = X.mean(axis=0)
        self._sd = X.std(axis=0)
        self._sd[self._sd == 0] = 1.0
        Xs = self._prep(X)
        w = np.zeros(X.shape[1])
        b = 0.0
        for _ in range(self.iterations):
            gw, gb = self.gradient(w, b, Xs, y)
            w -= self.step * gw
            b -= self.step * gb
        self.coef_, self.intercept_ = w, b
        return self

    def decision_function(self, X) -> np.ndarray:
        return self._prep(np.asarray(X, dtype=float)) @ self.coef_ + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# --------------------------------------------------------------------------- link prediction


@dataclass
class LabeledEdgeSet:
    """Positive edges of one snapshot and an equal number of sampled non-edges (labels)."""

    timestamp: int
    positives: list[tuple[str, str]]
    negatives: list[tuple[str, str]]
    excluded: int = 0

    def pairs(self) -> tuple[list[tuple[str, str]], np.ndarray]:
        pairs = self.positives + self.negatives
        y = np.r_[np.ones(len(self.positives)), np.zeros(len(self.negatives))]
        return pairs, y


def sample_labeled_edges(target: GraphSnapshot, embeddable: Iterable[str], seed: int = 0,
                         max_tries: int = 50) -> LabeledEdgeSet:
    """Positives are target edges with both endpoints embeddable; negatives are
    uniformly sampled embeddable non-adjacent pairs, one per positive."""
    lab = target.interner.label
    emb_set = set(embeddable)
    positives, excluded = [], 0
    for (u, v) in sorted(target.edges):
        if u == v:
            continue
        lu, lv = lab(u), lab(v)
        if lu in emb_set and lv in emb_set:
            positives.append((lu, lv))
        else:
            excluded += 1
    if not positives:
        raise EvaluationError(f"t={target.timestamp}: no positive edge has two embedded endpoints")
    cand = np.array(sorted(n for n in target.nodes if lab(n) in emb_set), dtype=np.int64)
    n = len(cand)
    inside = sum(1 for (u, v) in target.edges if u != v and lab(u) in emb_set and lab(v) in emb_set)
    if target.directed:
        free = n * (n - 1) - inside
    else:
        free = n * (n - 1) // 2 - inside
    need = len(positives)
    if free < need:
        raise EvaluationError(f"t={target.timestamp}: graph too dense, {free} non-edges for {need} negatives")
    rng = np.random.default_rng(seed)
    chosen: set[tuple[int, int]] = set()
    negatives = []
    budget = max_tries * need + 1000
    while len(negatives) < need:
        if budget <= 0:
            raise EvaluationError(f"t={target.timestamp}: rejection sampling for negatives did not converge")
        k = need - len(negatives)
        draws = rng.integers(0, n, size=(2 * k + 8, 2))
        budget -= len(draws)
        for a, b in draws:
            if a == b:
                continue
            u, v = int(cand[a]), int(cand[b])
            if not target.directed and u > v:
                u, v = v, u
            if (u, v) in chosen or target.has_edge(u, v):
                continue
            chosen.add((u, v))
            negatives.append((lab(u), lab(v)))
            if len(negatives) == need:
                break
    return LabeledEdgeSet(target.timestamp, positives, negatives, excluded)


def build_linkpred_set(history: Sequence[GraphSnapshot], target: GraphSnapshot, embeddable: Iterable[str],
                       seed: int = 0) -> LabeledEdgeSet:
    """Test set for predicting ``target`` from embeddings trained on ``history``."""
    if not history:
        raise EvaluationError("link prediction needs at least one earlier snapshot")
    return sample_labeled_edges(target, embeddable, seed)


def edge_features(emb: Embedding, pairs: Sequence[tuple[str, str]], op: str) -> np.ndarray:
    if not pairs:
        return np.empty((0, emb.dim))
    u, v = zip(*pairs)
    return edge_embed(emb.rows(u), emb.rows(v), op)


def link_prediction_auc(train_sets: Sequence[LabeledEdgeSet], test_set: LabeledEdgeSet, emb: Embedding,
                        op: str, clf: LogisticRegression | None = None) -> float:
    """Fit a classifier on the earlier labelled sets, return AUC on ``test_set``."""
    if not test_set.positives or not test_set.negatives:
        raise EvaluationError("empty test set")
    Xs, ys = [], []
    for s in train_sets:
        pairs, y = s.pairs()
        Xs.append(edge_features(emb, pairs, op))
        ys.append(y)
    if not Xs:
        raise EvaluationError("no training sets")
    clf = LogisticRegression() if clf is None else clf
    clf.fit(np.vstack(Xs), np.concatenate(ys))
    pos = clf.decision_function(edge_features(emb, test_set.positives, op))
    neg = clf.decision_function(edge_features(emb, test_set.negatives, op))
    return auc_score(pos, neg)


@dataclass
class LinkPredRow:
    timestamp: int
    op: str
    auc: float
    positives: int
    excluded: int


def link_prediction_series(snapshots: Sequence[GraphSnapshot], embeddings: Mapping[int, Embedding],
                           ops: Iterable[str] = OPERATORS, seed: int = 0,
                           train_window: int | None = None) -> list[LinkPredRow]:
    """AUC for every ``t >= 2``: features from ``Z_{t-1}``, trained on snapshots before ``t``.

    ``train_window`` limits training to the most recent snapshots before ``t``.
    """
    rows = []
    ops = list(ops)
    for t in range(2, len(snapshots) + 1):
        emb = embeddings.get(t - 1)
        if emb is None:
            raise EvaluationError(f"no embedding for t={t - 1}")
        embeddable = emb.active()
        lo = 1 if train_window is None else max(1, t - train_window)
        train_sets = []
        for s in range(lo, t):
            try:
                train_sets.append(sample_labeled_edges(snapshots[s - 1], embeddable, seed=seed * 1000003 + s))
            except EvaluationError as exc:
                logger.warning("skipping training snapshot %d: %s", s, exc)
        test = build_linkpred_set(snapshots[:t - 1], snapshots[t - 1], embeddable, seed=seed * 1000003 + 500000 + t)
        for op in ops:
            auc = link_prediction_auc(train_sets, test, emb, op)
            rows.append(LinkPredRow(t, op, auc, len(test.positives), test.excluded))
    return rows


# --------------------------------------------------------------------------- node classification


def f1_scores(y_true: Sequence, y_pred: Sequence, classes: Sequence | None = None) -> tuple[float, float]:
    """(micro-F1, macro-F1) for single-label predictions."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    classes = np.unique(y_true) if classes is None else np.asarray(classes)
    tp_sum = fp_sum = fn_sum = 0
    per_class = []
    for c in classes:
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        tp_sum, fp_sum, fn_sum = tp_sum + tp, fp_sum + fp, fn_sum + fn
        denom = 2 * tp + fp + fn
        per_class.append(2 * tp / denom if denom else 0.0)
    denom = 2 * tp_sum + fp_sum + fn_sum
    micro = 2 * tp_sum / denom if denom else 0.0
    return float(micro), float(np.mean(per_class))


def node_classification(emb: Embedding, labels: Mapping[str, str], train_fraction: float = 0.5,
                        seed: int = 0) -> tuple[float, float]:
    """One-vs-rest logistic regression on node vectors; returns (micro-F1, macro-F1)."""
    nodes = sorted(n for n in labels if n in emb)
    if len(nodes) < 2:
        raise EvaluationError("fewer than two labelled nodes have embeddings")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(nodes))
    n_train = int(round(train_fraction * len(nodes)))
    if not 0 < n_train < len(nodes):
        raise EvaluationError("train split must leave nodes on both sides")
    train_nodes = [nodes[i] for i in perm[:n_train]]
    test_nodes = [nodes[i] for i in perm[n_train:]]
    y_train = np.array([labels[n] for n in train_nodes])
    y_test = np.array([labels[n] for n in test_nodes])
    classes = np.unique([labels[n] for n in nodes])
    missing = set(classes) - set(y_train)
    if missing:
        raise EvaluationError(f"classes absent from the training split: {sorted(missing)}")
    if len(classes) < 2:
        raise EvaluationError("need at least two classes")
    X_train, X_test = emb.rows(train_nodes), emb.rows(test_nodes)
    scores = np.empty((len(test_nodes), len(classes)))
    for k, c in enumerate(classes):
        clf = LogisticRegression().fit(X_train, (y_train == c).astype(float))
        scores[:, k] = clf.decision_function(X_test)
    y_pred = classes[np.argmax(scores, axis=1)]
    return f1_scores(y_test, y_pred, classes)


def read_labels(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'node<TAB>class_label'")
            out[parts[0]] = parts[1]
    return out


# --------------------------------------------------------------------------- anomaly detection


@dataclass
class AnomalySeries:
    timestamps: list[int]
    values: list[float]
    common: list[int]
    peaks: list[int]

    def top(self, k: int) -> list[int]:
        vals = np.array([v if np.isfinite(v) else -np.inf for v in self.values])
        order = np.argsort(-vals, kind="stable")[:k]
        return sorted(self.timestamps[i] for i in order)


def drift(prev: Embedding, cur: Embedding, aggregate: str = "mean") -> tuple[float, int]:
    """Aggregate L2 drift over nodes live in both embeddings; NaN if there are none."""
    common = sorted(prev.active() & cur.active())
    if not common:
        return float("nan"), 0
    d = np.linalg.norm(cur.rows(common) - prev.rows(common), axis=1)
    if aggregate == "mean":
        return float(d.mean()), len(common)
    if aggregate == "sum":
        return float(d.sum()), len(common)
    raise ValueError("aggregate must be 'mean' or 'sum'")


def anomaly_series(embeddings: Sequence[Embedding], aggregate: str = "mean", start: int = 1,
                   threshold_sigma: float = 3.0) -> AnomalySeries:
    """Drift score ``s_t`` for ``t = start+1 ..`` and the timestamps flagged as peaks."""
    if len(embeddings) < 2:
        raise EvaluationError("anomaly series needs at least two embeddings")
    ts, vals, sizes = [], [], []
    for i in range(1, len(embeddings)):
        v, n = drift(embeddings[i - 1], embeddings[i], aggregate)
        ts.append(start + i)
        vals.append(v)
        sizes.append(n)
    arr = np.array(vals)
    ok = np.isfinite(arr)
    peaks = []
    if ok.sum() >= 2:
        mu, sd = arr[ok].mean(), arr[ok].std()
        peaks = [t for t, v in zip(ts, vals) if math.isfinite(v) and v > mu + threshold_sigma * sd]
    return AnomalySeries(ts, vals, sizes, peaks)
