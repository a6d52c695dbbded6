"""Read-only node embeddings and the word2vec-style text format.

Text layout: a header line ``N d``, then one line per node with the label
followed by ``d`` floats, all separated by single spaces. Labels of frozen
(deleted) nodes go to an optional sidecar file, one per line.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np


@dataclass
class Embedding:
    labels: list[str]
    vectors: np.ndarray
    stale: frozenset[str] = frozenset()
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.labels):
            raise ValueError("vectors must be a (len(labels), d) matrix")
        self._index = {lab: i for i, lab in enumerate(self.labels)}
        if len(self._index) != len(self.labels):
            raise ValueError("duplicate labels")
        self.stale = frozenset(self.stale)

    @classmethod
    def from_mapping(cls, vectors: Mapping[str, Iterable[float]], stale: Iterable[str] = ()) -> "Embedding":
        labels = list(vectors)
        mat = np.array([np.asarray(vectors[k], dtype=float) for k in labels]).reshape(len(labels), -1)
        return cls(labels, mat, frozenset(stale))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label) -> bool:
        return label in self._index

    def get(self, label: str) -> np.ndarray | None:
        i = self._index.get(label)
        return None if i is None else self.vectors[i]

    def __getitem__(self, label: str) -> np.ndarray:
        return self.vectors[self._index[label]]

    def rows(self, labels: Iterable[str]) -> np.ndarray:
        return self.vectors[[self._index[lab] for lab in labels]]

    def active(self) -> set[str]:
        """Labels with a live (non-stale) vector."""
        return set(self.labels) - self.stale


def stale_path(path: str | os.PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".stale" + p.suffix)


def write_embedding(emb: Embedding, path: str | os.PathLike) -> None:
    n, d = emb.vectors.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {d}\n")
        for lab, row in zip(emb.labels, emb.vectors.tolist()):
            fh.write(lab)
            fh.write(" ")
            fh.write(" ".join(map(repr, row)))
            fh.write("\n")
    sp = stale_path(path)
    if emb.stale:
        sp.write_text("".join(f"{lab}\n" for lab in sorted(emb.stale)), encoding="utf-8")
    elif sp.exists():
        sp.unlink()


def read_embedding(path: str | os.PathLike) -> Embedding:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: header must be 'N d'")
        n, d = int(header[0]), int(header[1])
        labels = []
        mat = np.empty((n, d))
        for i in range(n):
            parts = fh.readline().rstrip("\n").split(" ")
            if len(parts) != d + 1:
                raise ValueError(f"{path}:{i + 2}: expected label and {d} floats")
            labels.append(parts[0])
            mat[i] = [float(x) for x in parts[1:]]
    sp = stale_path(path)
    stale = frozenset(sp.read_text(encoding="utf-8").split()) if sp.exists() else frozenset()
    return Embedding(labels, mat, stale)
