"""ID-indexed dense vectors: the exchange format between stages."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .nncore import load_tensors, save_tensors


class EmbeddingTable:
    """Ordered ids with one fixed-dimension vector each."""

    def __init__(self, ids: Sequence[str], vectors):
        vectors = np.asarray(vectors)
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise ValueError(f"{len(ids)} ids but vectors of shape {vectors.shape}")
        self.ids = list(ids)
        self.index = {k: i for i, k in enumerate(self.ids)}
        if len(self.index) != len(self.ids):
            raise ValueError("duplicate ids in embedding table")
        self.vectors = vectors

    def __len__(self):
        return len(self.ids)

    def __contains__(self, key):
        return key in self.index

    def __getitem__(self, key):
        return self.vectors[self.index[key]]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def rows(self, keys: Iterable[str]) -> np.ndarray:
        return self.vectors[[self.index[k] for k in keys]]

    def subset(self, keys: Iterable[str]) -> "EmbeddingTable":
        keys = list(keys)
        return EmbeddingTable(keys, self.rows(keys))

    def equals(self, other) -> bool:
        return (self.ids == other.ids and self.vectors.dtype == other.vectors.dtype
                and np.array_equal(self.vectors, other.vectors))

    # ------------------------------------------------------------ files

    def save(self, path, meta: dict | None = None):
        m = dict(meta or {})
        m["ids"] = self.ids
        save_tensors(path, {"vectors": self.vectors}, m)

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        tensors, meta = load_tensors(path)
        return cls(meta["ids"], tensors["vectors"])

    def save_text(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{len(self)} {self.dim}\n")
            for k, v in zip(self.ids, self.vectors):
                fh.write(k + " " + " ".join(repr(float(x)) for x in v) + "\n")

    @classmethod
    def load_text(cls, path, dtype=np.float32) -> "EmbeddingTable":
        with open(path, encoding="utf-8") as fh:
            n, d = (int(x) for x in fh.readline().split())
            ids, rows = [], []
            for line in fh:
                parts = line.rstrip("\n").split(" ")
                if len(parts) != d + 1:
                    raise ValueError(f"expected {d} values for {parts[0]}")
                ids.append(parts[0])
                rows.append([float(x) for x in parts[1:]])
        if len(ids) != n:
            raise ValueError(f"header says {n} rows, found {len(ids)}")
        return cls(ids, np.array(rows, dtype=dtype).reshape(n, d))
