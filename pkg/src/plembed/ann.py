"""Random-projection forest for approximate angular nearest neighbours,
plus the exhaustive oracle it is measured against."""

from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass

import numba
import numpy as np

from .song2vec import _next
from .table import EmbeddingTable

MAGIC = b"PLEMBANN"
FORMAT_VERSION = 1
METRICS = {"angular": 0}
REFINE_ITERS = 5
REFINE_SAMPLE = 512


@dataclass
class QueryResult:
    ids: list
    distances: np.ndarray
    search_k: int = 0

    def __len__(self):
        return len(self.ids)


@dataclass
class Tree:
    normals: np.ndarray     # (n_internal, dim)
    offsets: np.ndarray     # (n_internal,)
    children: np.ndarray    # (n_internal, 2); >= 0 internal node, < 0 leaf -(j+1)
    leaf_ptr: np.ndarray    # (n_leaves + 1,)
    leaf_items: np.ndarray
    root: int               # same encoding as children

    def leaves(self):
        return [self.leaf_items[self.leaf_ptr[j]:self.leaf_ptr[j + 1]] for j in range(len(self.leaf_ptr) - 1)]

    def depth(self) -> int:
        best = 0
        stack = [(self.root, 0)]
        while stack:
            node, d = stack.pop()
            if node < 0:
                best = max(best, d)
            else:
                stack += [(int(self.children[node, 0]), d + 1), (int(self.children[node, 1]), d + 1)]
        return best


def _unit(X):
    X = np.asarray(X, dtype=np.float64)
    n = np.linalg.norm(X, axis=-1, keepdims=True)
    return X / np.where(n == 0, 1.0, n)


def angular_distances(Xn, qn) -> np.ndarray:
    """1 - cosine for unit rows; computed row by row so subsets agree bitwise."""
    return np.clip(1.0 - (Xn * qn).sum(axis=1), 0.0, 2.0)


def _id_ranks(ids):
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    r = np.empty(len(ids), dtype=np.int64)
    r[order] = np.arange(len(ids))
    return r


def _top(cands, d, ranks, k):
    order = np.lexsort((ranks[cands], d))[:k]
    return cands[order], d[order]


def exact_knn(t: EmbeddingTable, q, k: int) -> QueryResult:
    """Exhaustive top-k by angular distance; ties broken by id order."""
    if not 1 <= k <= len(t):
        raise ValueError(f"k={k} outside 1..{len(t)}")
    Xn = _unit(t.vectors)
    qn = _unit(np.asarray(q, dtype=np.float64).reshape(-1))
    if qn.shape[0] != t.dim:
        raise ValueError(f"query dim {qn.shape[0]} != {t.dim}")
    d = angular_distances(Xn, qn)
    idx, dist = _top(np.arange(len(t)), d, _id_ranks(t.ids), k)
    return QueryResult([t.ids[i] for i in idx], dist, len(t))


# ---------------------------------------------------------------- tree building

@numba.njit(cache=True)
def _gauss(state):
    u1 = max(_next(state), 1e-300)
    u2 = _next(state)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@numba.njit(cache=True)
def _unit_nb(v):
    n = math.sqrt((v * v).sum())
    if n > 0:
        return v / n
    return v


@numba.njit(cache=True)
def _build_tree_nb(X, leaf_size, seed, refine_iters, sample_cap):
    # Each node owns a contiguous range of ``perm``; splitting reorders the
    # range in place.  Depth-first, left child first, so leaves come out in
    # range order and ``leaf_ptr`` is monotone.
    n, d = X.shape
    state = np.array([seed], dtype=np.uint64)
    perm = np.arange(n)
    cap = max(n, 1)
    normals = np.zeros((cap, d))
    offsets = np.zeros(cap)
    children = np.zeros((cap, 2), dtype=np.int64)
    leaf_ptr = np.zeros(cap + 1, dtype=np.int64)
    n_int = 0
    n_leaf = 0
    root = 0
    stack = np.zeros((2 * cap + 2, 4), dtype=np.int64)  # lo, hi, parent, side
    sp = 0
    stack[0, 0] = 0
    stack[0, 1] = n
    stack[0, 2] = -1
    sp = 1
    while sp > 0:
        sp -= 1
        lo, hi, parent, side = stack[sp, 0], stack[sp, 1], stack[sp, 2], stack[sp, 3]
        m = hi - lo
        if m <= leaf_size:
            code = -(n_leaf + 1)
            leaf_ptr[n_leaf] = lo
            n_leaf += 1
            leaf_ptr[n_leaf] = hi
        else:
            ns = min(m, sample_cap)
            sample = np.empty(ns, dtype=np.int64)
            if ns == m:
                for i in range(m):
                    sample[i] = perm[lo + i]
            else:
                for i in range(ns):
                    sample[i] = perm[lo + int(_next(state) * m)]
            a = int(_next(state) * ns)
            b = int(_next(state) * (ns - 1))
            if b >= a:
                b += 1
            p = X[sample[a]].copy()
            q = X[sample[b]].copy()
            for _ in range(refine_iters):
                sp_ = np.zeros(d)
                sq_ = np.zeros(d)
                np_ = 0
                for i in range(ns):
                    x = X[sample[i]]
                    if (x * p).sum() >= (x * q).sum():
                        sp_ += x
                        np_ += 1
                    else:
                        sq_ += x
                if np_ == 0 or np_ == ns:
                    break
                p = _unit_nb(sp_ / np_)
                q = _unit_nb(sq_ / (ns - np_))
            w = p - q
            nw = math.sqrt((w * w).sum())
            while nw == 0:
                for j in range(d):
                    w[j] = _gauss(state)
                nw = math.sqrt((w * w).sum())
            w = w / nw
            off = (w * (p + q)).sum() / 2
            proj = np.empty(m)
            for i in range(m):
                proj[i] = (X[perm[lo + i]] * w).sum() - off
            order = np.argsort(proj, kind="mergesort")
            n_left = 0
            for i in range(m):
                if proj[i] <= 0:
                    n_left += 1
            if n_left == 0 or n_left == m:
                n_left = m // 2
                off = off + (proj[order[n_left - 1]] + proj[order[n_left]]) / 2
            seg = perm[lo:hi].copy()
            for i in range(m):
                perm[lo + i] = seg[order[i]]
            code = n_int
            normals[n_int] = w
            offsets[n_int] = off
            n_int += 1
            # right pushed first so the left subtree is built first
            stack[sp, 0] = lo + n_left
            stack[sp, 1] = hi
            stack[sp, 2] = code
            stack[sp, 3] = 1
            sp += 1
            stack[sp, 0] = lo
            stack[sp, 1] = lo + n_left
            stack[sp, 2] = code
            stack[sp, 3] = 0
            sp += 1
        if parent < 0:
            root = code
        else:
            children[parent, side] = code
    return normals, offsets, children, leaf_ptr, perm, n_int, n_leaf, root


class RPForest:
    """Forest of two-means hyperplane trees over unit-normalised vectors.

    Each split samples two items, refines the two centroids for a few
    rounds, and cuts along the bisecting hyperplane; items tied on the
    hyperplane are divided by position so every split makes progress.
    """

    def __init__(self, n_trees=50, leaf_size=1, seed=0, metric="angular"):
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        if n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if metric not in METRICS:
            raise ValueError(f"unsupported metric {metric!r}")
        self.n_trees = n_trees
        self.leaf_size = leaf_size
        self.seed = seed
        self.metric = metric

    # ------------------------------------------------------------ build

    def fit(self, t: EmbeddingTable):
        if len(t) == 0:
            raise ValueError("cannot index an empty table")
        self.ids_ = list(t.ids)
        self.ranks_ = _id_ranks(self.ids_)
        self.index_ = {k: i for i, k in enumerate(self.ids_)}
        self.vectors_ = _unit(t.vectors)
        rng = np.random.default_rng(self.seed)
        self.trees_ = [self._build_tree(rng) for _ in range(self.n_trees)]
        return self

    def _build_tree(self, rng) -> Tree:
        seed = np.uint64(rng.integers(0, 2**63))
        normals, offsets, children, leaf_ptr, perm, n_int, n_leaf, root = _build_tree_nb(
            self.vectors_, self.leaf_size, seed, REFINE_ITERS, REFINE_SAMPLE)
        return Tree(normals[:n_int].copy(), offsets[:n_int].copy(), children[:n_int].copy(),
                    leaf_ptr[:n_leaf + 1].copy(), perm, int(root))

    # ------------------------------------------------------------ query

    def __len__(self):
        return len(self.ids_)

    @property
    def dim(self):
        return self.vectors_.shape[1]

    def query(self, q, k: int, search_k: int | None = None, exclude: int | None = None) -> QueryResult:
        """Best-first descent of all trees sharing one priority queue until
        ``search_k`` distinct items are collected, then exact re-ranking."""
        n = len(self.ids_)
        limit = n - (exclude is not None)
        if not 1 <= k <= limit:
            raise ValueError(f"k={k} outside 1..{limit}")
        qn = _unit(np.asarray(q, dtype=np.float64).reshape(-1))
        if qn.shape[0] != self.dim:
            raise ValueError(f"query dim {qn.shape[0]} != {self.dim}")
        search_k = self.n_trees * k if search_k is None else search_k
        search_k = max(search_k, k + (exclude is not None))
        seen = np.zeros(n, dtype=bool)
        n_seen = 0
        heap = [(-math.inf, ti, tr.root) for ti, tr in enumerate(self.trees_)]
        heapq.heapify(heap)
        while heap and n_seen < search_k:
            negpri, ti, node = heapq.heappop(heap)
            tr = self.trees_[ti]
            if node < 0:
                j = -node - 1
                items = tr.leaf_items[tr.leaf_ptr[j]:tr.leaf_ptr[j + 1]]
                new = items[~seen[items]]
                seen[new] = True
                n_seen += len(new)
                continue
            m = float(tr.normals[node] @ qn - tr.offsets[node])
            pri = -negpri
            heapq.heappush(heap, (-min(pri, -m), ti, int(tr.children[node, 0])))
            heapq.heappush(heap, (-min(pri, m), ti, int(tr.children[node, 1])))
        if exclude is not None:
            seen[exclude] = False
        cands = np.flatnonzero(seen)
        d = angular_distances(self.vectors_[cands], qn)
        idx, dist = _top(cands, d, self.ranks_, k)
        return QueryResult([self.ids_[i] for i in idx], dist, n_seen)

    def query_id(self, key: str, k: int, search_k: int | None = None) -> QueryResult:
        """Neighbours of an indexed item, the item itself excluded."""
        i = self.index_[key]
        return self.query(self.vectors_[i], k, search_k, exclude=i)

    # ------------------------------------------------------------ files

    def save(self, path):
        d = self.dim
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<HIBIIQ", FORMAT_VERSION, d, METRICS[self.metric], self.n_trees,
                                 self.leaf_size, self.seed))
            fh.write(struct.pack("<Q", len(self.ids_)))
            fh.write(self.vectors_.astype("<f8").tobytes())
            for tr in self.trees_:
                fh.write(struct.pack("<qQQQ", tr.root, len(tr.offsets), len(tr.leaf_ptr) - 1, len(tr.leaf_items)))
                fh.write(tr.normals.astype("<f8").tobytes())
                fh.write(tr.offsets.astype("<f8").tobytes())
                fh.write(tr.children.astype("<i8").tobytes())
                fh.write(tr.leaf_ptr.astype("<i8").tobytes())
                fh.write(tr.leaf_items.astype("<i8").tobytes())
            for key in self.ids_:
                b = key.encode("utf-8")
                fh.write(struct.pack("<I", len(b)) + b)

    @classmethod
    def load(cls, path) -> "RPForest":
        with open(path, "rb") as fh:
            buf = fh.read()
        if buf[:8] != MAGIC:
            raise ValueError(f"{path}: not an index file")
        pos = 8
        version, d, metric, n_trees, leaf_size, seed = struct.unpack_from("<HIBIIQ", buf, pos)
        pos += struct.calcsize("<HIBIIQ")
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported index version {version}")
        (n,) = struct.unpack_from("<Q", buf, pos)
        pos += 8

        def arr(dtype, count, shape=None):
            nonlocal pos
            a = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).copy()
            pos += a.nbytes
            return a.reshape(shape) if shape else a

        name = {v: k for k, v in METRICS.items()}[metric]
        f = cls(n_trees, leaf_size, seed, name)
        f.vectors_ = arr("<f8", n * d, (n, d)).astype(np.float64)
        f.trees_ = []
        for _ in range(n_trees):
            root, ni, nl, nitems = struct.unpack_from("<qQQQ", buf, pos)
            pos += 32
            normals = arr("<f8", ni * d, (ni, d)).astype(np.float64)
            offsets = arr("<f8", ni).astype(np.float64)
            children = arr("<i8", ni * 2, (ni, 2)).astype(np.int64)
            ptr = arr("<i8", nl + 1).astype(np.int64)
            items = arr("<i8", nitems).astype(np.int64)
            f.trees_.append(Tree(normals, offsets, children, ptr, items, root))
        ids = []
        for _ in range(n):
            (ln,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            ids.append(buf[pos:pos + ln].decode("utf-8"))
            pos += ln
        f.ids_ = ids
        f.ranks_ = _id_ranks(ids)
        f.index_ = {k: i for i, k in enumerate(ids)}
        return f


def build_forest(t: EmbeddingTable, n_trees=50, leaf_size=1, seed=0) -> RPForest:
    return RPForest(n_trees, leaf_size, seed).fit(t)


def query(f: RPForest, q, k: int, search_k: int | None = None) -> QueryResult:
    return f.query(q, k, search_k)


def recall(f: RPForest, t: EmbeddingTable, queries, k: int, search_k: int | None = None) -> float:
    """Mean overlap of approximate and exact top-k over the query vectors."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    hits = 0
    for q in queries:
        a = set(f.query(q, k, search_k).ids)
        e = set(exact_knn(t, q, k).ids)
        hits += len(a & e)
    return hits / (k * len(queries))
