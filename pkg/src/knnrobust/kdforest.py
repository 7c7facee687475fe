"""Randomized KD-tree forest with a shared bounded-check priority search.

Each tree splits on a dimension sampled uniformly from the ``top_dims``
highest-variance dimensions of the node's point subset, at the median value
(midpoint of min/max when the median leaves one side empty).  A query seeds
one priority queue with every tree root, then repeatedly pops the branch
with the smallest distance-to-splitting-boundary, descends it to a leaf
(pushing the far side of every split passed), and scores the leaf's points.
Scoring stops once ``max_checks`` distinct points have been seen; points
indexed by several trees are counted once.  With ``max_checks = n`` every
point is scored and the result is exact.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import IndexSpec, QueryResult, point_distances
from .errors import ValidationError
from .vecdata import VectorSet


@dataclass(frozen=True)
class KdTree:
    split_dim: np.ndarray  # (m,) int64, -1 for leaves
    split_val: np.ndarray  # (m,) float64
    left: np.ndarray       # (m,) int64
    right: np.ndarray      # (m,) int64
    start: np.ndarray      # (m,) int64 slice into perm
    end: np.ndarray        # (m,) int64
    perm: np.ndarray       # (n,) int64 positions into the forest data

    @cached_property
    def _lists(self) -> tuple[list, list, list, list]:
        # plain-list copies of the descent-critical arrays (scalar indexing
        # on lists is several times faster than on ndarrays)
        return (self.split_dim.tolist(), self.split_val.tolist(),
                self.left.tolist(), self.right.tolist())


@dataclass(frozen=True)
class KdForest:
    trees: list[KdTree]
    data: np.ndarray       # (n, d) float64, id-ordered copy of the base
    ids: np.ndarray        # (n,) int64 sorted
    num_trees: int
    top_dims: int
    leaf_size: int
    seed: int

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


def _build_tree(data: np.ndarray, rng: np.random.Generator, top_dims: int, leaf_size: int) -> KdTree:
    n = data.shape[0]
    perm = np.arange(n, dtype=np.int64)
    split_dim: list[int] = []
    split_val: list[float] = []
    left: list[int] = []
    right: list[int] = []
    start: list[int] = []
    end: list[int] = []

    stack = [(0, n, -1, False)]
    while stack:
        lo, hi, parent, is_right = stack.pop()
        nid = len(split_dim)
        split_dim.append(-1)
        split_val.append(0.0)
        left.append(-1)
        right.append(-1)
        start.append(lo)
        end.append(hi)
        if parent >= 0:
            (right if is_right else left)[parent] = nid
        if hi - lo <= leaf_size:
            continue
        pts = data[perm[lo:hi]]
        variances = pts.var(axis=0)
        candidates = np.argsort(-variances, kind="stable")[:top_dims]
        dim = int(candidates[int(rng.integers(top_dims))])
        if variances[candidates[0]] == 0.0:
            continue  # all points identical: keep as an oversized leaf
        if variances[dim] == 0.0:
            dim = int(candidates[0])  # sampled a constant dimension; fall back
        vals = pts[:, dim]
        value = float(np.median(vals))
        mask = vals <= value
        n_left = int(mask.sum())
        if n_left == hi - lo:
            value = float((vals.min() + vals.max()) / 2.0)  # median == max
            mask = vals <= value
            n_left = int(mask.sum())
        seg = perm[lo:hi]
        perm[lo:hi] = np.concatenate([seg[mask], seg[~mask]])
        split_dim[nid] = dim
        split_val[nid] = value
        stack.append((lo + n_left, hi, nid, True))
        stack.append((lo, lo + n_left, nid, False))

    return KdTree(
        split_dim=np.asarray(split_dim, dtype=np.int64),
        split_val=np.asarray(split_val, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        start=np.asarray(start, dtype=np.int64),
        end=np.asarray(end, dtype=np.int64),
        perm=perm,
    )


def build_kdforest(base: VectorSet, num_trees: int, top_dims: int, seed: int,
                   leaf_size: int = 16) -> KdForest:
    """Build ``num_trees`` independent randomized trees over the base set."""
    if num_trees < 1:
        raise ValidationError("num_trees must be >= 1")
    if not 1 <= top_dims <= base.d:
        raise ValidationError(f"top_dims must be in [1, {base.d}], got {top_dims}")
    if leaf_size < 1:
        raise ValidationError("leaf_size must be >= 1")
    order = np.argsort(base.ids)
    data = base.data[order].astype(np.float64)
    ids = base.ids[order]
    rng = np.random.default_rng(seed)
    trees = [_build_tree(data, rng, top_dims, leaf_size) for _ in range(num_trees)]
    return KdForest(trees=trees, data=data, ids=ids, num_trees=num_trees,
                    top_dims=top_dims, leaf_size=leaf_size, seed=seed)


def query_kdforest(forest: KdForest, q: np.ndarray, k: int, max_checks: int) -> QueryResult:
    """Bounded priority search over all trees; exact when max_checks = n.

    Queue entries are ordered by (boundary distance, tree index, node id) so
    ties resolve deterministically.  The first pops are the tree roots at
    distance zero, which makes the leaf containing the query the first leaf
    explored.  When the budget lands mid-leaf, points are taken in tree
    storage order.
    """
    q = np.asarray(q, dtype=np.float64).ravel()
    if q.shape[0] != forest.d:
        raise ValidationError(f"dimension mismatch: forest d={forest.d}, query d={q.shape[0]}")
    if not 1 <= k <= forest.n:
        raise ValidationError(f"k must be in [1, {forest.n}], got {k}")
    if max_checks < k:
        raise ValidationError(f"max_checks must be >= k, got {max_checks} < {k}")

    from .balltree import _KBest  # shared bounded k-best ordered by (dist, id)

    heap: list[tuple[float, int, int]] = [(0.0, t, 0) for t in range(forest.num_trees)]
    seen = np.zeros(forest.n, dtype=bool)
    best = _KBest(k)
    checked = 0
    data = forest.data
    ids = forest.ids
    q_list = q.tolist()
    push = heapq.heappush
    pop = heapq.heappop
    while heap and checked < max_checks:
        _, t, nid = pop(heap)
        tree = forest.trees[t]
        sdim, sval, tleft, tright = tree._lists
        dim = sdim[nid]
        while dim >= 0:
            qv = q_list[dim]
            value = sval[nid]
            if qv <= value:
                far = tright[nid]
                nid = tleft[nid]
            else:
                far = tleft[nid]
                nid = tright[nid]
            push(heap, (qv - value if qv > value else value - qv, t, far))
            dim = sdim[nid]
        pos = tree.perm[tree.start[nid]:tree.end[nid]]
        fresh = pos[~seen[pos]]
        if fresh.shape[0] == 0:
            continue
        if checked + fresh.shape[0] > max_checks:
            fresh = fresh[: max_checks - checked]
        seen[fresh] = True
        checked += fresh.shape[0]
        dists = point_distances(data[fresh], q)
        for dist, p in zip(dists.tolist(), fresh.tolist()):
            best.push(dist, int(ids[p]))
    return best.result()


class KdForestIndex:
    """Index-protocol wrapper holding a built forest plus its check budget."""

    kind = "kdforest"

    def __init__(self, base: VectorSet, num_trees: int, max_checks: int,
                 top_dims: int | None = None, leaf_size: int = 16, seed: int = 0,
                 spec: IndexSpec | None = None):
        top_dims = min(5, base.d) if top_dims is None else top_dims
        self.spec = spec or IndexSpec("kdforest", {
            "num_trees": num_trees, "max_checks": max_checks,
            "top_dims": top_dims, "leaf_size": leaf_size, "seed": seed,
        })
        self.forest = build_kdforest(base, num_trees, top_dims, seed, leaf_size=leaf_size)
        self.max_checks = max_checks
        self.n = self.forest.n
        self.d = self.forest.d
        self.build_seconds = 0.0

    def query(self, q: np.ndarray, k: int) -> QueryResult:
        return query_kdforest(self.forest, q, k, self.max_checks)

    def query_batch(self, queries: np.ndarray, k: int, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        out_ids = np.empty((queries.shape[0], k), dtype=np.int64)
        out_dists = np.empty((queries.shape[0], k), dtype=np.float64)
        for i in range(queries.shape[0]):
            res = self.query(queries[i], k)
            out_ids[i] = res.ids
            out_dists[i] = res.dists
        return out_ids, out_dists
