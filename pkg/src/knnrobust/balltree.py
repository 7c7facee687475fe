"""Ball tree index: branch-and-bound K-NN search with an optional visit budget.

Nodes store a centroid and the radius of the smallest ball around it that
covers every point in the subtree.  Search keeps a k-best heap and prunes a
node when ``dist(q, centroid) - radius`` already exceeds the current k-th
best distance.  With an unlimited budget the search is exact; with
``max_nodes`` set, traversal stops after that many leaves have been scored
and returns the best candidates found so far.  Leaves are visited in
best-first order, so the scored set under a small budget is a prefix of the
scored set under a larger one.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .core import IndexSpec, QueryResult, point_distances
from .errors import ValidationError
from .vecdata import VectorSet


@dataclass(frozen=True)
class BallTree:
    centroids: np.ndarray  # (m, d) float64
    radii: np.ndarray      # (m,) float64
    left: np.ndarray       # (m,) int64, -1 for leaves
    right: np.ndarray      # (m,) int64, -1 for leaves
    start: np.ndarray      # (m,) int64 slice into perm
    end: np.ndarray        # (m,) int64
    perm: np.ndarray       # (n,) int64 positions into data
    data: np.ndarray       # (n, d) float64, id-ordered copy of the base
    ids: np.ndarray        # (n,) int64 sorted
    leaf_size: int

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.centroids.shape[0]


def build_balltree(base: VectorSet, leaf_size: int) -> BallTree:
    """Build a ball tree over the base set.

    Split rule: seed A is the point farthest from the node centroid, seed B
    the point farthest from A; points go to the side of the nearer seed
    (ties to A).  If the partition degenerates (all points identical), the
    node is split evenly in storage order instead.
    """
    if leaf_size < 1:
        raise ValidationError("leaf_size must be >= 1")
    order = np.argsort(base.ids)
    data = base.data[order].astype(np.float64)
    ids = base.ids[order]
    n = data.shape[0]
    perm = np.arange(n, dtype=np.int64)

    cents: list[np.ndarray] = []
    radii: list[float] = []
    left: list[int] = []
    right: list[int] = []
    start: list[int] = []
    end: list[int] = []

    stack = [(0, n, -1, False)]  # lo, hi, parent node, is-right-child
    while stack:
        lo, hi, parent, is_right = stack.pop()
        nid = len(cents)
        pts = data[perm[lo:hi]]
        centroid = pts.mean(axis=0)
        to_c = point_distances(pts, centroid)
        cents.append(centroid)
        radii.append(float(to_c.max()))
        left.append(-1)
        right.append(-1)
        start.append(lo)
        end.append(hi)
        if parent >= 0:
            (right if is_right else left)[parent] = nid
        if hi - lo <= leaf_size:
            continue
        a = int(np.argmax(to_c))
        to_a = point_distances(pts, pts[a])
        b = int(np.argmax(to_a))
        to_b = point_distances(pts, pts[b])
        mask = to_a <= to_b
        n_left = int(mask.sum())
        seg = perm[lo:hi]
        if n_left == 0 or n_left == hi - lo:
            n_left = (hi - lo) // 2
        else:
            perm[lo:hi] = np.concatenate([seg[mask], seg[~mask]])
        stack.append((lo + n_left, hi, nid, True))
        stack.append((lo, lo + n_left, nid, False))

    return BallTree(
        centroids=np.asarray(cents),
        radii=np.asarray(radii),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        start=np.asarray(start, dtype=np.int64),
        end=np.asarray(end, dtype=np.int64),
        perm=perm,
        data=data,
        ids=ids,
        leaf_size=leaf_size,
    )


class _KBest:
    """Bounded k-best set ordered by (distance, id)."""

    __slots__ = ("k", "_heap")

    def __init__(self, k: int):
        self.k = k
        self._heap: list[tuple[float, int]] = []  # (-dist, -id): root is current worst

    @property
    def full(self) -> bool:
        return len(self._heap) == self.k

    @property
    def worst(self) -> float:
        return -self._heap[0][0] if len(self._heap) == self.k else np.inf

    def push(self, dist: float, pid: int) -> None:
        item = (-dist, -pid)
        if len(self._heap) < self.k:
            heapq.heappush(self._heap, item)
        elif item > self._heap[0]:
            heapq.heapreplace(self._heap, item)

    def result(self) -> QueryResult:
        items = sorted(self._heap, reverse=True)
        return QueryResult(
            ids=np.array([-i for _, i in items], dtype=np.int64),
            dists=np.array([-d for d, _ in items], dtype=np.float64),
        )


def query_balltree(
    tree: BallTree,
    q: np.ndarray,
    k: int,
    max_nodes: int | None = None,
    _trace: dict | None = None,
) -> QueryResult:
    """Best-first branch-and-bound top-k search.

    ``max_nodes`` limits how many leaves are scored (None = unlimited, exact).
    ``_trace``, when a dict, receives ``pruned``: node ids skipped by the
    lower-bound test (used by the pruning-soundness checks).
    """
    q = np.asarray(q, dtype=np.float64).ravel()
    if q.shape[0] != tree.d:
        raise ValidationError(f"dimension mismatch: tree d={tree.d}, query d={q.shape[0]}")
    if not 1 <= k <= tree.n:
        raise ValidationError(f"k must be in [1, {tree.n}], got {k}")
    if max_nodes is not None and max_nodes < 1:
        raise ValidationError("max_nodes must be >= 1")
    budget = np.inf if max_nodes is None else max_nodes
    pruned = None if _trace is None else _trace.setdefault("pruned", [])

    root_lb = max(0.0, float(np.sqrt(((tree.centroids[0] - q) ** 2).sum())) - float(tree.radii[0]))
    heap: list[tuple[float, int]] = [(root_lb, 0)]
    best = _KBest(k)
    leaves = 0
    while heap:
        lb, nid = heapq.heappop(heap)
        if best.full and lb > best.worst:
            if pruned is not None:
                pruned.append(nid)
            continue
        child = tree.left[nid]
        if child < 0:
            pos = tree.perm[tree.start[nid]:tree.end[nid]]
            dists = point_distances(tree.data[pos], q)
            bound = best.worst
            for dist, p in zip(dists.tolist(), pos.tolist()):
                if dist <= bound or not best.full:
                    best.push(dist, int(tree.ids[p]))
                    bound = best.worst
            leaves += 1
            if leaves >= budget:
                break
        else:
            for c in (int(child), int(tree.right[nid])):
                diff = tree.centroids[c] - q
                dist_c = float(np.sqrt((diff * diff).sum()))
                heapq.heappush(heap, (max(0.0, dist_c - float(tree.radii[c])), c))
    return best.result()


class BallTreeIndex:
    """Index-protocol wrapper holding a built tree plus its query budget."""

    kind = "balltree"

    def __init__(self, base: VectorSet, leaf_size: int, max_nodes: int | None = None,
                 spec: IndexSpec | None = None):
        params = {"leaf_size": leaf_size}
        if max_nodes is not None:
            params["max_nodes"] = max_nodes
        self.spec = spec or IndexSpec("balltree", params)
        self.tree = build_balltree(base, leaf_size)
        self.max_nodes = max_nodes
        self.n = self.tree.n
        self.d = self.tree.d
        self.build_seconds = 0.0

    def query(self, q: np.ndarray, k: int) -> QueryResult:
        return query_balltree(self.tree, q, k, max_nodes=self.max_nodes)

    def query_batch(self, queries: np.ndarray, k: int, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
        queries = np.atleast_2d(np.asarray(queries))
        out_ids = np.empty((queries.shape[0], k), dtype=np.int64)
        out_dists = np.empty((queries.shape[0], k), dtype=np.float64)
        for i in range(queries.shape[0]):
            res = self.query(queries[i], k)
            out_ids[i] = res.ids
            out_dists[i] = res.dists
        return out_ids, out_dists
