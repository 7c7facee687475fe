"""Index abstraction, the exact brute-force index, and TP/FP labeling.

Every index exposes the same read-only interface after construction:
``kind``, ``spec``, ``n``, ``d``, ``build_seconds``, ``query(q, k)`` and
``query_batch(queries, k)``.  Handles are immutable after build, so
concurrent queries need no locks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .vecdata import VectorSet, topk_euclidean

KIND_PARAMS: dict[str, tuple[frozenset[str], frozenset[str]]] = {
    # kind -> (required keys, optional keys)
    "brute": (frozenset(), frozenset()),
    "balltree": (frozenset({"leaf_size"}), frozenset({"max_nodes"})),
    "kdforest": (frozenset({"num_trees", "max_checks"}), frozenset({"top_dims", "leaf_size", "seed"})),
}


def point_distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Euclidean distance from q to every row of points (float64).

    All index implementations score candidates through this one function so
    that identical point pairs always produce bitwise-identical distances.
    """
    diff = points - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


@dataclass(frozen=True)
class IndexSpec:
    """Algorithm kind plus its integer parameters.

    ``seed`` may be zero; every other parameter must be a positive integer.
    """

    kind: str
    params: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KIND_PARAMS:
            raise ValidationError(f"unknown index kind {self.kind!r}")
        required, optional = KIND_PARAMS[self.kind]
        keys = set(self.params)
        missing = required - keys
        unknown = keys - required - optional
        if missing:
            raise ValidationError(f"{self.kind}: missing params {sorted(missing)}")
        if unknown:
            raise ValidationError(f"{self.kind}: unknown params {sorted(unknown)}")
        for key, value in self.params.items():
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValidationError(f"{self.kind}: param {key} must be an integer")
            lo = 0 if key == "seed" else 1
            if value < lo:
                raise ValidationError(f"{self.kind}: param {key} must be >= {lo}, got {value}")

    def label(self) -> str:
        if not self.params:
            return self.kind
        inner = ",".join(f"{k}={self.params[k]}" for k in sorted(self.params))
        return f"{self.kind}({inner})"


def parse_spec(text: str) -> IndexSpec:
    """Parse e.g. ``kdforest:num_trees=4,max_checks=100`` into an IndexSpec."""
    kind, _, rest = text.strip().partition(":")
    params: dict[str, int] = {}
    if rest:
        for item in rest.split(","):
            key, eq, value = item.partition("=")
            if not eq:
                raise ValidationError(f"bad spec parameter {item!r} (expected key=value)")
            try:
                params[key.strip()] = int(value)
            except ValueError as exc:
                raise ValidationError(f"bad integer in spec parameter {item!r}") from exc
    return IndexSpec(kind, params)


@dataclass(frozen=True)
class QueryResult:
    """Top-k answer: distinct ids with non-decreasing distances."""

    ids: np.ndarray    # (k,) int64
    dists: np.ndarray  # (k,) float64

    def __post_init__(self) -> None:
        ids = np.asarray(self.ids, dtype=np.int64)
        dists = np.asarray(self.dists, dtype=np.float64)
        if ids.ndim != 1 or ids.shape != dists.shape or ids.shape[0] < 1:
            raise ValidationError("ids and dists must be equal-length 1-d arrays")
        if (np.diff(dists) < 0).any():
            raise ValidationError("distances must be non-decreasing")
        if np.unique(ids).shape[0] != ids.shape[0]:
            raise ValidationError("ids must be distinct")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "dists", dists)

    @property
    def k(self) -> int:
        return self.ids.shape[0]


@dataclass(frozen=True)
class FpLabel:
    query_id: int
    is_fp: bool
    recall: float


def label_fp(result: QueryResult, truth_dists: np.ndarray, epsilon: float = 0.0,
             query_id: int = -1) -> FpLabel:
    """Label one query against its ground-truth row.

    recall = fraction of returned points whose distance is within
    ``truth_dists[k-1] * (1 + epsilon)``; the query is a false positive
    exactly when recall < 1.  epsilon = 0 is strict matching; epsilon > 0
    relaxes the accepted distance.
    """
    truth_dists = np.asarray(truth_dists, dtype=np.float64)
    if epsilon < 0:
        raise ValidationError("epsilon must be non-negative")
    if truth_dists.ndim != 1 or truth_dists.shape[0] != result.k:
        raise ValidationError(
            f"length mismatch: result k={result.k}, truth row has {truth_dists.shape}"
        )
    threshold = truth_dists[-1] * (1.0 + epsilon)
    recall = float((result.dists <= threshold).sum()) / result.k
    return FpLabel(query_id=query_id, is_fp=recall < 1.0, recall=recall)


class BruteIndex:
    """Exact index: a thin wrapper over the shared top-k scan."""

    kind = "brute"

    def __init__(self, base: VectorSet, spec: IndexSpec | None = None):
        self.spec = spec or IndexSpec("brute")
        self._data = base.data
        self._ids = base.ids
        self.n = base.n
        self.d = base.d
        self.build_seconds = 0.0

    def query_batch(self, queries: np.ndarray, k: int, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
        queries = np.atleast_2d(np.asarray(queries))
        if queries.shape[1] != self.d:
            raise ValidationError(f"dimension mismatch: index d={self.d}, query d={queries.shape[1]}")
        return topk_euclidean(self._data, self._ids, queries, k, threads=threads)

    def query(self, q: np.ndarray, k: int) -> QueryResult:
        ids, dists = self.query_batch(np.asarray(q)[None, :], k)
        return QueryResult(ids[0], dists[0])


def build(spec: IndexSpec, base: VectorSet):
    """Construct an immutable index of the requested kind, timing the build."""
    if base.n < 1:
        raise ValidationError("base must be non-empty")
    t0 = time.perf_counter()
    if spec.kind == "brute":
        index = BruteIndex(base, spec)
    elif spec.kind == "balltree":
        from .balltree import BallTreeIndex

        index = BallTreeIndex(
            base,
            leaf_size=spec.params["leaf_size"],
            max_nodes=spec.params.get("max_nodes"),
            spec=spec,
        )
    elif spec.kind == "kdforest":
        from .kdforest import KdForestIndex

        index = KdForestIndex(
            base,
            num_trees=spec.params["num_trees"],
            max_checks=spec.params["max_checks"],
            top_dims=spec.params.get("top_dims", min(5, base.d)),
            leaf_size=spec.params.get("leaf_size", 16),
            seed=spec.params.get("seed", 0),
            spec=spec,
        )
    else:  # unreachable: IndexSpec validates kinds
        raise ValidationError(f"unknown index kind {spec.kind!r}")
    index.build_seconds = time.perf_counter() - t0
    return index


def query(index, q: np.ndarray, k: int) -> QueryResult:
    """Query any index kind for the top-k neighbors of one point."""
    return index.query(np.asarray(q), k)
