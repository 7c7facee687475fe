"""Vector datasets: ingestion, synthetic generation, splitting, exact ground truth.

Datasets are immutable in-memory matrices with unique integer point ids that
are dense in ``[0, n)``.  Binary files are little-endian and start with a
4-byte magic so truncated or foreign files fail fast with a useful message:

* vectors      ``VDS1`` | u32 n | u32 d | n*d float32 row-major
* ground truth ``GTK1`` | u32 n | u32 k | n*k u32 ids | n*k float32 distances
* CSV          one point per line, comma-separated decimals, no header
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

VECTOR_MAGIC = b"VDS1"
TRUTH_MAGIC = b"GTK1"

_CHUNK = 256  # queries per ground-truth work unit


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class VectorSet:
    """An (n, d) matrix of finite points plus ids dense in [0, n).

    float32 input is kept as-is (the on-disk dtype); everything else is
    promoted to float64.  Arrays are made read-only so a set can be shared
    across threads.
    """

    data: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValidationError(f"data must be a non-empty 2-d array, got shape {data.shape}")
        if data.dtype != np.float32:
            data = data.astype(np.float64)
        finite = np.isfinite(data).all(axis=1)
        if not finite.all():
            raise ValidationError(f"non-finite value in row {int(np.argmin(finite))}")
        object.__setattr__(self, "data", _readonly(data))

        ids = self.ids
        if ids is None:
            ids = np.arange(data.shape[0], dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64)
        n = data.shape[0]
        if ids.shape != (n,) or not np.array_equal(np.sort(ids), np.arange(n)):
            raise ValidationError("ids must be unique and dense in [0, n)")
        object.__setattr__(self, "ids", _readonly(ids))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class GroundTruth:
    """Exact top-k neighbor ids and Euclidean distances per query row."""

    k: int
    ids: np.ndarray    # (n, k) int64
    dists: np.ndarray  # (n, k) float64, each row non-decreasing

    def __post_init__(self) -> None:
        ids = np.asarray(self.ids, dtype=np.int64)
        dists = np.asarray(self.dists, dtype=np.float64)
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if ids.ndim != 2 or ids.shape[1] != self.k or dists.shape != ids.shape:
            raise ValidationError(
                f"ids/dists must both have shape (n, {self.k}), got {ids.shape} and {dists.shape}"
            )
        if not np.isfinite(dists).all() or (dists < 0).any():
            raise ValidationError("distances must be finite and non-negative")
        if self.k > 1:
            if (np.diff(dists, axis=1) < 0).any():
                raise ValidationError("distance rows must be non-decreasing")
            if (np.diff(np.sort(ids, axis=1), axis=1) == 0).any():
                raise ValidationError("neighbor ids must be distinct within a row")
        object.__setattr__(self, "ids", _readonly(ids))
        object.__setattr__(self, "dists", _readonly(dists))

    @property
    def n(self) -> int:
        return self.ids.shape[0]


def topk_euclidean(
    data: np.ndarray,
    ids: np.ndarray,
    queries: np.ndarray,
    k: int,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-k Euclidean search of ``queries`` against ``data``.

    Candidates are selected per query from the expanded form
    ``|q|^2 + |x|^2 - 2 q.x`` (one BLAS product per chunk), then the selected
    distances are recomputed from coordinate differences so the emitted values
    are bitwise identical to any other code path that scores the same point.
    Ties are broken toward the smaller id, including at the k-th boundary.

    Returns ``(ids, dists)`` of shape (n_queries, k); rows are sorted by
    (distance, id).  Deterministic for any ``threads`` value.
    """
    n = data.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in [1, {n}], got {k}")
    order = np.argsort(ids)
    base = data[order].astype(np.float64)
    base_ids = np.asarray(ids, dtype=np.int64)[order]
    base_sq = np.einsum("ij,ij->i", base, base)

    q_all = np.asarray(queries, dtype=np.float64)
    m = q_all.shape[0]
    out_ids = np.empty((m, k), dtype=np.int64)
    out_dists = np.empty((m, k), dtype=np.float64)

    def run_chunk(lo: int, hi: int) -> None:
        q = q_all[lo:hi]
        d2 = base_sq[None, :] - 2.0 * (q @ base.T)
        d2 += np.einsum("ij,ij->i", q, q)[:, None]
        if k == n:
            sel = np.broadcast_to(np.arange(n), (q.shape[0], n)).copy()
        else:
            # keep the k best of k+1 candidates ordered by (d2, id); a tie
            # across the k-th boundary may extend past the candidate set and
            # then needs a full-row repair so smaller ids win
            wide = np.sort(np.argpartition(d2, k, axis=1)[:, : k + 1], axis=1)
            wide_d2 = np.take_along_axis(d2, wide, axis=1)
            order = np.argsort(wide_d2, axis=1, kind="stable")
            sorted_d2 = np.take_along_axis(wide_d2, order, axis=1)
            sel = np.take_along_axis(wide, order[:, :k], axis=1)
            for r in np.nonzero(sorted_d2[:, k - 1] == sorted_d2[:, k])[0]:
                row = d2[r]
                kth = sorted_d2[r, k - 1]
                lt = np.nonzero(row < kth)[0]
                eq = np.nonzero(row == kth)[0][: k - lt.shape[0]]
                sel[r] = np.concatenate([lt, eq])
        sel = np.sort(sel, axis=1)  # positions ascending == ids ascending
        rows = q.shape[0]
        flat = base[sel.ravel()]
        diff = flat - np.repeat(q, k, axis=0)
        dd = np.sqrt(np.einsum("ij,ij->i", diff, diff)).reshape(rows, k)
        ordr = np.argsort(dd, axis=1, kind="stable")
        out_dists[lo:hi] = np.take_along_axis(dd, ordr, axis=1)
        out_ids[lo:hi] = base_ids[np.take_along_axis(sel, ordr, axis=1)]

    bounds = [(lo, min(lo + _CHUNK, m)) for lo in range(0, m, _CHUNK)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: run_chunk(*b), bounds))
    else:
        for b in bounds:
            run_chunk(*b)
    return out_ids, out_dists


def exact_ground_truth(base: VectorSet, queries: VectorSet, k: int, threads: int = 1) -> GroundTruth:
    """Brute-force top-k neighbors of every query, ties broken by smaller id."""
    if base.d != queries.d:
        raise ValidationError(f"dimension mismatch: base d={base.d}, queries d={queries.d}")
    if k > base.n:
        raise ValidationError(f"k={k} exceeds base size {base.n}")
    ids, dists = topk_euclidean(base.data, base.ids, queries.data, k, threads=threads)
    return GroundTruth(k, ids, dists)


def synthetic_centers(d: int, clusters: int, spread: float, seed: int) -> np.ndarray:
    """Cluster centers used by make_synthetic for the same arguments."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 10.0 * spread, size=(clusters, d))


def make_synthetic(n: int, d: int, clusters: int, spread: float, seed: int) -> VectorSet:
    """Draw n points from a mixture of isotropic Gaussians.

    Centers are N(0, (10*spread)^2) per coordinate, cluster assignment is
    uniform, and each point adds N(0, spread^2) noise.  Deterministic for a
    fixed seed; ``synthetic_centers`` reproduces the centers.
    """
    if clusters < 1 or n < clusters:
        raise ValidationError(f"need n >= clusters >= 1, got n={n}, clusters={clusters}")
    if d < 1:
        raise ValidationError("d must be >= 1")
    if not spread > 0:
        raise ValidationError("spread must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 10.0 * spread, size=(clusters, d))
    labels = rng.integers(0, clusters, size=n)
    pts = centers[labels] + rng.normal(0.0, spread, size=(n, d))
    return VectorSet(pts.astype(np.float32))


def split_train_query(vs: VectorSet, query_count: int, seed: int) -> tuple[VectorSet, VectorSet]:
    """Split one set into disjoint (train, query) sets with fresh dense ids."""
    if not 1 <= query_count < vs.n:
        raise ValidationError(f"query_count must be in [1, {vs.n - 1}], got {query_count}")
    perm = np.random.default_rng(seed).permutation(vs.n)
    train_rows = np.sort(perm[: vs.n - query_count])
    query_rows = np.sort(perm[vs.n - query_count:])
    return VectorSet(vs.data[train_rows]), VectorSet(vs.data[query_rows])


def save_vectors(vs: VectorSet, path: str | Path, format: str = "binary") -> None:
    """Write a VectorSet; the binary format stores float32 exactly."""
    path = Path(path)
    if format == "binary":
        with open(path, "wb") as f:
            f.write(VECTOR_MAGIC)
            f.write(struct.pack("<II", vs.n, vs.d))
            f.write(vs.data.astype("<f4").tobytes())
    elif format == "csv":
        rows = vs.data.astype(np.float32)
        text = "\n".join(",".join(str(v) for v in row) for row in rows)
        path.write_text(text + "\n")
    else:
        raise ValidationError(f"unknown format {format!r}")


def load_vectors(path: str | Path, format: str = "binary") -> VectorSet:
    """Read a VectorSet written by save_vectors; errors carry the bad row index."""
    path = Path(path)
    if format == "binary":
        raw = path.read_bytes()
        if len(raw) < 12 or raw[:4] != VECTOR_MAGIC:
            raise FormatError(f"{path}: malformed header (expected magic {VECTOR_MAGIC!r})")
        n, d = struct.unpack("<II", raw[4:12])
        expected = 12 + 4 * n * d
        if len(raw) != expected:
            raise FormatError(f"{path}: expected {expected} bytes for {n}x{d} float32, got {len(raw)}")
        data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(n, d)
    elif format == "csv":
        lines = path.read_text().splitlines()
        while lines and not lines[-1].strip():
            lines.pop()
        if not lines:
            raise FormatError(f"{path}: empty file")
        rows = []
        width = None
        for i, line in enumerate(lines):
            parts = line.split(",")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise FormatError(f"{path}: row {i}: expected {width} values, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise FormatError(f"{path}: row {i}: {exc}") from exc
        data = np.asarray(rows, dtype=np.float32)
    else:
        raise ValidationError(f"unknown format {format!r}")
    try:
        return VectorSet(data)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_ground_truth(gt: GroundTruth, path: str | Path) -> None:
    with open(path, "wb") as f:
        f.write(TRUTH_MAGIC)
        f.write(struct.pack("<II", gt.n, gt.k))
        f.write(gt.ids.astype("<u4").tobytes())
        f.write(gt.dists.astype("<f4").tobytes())


def load_ground_truth(path: str | Path) -> GroundTruth:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != TRUTH_MAGIC:
        raise FormatError(f"{path}: malformed header (expected magic {TRUTH_MAGIC!r})")
    n, k = struct.unpack("<II", raw[4:12])
    expected = 12 + n * k * 8
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for n={n}, k={k}, got {len(raw)}")
    ids = np.frombuffer(raw, dtype="<u4", offset=12, count=n * k).reshape(n, k)
    dists = np.frombuffer(raw, dtype="<f4", offset=12 + 4 * n * k).reshape(n, k)
    try:
        return GroundTruth(k, ids.astype(np.int64), dists.astype(np.float64))
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc
