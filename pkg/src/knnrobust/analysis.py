"""PCA diagnostics: do correctly and incorrectly answered queries separate?

The covariance eigenproblem is solved with cyclic Jacobi rotations (the
matrices here are at most a few hundred square).  Scatter output pairs the
first two principal coordinates with the TP/FP label and quantifies
separation as the accuracy of the best single-threshold split along each
component, which turns an eyeball judgement into a testable number.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FpLabel
from .errors import ValidationError
from .vecdata import VectorSet


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray                # (d,)
    components: np.ndarray          # (c, d), orthonormal rows
    explained_variance: np.ndarray  # (c,), non-negative, non-increasing

    @property
    def c(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]


def jacobi_eigh(matrix: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and eigenvectors (columns) of a symmetric matrix.

    Cyclic Jacobi: sweep all off-diagonal pairs, rotating each to zero, until
    the off-diagonal Frobenius norm falls below ``tol``.
    """
    a = np.asarray(matrix, dtype=np.float64).copy()
    n = a.shape[0]
    if a.shape != (n, n) or not np.allclose(a, a.T, atol=1e-12, rtol=0.0):
        raise ValidationError("matrix must be symmetric")
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt((a * a).sum() - (np.diag(a) ** 2).sum())
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:  # theta**2 would overflow; use the limit
                    t = 1.0 / (2.0 * theta)
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                g = np.array([[c, s], [-s, c]])
                a[[p, q], :] = g.T @ a[[p, q], :]
                a[:, [p, q]] = a[:, [p, q]] @ g
                v[:, [p, q]] = v[:, [p, q]] @ g
    return np.diag(a).copy(), v


def fit_pca(points: VectorSet, c: int) -> PcaModel:
    """Top-c principal components of the sample covariance (rows of output).

    Component signs are fixed so the largest-magnitude entry is positive.
    Degenerate inputs (all points identical) report zero variance over an
    arbitrary orthonormal basis.
    """
    if points.n < 2:
        raise ValidationError("PCA needs at least 2 points")
    if not 1 <= c <= min(points.n, points.d):
        raise ValidationError(f"c must be in [1, {min(points.n, points.d)}], got {c}")
    x = points.data.astype(np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (points.n - 1)
    values, vectors = jacobi_eigh(cov)
    order = np.argsort(-values, kind="stable")
    components = vectors[:, order[:c]].T.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    variance = np.clip(values[order[:c]], 0.0, None)
    return PcaModel(mean=mean, components=components, explained_variance=variance)


def project(model: PcaModel, points: VectorSet) -> VectorSet:
    """Project points onto the model's components: (x - mean) @ components.T."""
    if points.d != model.d:
        raise ValidationError(f"dimension mismatch: model d={model.d}, points d={points.d}")
    projected = (points.data.astype(np.float64) - model.mean) @ model.components.T
    return VectorSet(projected)


def best_threshold_accuracy(values: np.ndarray, is_fp: np.ndarray) -> float:
    """Accuracy of the best single-threshold split of ``values`` by label.

    Considers every threshold between consecutive sorted values plus the two
    trivial all-one-side splits, in both polarities.
    """
    values = np.asarray(values, dtype=np.float64)
    is_fp = np.asarray(is_fp, dtype=bool)
    n = values.shape[0]
    order = np.argsort(values, kind="stable")
    labels = is_fp[order].astype(np.int64)
    # fp_left[i] = FPs among the i smallest values (split after position i)
    fp_left = np.concatenate([[0], np.cumsum(labels)])
    total_fp = int(fp_left[-1])
    counts = np.arange(n + 1)
    # rule A: left side predicted TP, right side FP
    correct_a = (counts - fp_left) + (total_fp - fp_left)
    # rule B: the opposite polarity
    correct_b = fp_left + ((n - counts) - (total_fp - fp_left))
    return float(np.maximum(correct_a, correct_b).max()) / n


@dataclass(frozen=True)
class ScatterTable:
    pc1: np.ndarray
    pc2: np.ndarray
    is_fp: np.ndarray
    separability: dict[str, float]  # per-component best-split accuracy + overall best
    degenerate: bool                # single-class input: score is trivially 1.0

    @property
    def n(self) -> int:
        return self.pc1.shape[0]


def tp_fp_scatter(queries: VectorSet, labels: list[FpLabel], model: PcaModel) -> ScatterTable:
    """Rows of (pc1, pc2, is_fp) plus single-threshold separability scores."""
    if len(labels) != queries.n:
        raise ValidationError(f"got {len(labels)} labels for {queries.n} queries")
    if model.c < 2:
        raise ValidationError("scatter needs a model with at least 2 components")
    projected = project(model, queries).data
    is_fp = np.array([lab.is_fp for lab in labels], dtype=bool)
    degenerate = bool(is_fp.all() or (~is_fp).all())
    pc1 = projected[:, 0].astype(np.float64)
    pc2 = projected[:, 1].astype(np.float64)
    s1 = best_threshold_accuracy(pc1, is_fp)
    s2 = best_threshold_accuracy(pc2, is_fp)
    return ScatterTable(
        pc1=pc1, pc2=pc2, is_fp=is_fp,
        separability={"pc1": s1, "pc2": s2, "best": max(s1, s2)},
        degenerate=degenerate,
    )


def write_scatter_csv(table: ScatterTable, path) -> None:
    lines = ["pc1,pc2,is_fp"]
    for x, y, flag in zip(table.pc1, table.pc2, table.is_fp):
        lines.append(f"{x!r},{y!r},{int(flag)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
