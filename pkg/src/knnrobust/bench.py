"""Recall-versus-throughput and build-time benchmarking of index specs.

Queries run one at a time on a single thread so throughput numbers compare
algorithms rather than parallelism.  Recall values are reproducible across
runs for deterministic specs; only the timing fields vary.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import IndexSpec, build, label_fp
from .errors import ValidationError
from .vecdata import GroundTruth, VectorSet


@dataclass
class BenchRun:
    spec: IndexSpec
    label: str
    build_seconds: float
    recalls: np.ndarray     # (n_queries,)
    latencies: np.ndarray   # (n_queries,) seconds
    mean_recall: float
    qps: float
    error: str | None = None

    @classmethod
    def failed(cls, spec: IndexSpec, error: str) -> "BenchRun":
        empty = np.zeros(0)
        return cls(spec=spec, label=spec.label(), build_seconds=0.0, recalls=empty,
                   latencies=empty, mean_recall=0.0, qps=0.0, error=error)


def run_bench(base: VectorSet, queries: VectorSet, truth: GroundTruth,
              specs: list[IndexSpec], k: int, epsilon: float = 0.0) -> list[BenchRun]:
    """Build and query each spec; a failing spec is recorded, not fatal."""
    if truth.n != queries.n or truth.k < k:
        raise ValidationError(
            f"truth shape ({truth.n}, {truth.k}) does not cover {queries.n} queries at k={k}"
        )
    runs: list[BenchRun] = []
    for spec in specs:
        try:
            index = build(spec, base)
            n_q = queries.n
            recalls = np.empty(n_q)
            latencies = np.empty(n_q)
            for i in range(n_q):
                q = queries.data[i]
                t0 = time.perf_counter()
                result = index.query(q, k)
                latencies[i] = time.perf_counter() - t0
                recalls[i] = label_fp(result, truth.dists[i, :k], epsilon=epsilon,
                                      query_id=int(queries.ids[i])).recall
            runs.append(BenchRun(
                spec=spec, label=spec.label(), build_seconds=index.build_seconds,
                recalls=recalls, latencies=latencies,
                mean_recall=float(recalls.mean()),
                qps=float(n_q / latencies.sum()),
            ))
        except ValidationError as exc:
            runs.append(BenchRun.failed(spec, str(exc)))
    return runs


@dataclass(frozen=True)
class ParetoRow:
    label: str
    mean_recall: float
    qps: float
    build_seconds: float
    pareto: bool
    error: str | None = None


def pareto_table(runs: list[BenchRun]) -> list[ParetoRow]:
    """Rows sorted by recall; a row is Pareto when no run beats it on both axes."""
    if not runs:
        raise ValidationError("no runs to tabulate")
    ok = [r for r in runs if r.error is None]
    rows: list[ParetoRow] = []
    for r in sorted(ok, key=lambda r: (r.mean_recall, r.qps)):
        dominated = any(
            o.mean_recall >= r.mean_recall and o.qps >= r.qps
            and (o.mean_recall > r.mean_recall or o.qps > r.qps)
            for o in ok
        )
        rows.append(ParetoRow(r.label, r.mean_recall, r.qps, r.build_seconds,
                              pareto=not dominated))
    for r in runs:
        if r.error is not None:
            rows.append(ParetoRow(r.label, 0.0, 0.0, 0.0, pareto=False, error=r.error))
    return rows


def write_bench_csv(rows: list[ParetoRow], path) -> None:
    lines = ["spec_label,mean_recall,qps,build_seconds,pareto_flag"]
    for row in rows:
        lines.append(
            f"{row.label},{row.mean_recall!r},{row.qps:.3f},{row.build_seconds:.3f},{int(row.pareto)}"
        )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
