"""Recall benchmarks, interval statistics, and publication-lag histograms.

This module turns ranked retrieval results into summary statistics:
recall@k means with normal-approximation 95% confidence
intervals, per-manipulation breakdowns, pairwise chi-square comparisons
(with Yates continuity correction), and signed week-bucket histograms of
how long after (or before) a query's post its match appeared elsewhere.

Everything here is pure arithmetic over outcome records; rendering to
figures is deliberately left to callers (the CLI pairs this module's CSV
output with a separate plotting step).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyInput, EmptyQuery
from .feature_io import QueryRow
from .vector_index import (
    FlatIndex,
    QueryParams,
    RetrievalResult,
    query_distance,
    query_votes,
)

DEFAULT_KS = (1, 3, 10)
Z_95 = 1.96


@dataclass
class QueryOutcome:
    query_id: str
    source_id: str
    manip_id: str
    rank_of_source: int | None  # 1-based; None when not retrieved in top n
    hits: dict[int, int]  # k -> 0/1


@dataclass(frozen=True)
class PerManipulation:
    n: int
    recall: dict[int, float]


@dataclass(frozen=True)
class SkippedQuery:
    source_id: str
    manip_id: str
    reason: str


@dataclass(frozen=True)
class EvalReport:
    mode: str
    n_queries: int
    recall: dict[int, float]
    ci: dict[int, tuple[float, float]]
    per_manipulation: dict[str, PerManipulation]
    skipped: tuple[SkippedQuery, ...] = ()
    missing_source: tuple[str, ...] = ()


def score_query(
    result: RetrievalResult,
    source_id: str,
    ks: Sequence[int] = DEFAULT_KS,
    query_id: str = "",
    manip_id: str = "",
) -> QueryOutcome:
    """Mark recall@k hits for the designated source only.

    Other near-duplicates in the ranking do not count; each query has
    exactly one ground-truth source.
    """
    rank = None
    for entry in result.entries:
        if entry.image_id == source_id:
            rank = entry.rank
            break
    hits = {k: int(rank is not None and rank <= k) for k in ks}
    return QueryOutcome(query_id, source_id, manip_id, rank, hits)


def ci_bounds(p: float, n: int) -> tuple[float, float]:
    """Normal-approximation 95% interval, clipped to [0, 1]."""
    half = Z_95 * math.sqrt(p * (1.0 - p) / n)
    return max(0.0, p - half), min(1.0, p + half)


def aggregate(
    outcomes: Sequence[QueryOutcome],
    mode: str = "votes",
    skipped: Sequence[SkippedQuery] = (),
    missing_source: Sequence[str] = (),
) -> EvalReport:
    """Reduce outcomes (sorted by query_id) to means, CIs, and groups."""
    if not outcomes:
        raise EmptyInput("no query outcomes to aggregate")
    ordered = sorted(outcomes, key=lambda o: o.query_id)
    ks = sorted(ordered[0].hits)
    n = len(ordered)
    recall: dict[int, float] = {}
    ci: dict[int, tuple[float, float]] = {}
    for k in ks:
        p = sum(o.hits[k] for o in ordered) / n
        recall[k] = p
        ci[k] = ci_bounds(p, n)
    groups: dict[str, list[QueryOutcome]] = {}
    for o in ordered:
        groups.setdefault(o.manip_id, []).append(o)
    per_manip = {
        manip: PerManipulation(
            n=len(members),
            recall={k: sum(o.hits[k] for o in members) / len(members) for k in ks},
        )
        for manip, members in sorted(groups.items())
    }
    return EvalReport(
        mode=mode,
        n_queries=n,
        recall=recall,
        ci=ci,
        per_manipulation=per_manip,
        skipped=tuple(skipped),
        missing_source=tuple(missing_source),
    )


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    p_value: float
    degenerate: bool = False


def chi_square_2x2(hits_a: int, n_a: int, hits_b: int, n_b: int) -> ChiSquareResult:
    """Yates-corrected 2x2 chi-square for two hit proportions.

    A zero margin makes the statistic undefined; that case returns
    p=1.0 flagged degenerate instead of raising.
    """
    if n_a < 1 or n_b < 1:
        raise EmptyInput("both groups need at least one trial")
    if not (0 <= hits_a <= n_a and 0 <= hits_b <= n_b):
        raise ValueError("hit counts exceed trial counts")
    a, b = hits_a, n_a - hits_a
    c, d = hits_b, n_b - hits_b
    col1, col2 = a + c, b + d
    if col1 == 0 or col2 == 0:
        return ChiSquareResult(0.0, 1.0, degenerate=True)
    total = n_a + n_b
    excess = abs(a * d - b * c) - total / 2.0
    if excess <= 0:
        return ChiSquareResult(0.0, 1.0)
    stat = total * excess * excess / (n_a * n_b * col1 * col2)
    # chi-square(1) survival function
    p = math.erfc(math.sqrt(stat / 2.0))
    return ChiSquareResult(stat, p)


@dataclass(frozen=True)
class LagRecord:
    query_id: str
    query_posted_at: datetime
    match_posted_at: datetime
    lag_weeks: int

    @classmethod
    def between(
        cls, query_id: str, query_posted_at: datetime, match_posted_at: datetime
    ) -> "LagRecord":
        """Signed whole weeks; positive when the query was posted first."""
        delta = (match_posted_at - query_posted_at).total_seconds()
        return cls(query_id, query_posted_at, match_posted_at, math.floor(delta / (7 * 86400)))


@dataclass(frozen=True)
class LagBucket:
    start_week: int  # inclusive; bucket covers [start, start + width) weeks
    percentage: float


def lag_histogram(records: Sequence[LagRecord], bucket_weeks: int = 3) -> list[LagBucket]:
    """Percentage of records per signed bucket of ``bucket_weeks`` weeks."""
    if bucket_weeks < 1:
        raise ValueError(f"bucket_weeks must be >= 1, got {bucket_weeks}")
    if not records:
        return []
    counts: dict[int, int] = {}
    for rec in records:
        idx = rec.lag_weeks // bucket_weeks
        counts[idx] = counts.get(idx, 0) + 1
    total = len(records)
    return [
        LagBucket(start_week=idx * bucket_weeks, percentage=100.0 * counts[idx] / total)
        for idx in sorted(counts)
    ]


@dataclass(frozen=True)
class MethodConfig:
    """How run_benchmark turns a query row into index features.

    ``featurize`` maps a query row to a feature array: a set of row
    vectors in vote mode, a single vector in distance mode. It may
    return None (or an empty set) when no features can be extracted;
    such queries count as misses.
    """

    mode: str  # "votes" | "distance"
    featurize: Callable[[QueryRow], np.ndarray | None]
    params: QueryParams = QueryParams()


def run_benchmark(
    ix: FlatIndex, rows: Sequence[QueryRow], config: MethodConfig
) -> tuple[EvalReport, list[QueryOutcome]]:
    """Featurize, query, and score every non-skipped manifest row.

    Queries whose source is absent from the index are excluded from
    aggregation and listed in the report's missing_source field.
    """
    known = set(ix.image_ids)
    live = [r for r in rows if not r.skipped]
    if not live:
        raise EmptyInput("query manifest holds no runnable queries")
    skipped = tuple(
        SkippedQuery(r.source_id, r.manip_id, r.reason or "skipped")
        for r in rows
        if r.skipped
    )
    missing: list[str] = []
    outcomes: list[QueryOutcome] = []
    for row in live:
        query_id = query_id_of(row)
        if row.source_id not in known:
            missing.append(query_id)
            continue
        feats = config.featurize(row)
        result = None
        if feats is not None and feats.shape[0] > 0:
            if config.mode == "votes":
                try:
                    result = query_votes(ix, feats, config.params)
                except EmptyQuery:
                    result = None
            else:
                result = query_distance(ix, feats[0], config.params)
        if result is None:
            result = RetrievalResult(entries=(), mode=config.mode)
        outcomes.append(
            score_query(
                result, row.source_id, DEFAULT_KS, query_id=query_id, manip_id=row.manip_id
            )
        )
    if not outcomes:
        raise EmptyInput("every query was excluded (missing sources)")
    report = aggregate(outcomes, config.mode, skipped=skipped, missing_source=missing)
    return report, outcomes


def query_id_of(row: QueryRow) -> str:
    """Stable id for a query row: its file stem, else source__manip."""
    if row.query_path:
        name = row.query_path.replace("\\", "/").rsplit("/", 1)[-1]
        return name.rsplit(".", 1)[0]
    return f"{row.source_id}__{row.manip_id}"


def report_to_json(report: EvalReport) -> str:
    """Canonical JSON rendering; byte-stable for identical reports."""
    obj = {
        "version": 1,
        "mode": report.mode,
        "n_queries": report.n_queries,
        "recall": {
            str(k): {
                "mean": report.recall[k],
                "ci_low": report.ci[k][0],
                "ci_high": report.ci[k][1],
            }
            for k in sorted(report.recall)
        },
        "per_manipulation": {
            manip: {"n": pm.n, "recall": {str(k): v for k, v in sorted(pm.recall.items())}}
            for manip, pm in report.per_manipulation.items()
        },
        "skipped": [
            {"source_id": s.source_id, "manip_id": s.manip_id, "reason": s.reason}
            for s in report.skipped
        ],
        "missing_source": list(report.missing_source),
    }
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def report_to_csv(report: EvalReport) -> str:
    """Per-manipulation recall table as delimited text."""
    ks = sorted(report.recall)
    header = "manip_id,n," + ",".join(f"recall@{k}" for k in ks)
    lines = [header]
    for manip, pm in report.per_manipulation.items():
        cells = ",".join(f"{pm.recall[k]:.4f}" for k in ks)
        lines.append(f"{manip},{pm.n},{cells}")
    return "\n".join(lines) + "\n"


def lag_to_csv(buckets: Sequence[LagBucket]) -> str:
    lines = ["bucket_start_week,percentage"]
    for b in buckets:
        lines.append(f"{b.start_week},{b.percentage:.4f}")
    return "\n".join(lines) + "\n"
