"""IR metric computation over runs and qrels, trec_eval conventions.

Qrels map query id -> doc id -> integer relevance grade (>= 0). A run maps
query id -> ranked list of (doc id, score), best first, equal scores ordered
by ascending doc id. Metrics are computed per query and averaged over the
queries that appear in both the run and the qrels; run-only queries are
skipped, as trec_eval does.

nDCG uses raw-grade gain with a 1/log2(rank+1) discount (the trec_eval and
ranx default), not the exponential 2^grade - 1 variant.
"""

from __future__ import annotations

import logging
import math
import re
from pathlib import Path

from .errors import NoJudgedQueries, ParseError, UnknownMetric

logger = logging.getLogger(__name__)

Qrels = dict[str, dict[str, int]]
Run = dict[str, list[tuple[str, float]]]

_METRIC_RE = re.compile(r"^(map|ndcg@([1-9]\d*)|recall@([1-9]\d*))$")


def load_qrels(path: str | Path) -> Qrels:
    """Parse TREC qrels lines ``qid 0 did grade``.

    Duplicate (qid, did) pairs keep the last grade; the number of duplicates
    is reported through a warning log.
    """
    qrels: Qrels = {}
    duplicates = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(line_no, f"expected 4 fields, got {len(parts)}")
            qid, _, did, grade_s = parts
            try:
                grade = int(grade_s)
            except ValueError:
                raise ParseError(line_no, f"bad grade {grade_s!r}") from None
            if grade < 0:
                raise ParseError(line_no, f"negative grade {grade}")
            per_q = qrels.setdefault(qid, {})
            if did in per_q:
                duplicates += 1
            per_q[did] = grade
    if duplicates:
        logger.warning("qrels %s: %d duplicate (query, doc) pairs, last grade kept", path, duplicates)
    return qrels


def sort_run(run: Run) -> Run:
    """Re-sort every ranking by (score desc, doc id asc)."""
    return {
        qid: sorted(ranking, key=lambda pair: (-pair[1], pair[0]))
        for qid, ranking in run.items()
    }


def load_run(path: str | Path) -> Run:
    """Parse a TREC run file ``qid Q0 did rank score tag``."""
    run: Run = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ParseError(line_no, f"expected 6 fields, got {len(parts)}")
            qid, _, did, _, score_s, _ = parts
            try:
                score = float(score_s)
            except ValueError:
                raise ParseError(line_no, f"bad score {score_s!r}") from None
            ranking = run.setdefault(qid, [])
            if any(d == did for d, _ in ranking):
                raise ParseError(line_no, f"duplicate doc {did!r} for query {qid!r}")
            ranking.append((did, score))
    return sort_run(run)


def write_run(run: Run, path: str | Path, tag: str = "latesearch") -> None:
    """Write a run in TREC format with scores printed to 6 decimals."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid in run:
            for rank, (did, score) in enumerate(run[qid], start=1):
                fh.write(f"{qid} Q0 {did} {rank} {score:.6f} {tag}\n")


def _evaluated_queries(run: Run, qrels: Qrels) -> list[str]:
    qids = sorted(q for q in run if q in qrels)
    if not qids:
        raise NoJudgedQueries("no run query appears in the qrels")
    return qids


def ndcg_at_k(run: Run, qrels: Qrels, k: int) -> tuple[dict[str, float], float]:
    """Per-query and mean nDCG@k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    per_query: dict[str, float] = {}
    for qid in _evaluated_queries(run, qrels):
        grades = qrels[qid]
        dcg = 0.0
        for i, (did, _) in enumerate(run[qid][:k], start=1):
            g = grades.get(did, 0)
            if g:
                dcg += g / math.log2(i + 1)
        ideal = sorted(grades.values(), reverse=True)[:k]
        idcg = sum(g / math.log2(i + 1) for i, g in enumerate(ideal, start=1) if g)
        per_query[qid] = dcg / idcg if idcg > 0 else 0.0
    mean = _mean_sorted(per_query)
    return per_query, mean


def average_precision(run: Run, qrels: Qrels) -> tuple[dict[str, float], float]:
    """Per-query AP and the mean (MAP). Grades binarize as grade > 0."""
    per_query: dict[str, float] = {}
    for qid in _evaluated_queries(run, qrels):
        relevant = {d for d, g in qrels[qid].items() if g > 0}
        if not relevant:
            per_query[qid] = 0.0
            continue
        hits = 0
        precision_sum = 0.0
        for i, (did, _) in enumerate(run[qid], start=1):
            if did in relevant:
                hits += 1
                precision_sum += hits / i
        per_query[qid] = precision_sum / len(relevant)
    mean = _mean_sorted(per_query)
    return per_query, mean


def recall_at_k(run: Run, qrels: Qrels, k: int) -> tuple[dict[str, float], float]:
    """Per-query and mean recall@k with grades binarized as grade > 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    per_query: dict[str, float] = {}
    for qid in _evaluated_queries(run, qrels):
        relevant = {d for d, g in qrels[qid].items() if g > 0}
        if not relevant:
            per_query[qid] = 0.0
            continue
        top = {did for did, _ in run[qid][:k]}
        per_query[qid] = len(relevant & top) / len(relevant)
    mean = _mean_sorted(per_query)
    return per_query, mean


def _mean_sorted(per_query: dict[str, float]) -> float:
    # summation in sorted-query order keeps aggregation deterministic
    return sum(per_query[q] for q in sorted(per_query)) / len(per_query)


def evaluate(run: Run, qrels: Qrels, metrics: list[str]) -> dict[str, float]:
    """Compute each named metric; names follow the ``name[@K]`` grammar.

    Supported: ``map``, ``ndcg@K``, ``recall@K``.
    """
    out: dict[str, float] = {}
    for name in metrics:
        m = _METRIC_RE.match(name)
        if not m:
            raise UnknownMetric(
                f"{name!r}; supported metrics: map, ndcg@K, recall@K (K a positive integer)"
            )
        if name == "map":
            _, out[name] = average_precision(run, qrels)
        elif name.startswith("ndcg@"):
            _, out[name] = ndcg_at_k(run, qrels, int(m.group(2)))
        else:
            _, out[name] = recall_at_k(run, qrels, int(m.group(3)))
    return out
