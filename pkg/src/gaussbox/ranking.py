"""Parent ranking for held-out concepts, retrieval metrics, and p-value pooling.

A query concept is attached by projecting it and every candidate anchor to
their Gaussians and sorting anchors by an energy score: either Bhattacharyya
overlap or negative KL from query to anchor.  Ties break toward the smaller
anchor id so rankings are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaincc

from gaussbox.geometry import DiagGaussian
from gaussbox.projection import ProjectionParams, forward_batch
from gaussbox.taxonomy import TaxonomyGraph, wu_palmer

SCORERS = ("bc", "kl")


def _check_scorer(scorer: str) -> None:
    if scorer not in SCORERS:
        raise ValueError(f"unknown scorer {scorer!r}, expected one of {SCORERS}")


def score_anchor(scorer: str, query: DiagGaussian, anchor: DiagGaussian) -> float:
    """Higher is better.  'bc' is the Bhattacharyya coefficient between anchor
    and query; 'kl' is the negative KL divergence from query to anchor."""
    _check_scorer(scorer)
    s = _batch_scores(
        scorer,
        query.mean, query.variance,
        anchor.mean[None, :], anchor.variance[None, :],
    )
    return float(s[0])


def _batch_scores(scorer, mu_q, v_q, mu_a, v_a):
    """Scores of one query against (A, d) anchor arrays."""
    if scorer == "bc":
        m = 0.5 * (v_a + v_q)
        diff = mu_a - mu_q
        db = (
            0.125 * (diff * diff / m).sum(-1)
            + 0.5 * np.log(m).sum(-1)
            - 0.25 * (np.log(v_a).sum(-1) + np.log(v_q).sum(-1))
        )
        return np.exp(-db)
    diff = mu_a - mu_q
    kl = 0.5 * (
        (v_q / v_a).sum(-1)
        + (diff * diff / v_a).sum(-1)
        - mu_q.shape[-1]
        + np.log(v_a).sum(-1)
        - np.log(v_q).sum(-1)
    )
    return -kl


@dataclass(frozen=True)
class RankedPrediction:
    """Anchors sorted best-first for one query, with gold bookkeeping."""

    query: str
    ranking: tuple            # ((anchor_id, score), ...) descending score
    gold_parents: tuple
    gold_ranks: tuple         # ascending 1-based ranks of the gold parents


def _order_by_score(anchor_ids, scores):
    idx = sorted(range(len(anchor_ids)), key=lambda i: (-scores[i], anchor_ids[i]))
    return [(anchor_ids[i], float(scores[i])) for i in idx]


def rank_anchors(
    params: ProjectionParams,
    embeddings,
    query_id: str,
    seed_graph: TaxonomyGraph,
    scorer: str,
    gold_parents=None,
) -> RankedPrediction:
    """Rank every seed node (minus the query itself) as a parent candidate."""
    _check_scorer(scorer)
    anchors = [i for i in seed_graph.ids() if i != query_id]
    if not anchors:
        raise ValueError("no candidate anchors to rank")
    X = embeddings.matrix(anchors + [query_id])
    centers, offsets, _ = forward_batch(params, X)
    variances = offsets * offsets
    scores = _batch_scores(scorer, centers[-1], variances[-1], centers[:-1], variances[:-1])
    ranking = _order_by_score(anchors, scores)

    gold_parents = tuple(sorted(gold_parents)) if gold_parents else ()
    position = {a: i + 1 for i, (a, _) in enumerate(ranking)}
    ranks = []
    for g in gold_parents:
        if g not in position:
            raise ValueError(f"gold parent {g!r} is not among the ranked anchors")
        ranks.append(position[g])
    return RankedPrediction(
        query=query_id,
        ranking=tuple(ranking),
        gold_parents=gold_parents,
        gold_ranks=tuple(sorted(ranks)),
    )


def evaluate_queries(params, embeddings, queries, seed_graph, scorer="bc", ks=(1, 5, 10)):
    """Rank anchors for every held-out query and compute the metric report.

    Returns (MetricReport, list of RankedPrediction).
    """
    preds = [
        rank_anchors(params, embeddings, q.query, seed_graph, scorer, gold_parents=q.gold_parents)
        for q in queries
    ]
    return compute_metrics(preds, ks=ks, graph=seed_graph), preds


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricReport:
    num_queries: int
    mr: float
    mrr: float
    recall: dict
    hit: dict
    wu_palmer: float | None

    def rows(self):
        """(metric, k, value) triplets; k is empty for rank-wide metrics."""
        out = [("queries", "", float(self.num_queries)), ("mr", "", self.mr), ("mrr", "", self.mrr)]
        for k in sorted(self.recall):
            out.append(("recall", k, self.recall[k]))
        for k in sorted(self.hit):
            out.append(("hit", k, self.hit[k]))
        if self.wu_palmer is not None:
            out.append(("wu_palmer", "", self.wu_palmer))
        return out

    def lines(self):
        return [(f"{m}@{k}" if k != "" else m, v) for m, k, v in self.rows()]


def compute_metrics(preds, ks=(1, 5, 10), graph: TaxonomyGraph | None = None) -> MetricReport:
    """Rank-based retrieval metrics over a query workload.

    Reciprocal rank uses each query's best-ranked gold parent; mean rank
    averages each query's mean gold rank; recall@k counts the fraction of
    gold parents inside the top k; hit@k asks whether any gold parent made
    the top k.  With a graph given, Wu-Palmer similarity compares the top-1
    prediction to the closest gold parent.
    """
    preds = list(preds)
    if not preds:
        raise ValueError("no predictions to score")
    for k in ks:
        if int(k) != k or k < 1:
            raise ValueError(f"cutoffs must be positive integers, got {k!r}")
    for p in preds:
        if not p.gold_ranks:
            raise ValueError(f"query {p.query!r} has no gold parents")

    best = np.array([min(p.gold_ranks) for p in preds], dtype=float)
    recall = {}
    hit = {}
    for k in ks:
        recall[k] = float(np.mean([
            sum(1 for r in p.gold_ranks if r <= k) / len(p.gold_ranks) for p in preds
        ]))
        hit[k] = float(np.mean([1.0 if min(p.gold_ranks) <= k else 0.0 for p in preds]))

    wp = None
    if graph is not None:
        vals = []
        for p in preds:
            top1 = p.ranking[0][0]
            vals.append(max(wu_palmer(graph, top1, g) for g in p.gold_parents))
        wp = float(np.mean(vals))

    return MetricReport(
        num_queries=len(preds),
        mr=float(np.mean([np.mean(p.gold_ranks) for p in preds])),
        mrr=float(np.mean(1.0 / best)),
        recall=recall,
        hit=hit,
        wu_palmer=wp,
    )


def save_predictions(preds, path, limit: int | None = None) -> None:
    """TSV of ranked anchors per query; `limit` truncates each ranking."""
    lines = ["query_id\trank\tanchor_id\tscore"]
    for p in preds:
        ranking = p.ranking if limit is None else p.ranking[:limit]
        for rank, (anchor, score) in enumerate(ranking, start=1):
            lines.append(f"{p.query}\t{rank}\t{anchor}\t{score!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_report(report: MetricReport, txt_path, csv_path) -> None:
    txt = "\n".join(f"{name}\t{value!r}" for name, value in report.lines())
    Path(txt_path).write_text(txt + "\n", encoding="utf-8")
    csv = "\n".join(f"{m},{k},{v!r}" for m, k, v in report.rows())
    Path(csv_path).write_text("metric,k,value\n" + csv + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# p-value pooling


def fisher_combine(pvalues) -> tuple[float, float]:
    """Pool independent p-values: statistic -2 * sum(ln p) against a
    chi-squared with 2k degrees of freedom.

    Returns (statistic, combined p).  The survival value is the regularized
    upper incomplete gamma Q(k, statistic / 2).
    """
    ps = [float(p) for p in pvalues]
    if not ps:
        raise ValueError("need at least one p-value")
    for p in ps:
        if not 0.0 < p <= 1.0:
            raise ValueError(f"p-values must lie in (0, 1], got {p}")
    stat = -2.0 * float(np.sum(np.log(ps)))
    combined = float(gammaincc(len(ps), stat / 2.0))
    return stat, combined
