"""Clustering agreement (ARI, pairwise P/R/F1) and cross-modal retrieval (CMC, mAP, mINP).

Outliers (label -1) count as singleton clusters in every clustering metric.
"""
from dataclasses import asdict, dataclass

import numpy as np

from . import errors
from .features import normalize

CMC_RANKS = (1, 5, 10, 20)


def _as_labels(pred):
    return np.asarray(getattr(pred, "labels", pred), dtype=np.int64)


def singletons_for_outliers(labels):
    labels = np.array(labels, dtype=np.int64)
    out = labels < 0
    if np.any(out):
        start = labels.max() + 1 if np.any(~out) else 0
        labels[out] = start + np.arange(int(out.sum()))
    return labels


def _pair_counts(pred, truth):
    pred = singletons_for_outliers(_as_labels(pred))
    truth = np.asarray(truth, dtype=np.int64)
    if len(pred) != len(truth):
        raise errors.LengthMismatch(f"{len(pred)} predictions vs {len(truth)} truths")
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)

    def pairs(x):
        return int(sum(int(v) * (int(v) - 1) // 2 for v in x.ravel()))

    both = pairs(table)
    same_pred = pairs(table.sum(axis=1))
    same_truth = pairs(table.sum(axis=0))
    n = len(pred)
    return both, same_pred, same_truth, n * (n - 1) // 2


def ari(pred, truth):
    """Adjusted Rand index from the contingency table (integer arithmetic, one division)."""
    both, a, b, total = _pair_counts(pred, truth)
    num = 2 * (both * total - a * b)
    den = (a + b) * total - 2 * a * b
    if den == 0:
        return 1.0
    return num / den


def pairwise_prf(pred, truth):
    both, same_pred, same_truth, _ = _pair_counts(pred, truth)
    precision = both / same_pred if same_pred else 1.0
    recall = both / same_truth if same_truth else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class ClusterReport:
    ari: float
    precision: float
    recall: float
    f1: float
    n_clusters: int
    n_outliers: int
    n_identities: int


def cluster_report(pred, truth):
    labels = _as_labels(pred)
    truth = np.asarray(truth)
    p, r, f = pairwise_prf(labels, truth)
    return ClusterReport(
        ari=ari(labels, truth),
        precision=p,
        recall=r,
        f1=f,
        n_clusters=len(np.unique(labels[labels >= 0])),
        n_outliers=int(np.sum(labels < 0)),
        n_identities=len(np.unique(truth)),
    )


@dataclass(frozen=True)
class RetrievalReport:
    rank1: float
    rank5: float
    rank10: float
    rank20: float
    map: float
    minp: float
    n_query: int
    n_gallery: int

    def to_dict(self):
        return asdict(self)


def average_precision(relevant):
    """AP of a 0/1 relevance vector in rank order."""
    relevant = np.asarray(relevant, dtype=bool)
    hits = np.flatnonzero(relevant)
    if len(hits) == 0:
        return 0.0
    return float(np.mean(np.arange(1, len(hits) + 1) / (hits + 1)))


def inverse_negative_penalty(relevant):
    relevant = np.asarray(relevant, dtype=bool)
    hits = np.flatnonzero(relevant)
    if len(hits) == 0:
        return 0.0
    return len(hits) / (hits[-1] + 1)


def retrieval_eval(query, query_ids, gallery, gallery_ids):
    """Rank the gallery by cosine similarity for every query.

    Ties keep ascending gallery order. Queries without any relevant gallery
    item are skipped; if none remain, EmptyEvaluation is raised.
    """
    qf = normalize(query)
    gf = normalize(gallery)
    query_ids = np.asarray(query_ids)
    gallery_ids = np.asarray(gallery_ids)
    if len(qf) != len(query_ids) or len(gf) != len(gallery_ids):
        raise errors.LengthMismatch("features and identities differ in length")
    sim = qf @ gf.T
    order = np.argsort(-sim, axis=1, kind="stable")
    matches = gallery_ids[order] == query_ids[:, None]
    valid = matches.any(axis=1)
    if not np.any(valid):
        raise errors.EmptyEvaluation("no query has a matching gallery identity")
    matches = matches[valid]
    first_hit = np.argmax(matches, axis=1)
    cmc = {k: float(np.mean(first_hit < k)) for k in CMC_RANKS}
    aps = [average_precision(m) for m in matches]
    inps = [inverse_negative_penalty(m) for m in matches]
    return RetrievalReport(
        rank1=cmc[1],
        rank5=cmc[5],
        rank10=cmc[10],
        rank20=cmc[20],
        map=float(np.mean(aps)),
        minp=float(np.mean(inps)),
        n_query=int(valid.sum()),
        n_gallery=len(gf),
    )


TRAJECTORY_HEADER = ("epoch", "phase", "scope", "n_clusters", "n_outliers")


def cluster_trajectory(rows):
    """(epoch, phase, scope, clusters, outliers) tuples from run-log rows.

    ``epoch`` is the global epoch index across both phases.
    """
    rows = list(rows)
    if not rows:
        raise errors.EmptyLog("no epochs logged")
    out = []
    for row in rows:
        for scope in ("v", "r", "m"):
            n_c = row.get(f"clusters_{scope}")
            if n_c is None or n_c == "":
                continue
            out.append((row["global_epoch"], row["phase"], scope, int(n_c), int(row[f"outliers_{scope}"])))
    return out


def write_trajectory(rows, path):
    with open(path, "w") as fh:
        fh.write(",".join(TRAJECTORY_HEADER) + "\n")
        for rec in cluster_trajectory(rows):
            fh.write(",".join(str(v) for v in rec) + "\n")
