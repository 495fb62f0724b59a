"""DBSCAN on a precomputed distance matrix and the per-epoch label assignment."""
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import errors
from .rerank import rerank_pipeline, scope_indices

DEFAULT_MIN_SAMPLES = 4


@dataclass(frozen=True)
class PseudoLabels:
    """Cluster id per sample of a scope (-1 = outlier).

    ``indices`` maps scope-local positions to global sample indices.
    """

    labels: np.ndarray
    indices: np.ndarray
    scope: str
    epoch: int = -1

    @property
    def n_clusters(self):
        return int(self.labels.max()) + 1 if np.any(self.labels >= 0) else 0

    @property
    def n_outliers(self):
        return int(np.sum(self.labels < 0))

    def global_labels(self, n):
        """Length-n vector with -1 for samples outside this scope."""
        out = np.full(n, -1, dtype=np.int64)
        out[self.indices] = self.labels
        return out


def dbscan(dist, eps, min_samples=DEFAULT_MIN_SAMPLES):
    """Label vector for a precomputed distance matrix.

    A point is core when at least ``min_samples`` points (itself included)
    lie within ``eps``. Clusters are connected components of core points;
    a border point joins the cluster of its lowest-index core neighbour.
    Cluster ids are numbered by their lowest member index.
    """
    if not eps > 0:
        raise errors.BadEps(f"eps={eps}")
    if min_samples < 1:
        raise errors.ConfigError(f"min_samples={min_samples}")
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    adj = dist <= eps
    np.fill_diagonal(adj, True)
    core = adj.sum(axis=1) >= min_samples
    labels = np.full(n, -1, dtype=np.int64)
    core_idx = np.flatnonzero(core)
    if len(core_idx) == 0:
        return labels
    sub = adj[np.ix_(core_idx, core_idx)]
    _, comp = connected_components(csr_matrix(sub), directed=False)
    labels[core_idx] = comp
    border = np.flatnonzero(~core)
    if len(border):
        reach = adj[np.ix_(border, core_idx)]
        has = reach.any(axis=1)
        first = np.argmax(reach, axis=1)
        labels[border[has]] = comp[first[has]]
    return _renumber(labels)


def _renumber(labels):
    out = np.full_like(labels, -1)
    mapping = {}
    for i, lab in enumerate(labels):
        if lab < 0:
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def _assign(features, meta, scope, eps, k1, k2, camera_balanced, min_samples, epoch, **rerank_kw):
    idx = scope_indices(meta, scope)
    jac = rerank_pipeline(features, meta, k1, k2, camera_balanced, scope, **rerank_kw)
    return PseudoLabels(dbscan(jac, eps, min_samples), idx, scope, epoch)


def assign_intra(
    features, meta, plan, k1, camera_balanced=True, min_samples=DEFAULT_MIN_SAMPLES, epoch=-1, **rerank_kw
):
    """Modality-specific labels (visible, infrared)."""
    v = _assign(features, meta, "V", plan.eps, k1, plan.k2_intra, camera_balanced,
                min_samples, epoch, **rerank_kw)
    r = _assign(features, meta, "R", plan.eps, k1, plan.k2_intra, camera_balanced,
                min_samples, epoch, **rerank_kw)
    return v, r


def assign_inter(
    features, meta, plan, k1, camera_balanced=True, min_samples=DEFAULT_MIN_SAMPLES, epoch=-1, **rerank_kw
):
    """Modality-shared labels from joint clustering with k2 = plan.k2_inter."""
    if plan.k2_inter is None:
        raise errors.MissingInterK2("plan has no k2_inter (intra-phase plan?)")
    return _assign(features, meta, "joint", plan.eps, k1, plan.k2_inter, camera_balanced,
                   min_samples, epoch, **rerank_kw)


def save_labels(labels, path, **header):
    """Write ``index,label`` rows (global indices) after ``# key=value`` comment lines."""
    with open(path, "w") as fh:
        for key, value in header.items():
            fh.write(f"# {key}={value}\n")
        fh.write("index,label\n")
        for i, lab in zip(labels.indices, labels.labels):
            fh.write(f"{int(i)},{int(lab)}\n")


def load_labels(path):
    idx, labs = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line == "index,label":
                continue
            a, b = line.split(",")
            idx.append(int(a))
            labs.append(int(b))
    return np.array(idx, dtype=np.int64), np.array(labs, dtype=np.int64)
