"""k-reciprocal encoding, neighbour expansion and Jaccard distance.

Encodings are stored densely (n x m float64, zero = absent) because the
sample counts handled here are desk-scale; the Jaccard kernel converts them
to CSR/CSC and only touches non-zeros.
"""
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from numba import njit

from . import errors
from .features import INFRARED, VISIBLE, normalize, pairwise_sq_euclidean

SCOPES = ("V", "R", "joint")


@dataclass(frozen=True)
class Encoding:
    """Per-probe distance encodings (rows) plus the parameters that built them.

    ``support`` is the boolean reciprocal-set matrix R*(i, k1) the raw
    encoding was restricted to; it is kept so expansion can optionally be
    limited to reciprocal neighbours.
    """

    weights: np.ndarray
    k1: int
    k2: int | None = None
    mode: str = "raw"  # raw | vanilla | camera-balanced
    l1_normalized: bool = True
    support: np.ndarray | None = field(default=None, repr=False)


def knn_ranking(dist, k):
    """Indices of the k nearest samples per row; self first, ties by index."""
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if k < 1:
        raise errors.ConfigError(f"k={k} must be positive")
    if k > n:
        raise errors.KTooLarge(f"k={k} > n={n}")
    d = dist.copy()
    np.fill_diagonal(d, -np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    return order[:, :k]


def _reciprocal_base(rankings, i, k):
    fwd = rankings[i, :k]
    return {int(j) for j in fwd if i in rankings[j, :k]}


def reciprocal_set(rankings, i, k1, extend=True):
    """R*(i, k1) as a sorted index array (reference per-probe version)."""
    rankings = np.asarray(rankings)
    if rankings.shape[1] < k1:
        raise errors.ConfigError(f"rankings hold {rankings.shape[1]} < k1={k1} neighbours")
    base = _reciprocal_base(rankings, i, k1)
    out = set(base)
    if extend:
        half = (k1 + 1) // 2
        for q in sorted(base):
            cand = _reciprocal_base(rankings, q, half)
            if 3 * len(cand & base) >= 2 * len(cand):
                out |= cand
    return np.array(sorted(out), dtype=np.int64)


def _topk_indicator(rankings, k, n):
    ind = np.zeros((rankings.shape[0], n), dtype=bool)
    rows = np.repeat(np.arange(rankings.shape[0]), k)
    ind[rows, rankings[:, :k].ravel()] = True
    return ind


def reciprocal_matrix(rankings, k1, extend=True):
    """Boolean n x n matrix whose row i marks R*(i, k1); vectorised reciprocal_set."""
    rankings = np.asarray(rankings)
    n = rankings.shape[0]
    if rankings.shape[1] < k1:
        raise errors.ConfigError(f"rankings hold {rankings.shape[1]} < k1={k1} neighbours")
    fwd = _topk_indicator(rankings, k1, n)
    base = fwd & fwd.T
    if not extend:
        return base
    half = (k1 + 1) // 2
    fh = _topk_indicator(rankings, half, n)
    cand = (fh & fh.T).astype(np.float64)
    basef = base.astype(np.float64)
    # overlap[q, i] = |R(q, k1/2) & R(i, k1)|
    overlap = cand @ basef.T
    size = cand.sum(axis=1)
    accept = base & (3.0 * overlap.T >= 2.0 * size[None, :])
    return base | ((accept.astype(np.float64) @ cand) > 0)


def encode(dist, rankings, k1, extend=True, l1_normalize=True):
    dist = np.asarray(dist, dtype=np.float64)
    support = reciprocal_matrix(rankings, k1, extend)
    weights = np.where(support, np.exp(-dist), 0.0)
    if l1_normalize:
        weights /= weights.sum(axis=1, keepdims=True)
    return Encoding(weights, k1=k1, l1_normalized=l1_normalize, support=support)


def _check_k2(enc, k2):
    if k2 < 1:
        raise errors.ConfigError(f"k2={k2} must be positive")
    if k2 > enc.k1:
        raise errors.K2ExceedsK1(f"k2={k2} > k1={enc.k1}")


def expansion_neighbors(enc, rankings, k2, restrict=False):
    """Top-k2 neighbours per probe, from the initial ranking or from R* only."""
    rankings = np.asarray(rankings)
    if not restrict:
        if rankings.shape[1] < k2:
            raise errors.ConfigError(f"rankings hold {rankings.shape[1]} < k2={k2} neighbours")
        return [rankings[i, :k2] for i in range(rankings.shape[0])]
    if enc.support is None:
        raise errors.ConfigError("restricted expansion needs the reciprocal support")
    out = []
    for i in range(rankings.shape[0]):
        members = rankings[i][enc.support[i, rankings[i]]]
        out.append(members[:k2])
    return out


def _averaging_matrix(neighbors, n, cameras=None):
    a = np.zeros((len(neighbors), n))
    for i, nb in enumerate(neighbors):
        if cameras is None:
            a[i, nb] += 1.0 / len(nb)
            continue
        cams = cameras[nb]
        groups = np.unique(cams)
        for c in groups:
            members = nb[cams == c]
            a[i, members] += 1.0 / (len(groups) * len(members))
    return a


def expand_vanilla(enc, rankings, k2, restrict=False):
    """Mean of the encodings of the top-k2 neighbours (self included)."""
    _check_k2(enc, k2)
    nb = expansion_neighbors(enc, rankings, k2, restrict)
    a = _averaging_matrix(nb, enc.weights.shape[0])
    return replace(enc, weights=a @ enc.weights, k2=k2, mode="vanilla")


def expand_mie(enc, rankings, k2, meta_or_cameras, restrict=False):
    """Camera-balanced expansion: equal weight per camera among the top-k2 neighbours."""
    _check_k2(enc, k2)
    cameras = getattr(meta_or_cameras, "camera", meta_or_cameras)
    cameras = np.asarray(cameras)
    if len(cameras) != enc.weights.shape[0]:
        raise errors.ShapeMismatch(f"{len(cameras)} camera ids for {enc.weights.shape[0]} encodings")
    nb = expansion_neighbors(enc, rankings, k2, restrict)
    a = _averaging_matrix(nb, enc.weights.shape[0], cameras)
    return replace(enc, weights=a @ enc.weights, k2=k2, mode="camera-balanced")


@njit(cache=True)
def _min_sums(indptr, indices, data, cptr, crow, cdata, n):
    out = np.zeros((n, n))
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            col = indices[p]
            vi = data[p]
            for q in range(cptr[col], cptr[col + 1]):
                j = crow[q]
                vj = cdata[q]
                out[i, j] += vi if vi < vj else vj
    return out


def jaccard(enc):
    """1 - sum(min)/sum(max) over encoding rows; rows that are both empty get 1."""
    w = enc.weights if isinstance(enc, Encoding) else np.asarray(enc, dtype=np.float64)
    n = w.shape[0]
    csr = sp.csr_matrix(w)
    csr.sort_indices()
    csc = csr.tocsc()
    csc.sort_indices()
    mins = _min_sums(
        csr.indptr, csr.indices, csr.data, csc.indptr, csc.indices, csc.data, n
    )
    # the diagonal of mins is each row's own sum in the same summation order
    totals = np.diag(mins).copy()
    maxs = totals[:, None] + totals[None, :] - mins
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = 1.0 - mins / maxs
    dist[maxs <= 0] = 1.0
    np.clip(dist, 0.0, 1.0, out=dist)
    np.fill_diagonal(dist, np.where(totals > 0, 0.0, 1.0))
    return dist


def scope_indices(meta, scope):
    if scope == "V":
        idx = np.flatnonzero(meta.modality == VISIBLE)
    elif scope == "R":
        idx = np.flatnonzero(meta.modality == INFRARED)
    elif scope in ("joint", "inter"):
        idx = np.arange(len(meta))
    else:
        raise errors.ConfigError(f"unknown scope {scope!r}")
    if len(idx) == 0:
        raise errors.EmptyScope(f"scope {scope} has no samples")
    return idx


def rerank_pipeline(
    features,
    meta,
    k1,
    k2,
    camera_balanced=True,
    scope="joint",
    extend=True,
    l1_normalize=True,
    restrict=False,
):
    """Jaccard matrix over the samples of ``scope``, indexed in subset order.

    k1 and k2 are clamped to the subset size so small scopes stay usable.
    """
    idx = scope_indices(meta, scope)
    feats = normalize(np.asarray(features)[idx])
    n = len(idx)
    k1 = min(k1, n)
    k2 = min(k2, k1)
    dist = pairwise_sq_euclidean(feats)
    ranks = knn_ranking(dist, k1)
    enc = encode(dist, ranks, k1, extend=extend, l1_normalize=l1_normalize)
    if camera_balanced:
        enc = expand_mie(enc, ranks, k2, meta.camera[idx], restrict=restrict)
    else:
        enc = expand_vanilla(enc, ranks, k2, restrict=restrict)
    return jaccard(enc)


MCJ_MAGIC = b"MCJ1"


def save_jaccard(mat, path):
    mat = np.asarray(mat)
    n = mat.shape[0]
    if mat.shape != (n, n):
        raise errors.ShapeMismatch(f"Jaccard matrix must be square, got {mat.shape}")
    with open(path, "wb") as fh:
        fh.write(MCJ_MAGIC)
        fh.write(np.uint32(n).astype("<u4").tobytes())
        fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def load_jaccard(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MCJ_MAGIC:
        raise errors.BadMagic(f"{path}: magic {raw[:4]!r}")
    if len(raw) < 8:
        raise errors.Truncated(f"{path}: header is {len(raw)} bytes")
    n = int(np.frombuffer(raw, dtype="<u4", count=1, offset=4)[0])
    expected = 8 + 4 * n * n
    if len(raw) < expected:
        raise errors.Truncated(f"{path}: {len(raw)} bytes, header implies {expected}")
    if len(raw) > expected:
        raise errors.TrailingData(f"{path}: {len(raw) - expected} trailing bytes")
    return np.frombuffer(raw, dtype="<f4", count=n * n, offset=8).reshape(n, n).astype(np.float64)
