"""Cluster- and instance-level memories and the hybrid contrastive objective.

Scopes: ``v`` (visible clustering), ``r`` (infrared clustering) and ``m``
(joint clustering, inter phase only). Each scope keeps a cluster table
(one unit row per pseudo-label) and an instance table (one unit row per
non-outlier sample). Every loss is the softmax cross-entropy of a query
against one table, averaged over the queries that take part in it.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from . import errors
from .features import normalize
from .synth import GROUP_PERMS, permute_groups

SCOPE_KEYS = {"V": "v", "R": "r", "joint": "m", "v": "v", "r": "r", "m": "m"}
LOSS_NAMES = ("C_v", "C_r", "I_v", "I_r", "C_m", "I_m")


@dataclass
class ScopeMemory:
    cluster: np.ndarray
    instance: np.ndarray
    samples: np.ndarray  # global sample index of each instance row
    labels: np.ndarray  # cluster id of each instance row

    def copy(self):
        return ScopeMemory(self.cluster.copy(), self.instance.copy(), self.samples, self.labels)


@dataclass
class MemoryBank:
    scopes: dict

    def __getitem__(self, key):
        return self.scopes[key]

    def __contains__(self, key):
        return key in self.scopes

    def copy(self):
        return MemoryBank({k: m.copy() for k, m in self.scopes.items()})


def _by_scope(labels):
    items = labels.values() if isinstance(labels, dict) else labels
    return {SCOPE_KEYS[lab.scope]: lab for lab in items}


def _members(lab):
    keep = lab.labels >= 0
    return lab.indices[keep], lab.labels[keep]


def init_memories(features, labels):
    """Instance rows are the features; cluster rows the normalized member means."""
    features = np.asarray(features, dtype=np.float64)
    scopes = {}
    for key, lab in _by_scope(labels).items():
        samples, labs = _members(lab)
        if len(samples) == 0:
            raise errors.NoClusters(f"scope {key}: every sample is an outlier")
        n_clusters = int(labs.max()) + 1
        sums = np.zeros((n_clusters, features.shape[1]))
        np.add.at(sums, labs, features[samples])
        counts = np.bincount(labs, minlength=n_clusters)[:, None]
        if np.any(counts == 0):
            raise errors.ScopeMismatch(f"scope {key}: cluster ids are not contiguous")
        scopes[key] = ScopeMemory(
            cluster=normalize(sums / counts),
            instance=features[samples].copy(),
            samples=samples,
            labels=labs,
        )
    return MemoryBank(scopes)


@dataclass
class Batch:
    """Queries of one iteration.

    Visible samples appear twice, once as-is (view 'V') and once through a
    channel-group permutation (view 'C'). Per scope, ``labels`` holds the
    positive cluster row, ``rows`` the query's own instance row and
    ``positives`` the positive instance row; -1 marks queries outside the
    scope or outliers of it.
    """

    sample: np.ndarray
    view: np.ndarray
    perm: np.ndarray
    labels: dict
    rows: dict
    positives: dict
    features: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.sample)

    def with_features(self, q):
        q = np.asarray(q, dtype=np.float64)
        if q.shape[0] != len(self):
            raise errors.ShapeMismatch(f"{q.shape[0]} feature rows for {len(self)} queries")
        return replace(self, features=q)


def _pick_positive(rng, row, cluster_rows):
    others = cluster_rows[cluster_rows != row]
    if len(others) == 0:
        return row
    return int(others[rng.integers(len(others))])


def batch_inputs(raw, batch):
    """Raw input rows for every query (augmented views permuted)."""
    x = np.asarray(raw)[batch.sample].copy()
    for p in np.unique(batch.perm):
        if p == 0:
            continue
        sel = batch.perm == p
        x[sel] = permute_groups(x[sel], GROUP_PERMS[p])
    return x


def sample_batch(labels, P, Z, seed, augment=True):
    """P clusters x Z instances per modality; visible queries get a paired view."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    by_scope = _by_scope(labels)
    chunks = []  # (sample, view, own row, label, positive row) per modality
    for key, views in (("v", ("V", "C") if augment else ("V",)), ("r", ("R",))):
        samples, labs = _members(by_scope[key])
        clusters = np.unique(labs)
        if len(clusters) < P:
            raise errors.InsufficientClusters(
                f"scope {key}: {len(clusters)} clusters, P={P}"
            )
        chosen = rng.choice(clusters, size=P, replace=False)
        rows = []
        for c in chosen:
            members = np.flatnonzero(labs == c)
            rows.append(rng.choice(members, size=Z, replace=len(members) < Z))
        rows = np.concatenate(rows)
        for view in views:
            pos = np.array([_pick_positive(rng, r, np.flatnonzero(labs == labs[r])) for r in rows])
            chunks.append((samples[rows], view, rows, labs[rows], pos))

    sample = np.concatenate([c[0] for c in chunks])
    view = np.concatenate([np.full(len(c[0]), c[1]) for c in chunks])
    perm = np.zeros(len(sample), dtype=np.int64)
    is_c = view == "C"
    perm[is_c] = rng.integers(len(GROUP_PERMS), size=int(is_c.sum()))

    out_labels, out_rows, out_pos = {}, {}, {}
    offset = 0
    for key in ("v", "r"):
        out_labels[key] = np.full(len(sample), -1, dtype=np.int64)
        out_rows[key] = np.full(len(sample), -1, dtype=np.int64)
        out_pos[key] = np.full(len(sample), -1, dtype=np.int64)
    for smp, v, rows, labs, pos in chunks:
        key = "r" if v == "R" else "v"
        sl = slice(offset, offset + len(smp))
        out_labels[key][sl] = labs
        out_rows[key][sl] = rows
        out_pos[key][sl] = pos
        offset += len(smp)

    if "m" in by_scope:
        samples, labs = _members(by_scope["m"])
        row_of = {int(s): i for i, s in enumerate(samples)}
        m_lab = np.full(len(sample), -1, dtype=np.int64)
        m_row = np.full(len(sample), -1, dtype=np.int64)
        m_pos = np.full(len(sample), -1, dtype=np.int64)
        for i, s in enumerate(sample):
            r = row_of.get(int(s))
            if r is None:
                continue
            m_lab[i] = labs[r]
            m_row[i] = r
            m_pos[i] = _pick_positive(rng, r, np.flatnonzero(labs == labs[r]))
        out_labels["m"], out_rows["m"], out_pos["m"] = m_lab, m_row, m_pos

    return Batch(sample, view, perm, out_labels, out_rows, out_pos)


def contrastive_loss(q, mem, pos_row, tau=0.05):
    """-log softmax(q . mem / tau)[pos_row] and its gradient with respect to q."""
    losses, grads = contrastive_batch(np.asarray(q)[None, :], mem, np.array([pos_row]), tau)
    return float(losses[0]), grads[0]


def contrastive_batch(Q, mem, pos, tau=0.05):
    if not tau > 0:
        raise errors.ConfigError(f"tau={tau} must be positive")
    mem = np.asarray(mem, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.int64)
    if np.any(pos < 0) or np.any(pos >= mem.shape[0]):
        raise errors.ScopeMismatch(f"positive row out of range [0, {mem.shape[0]})")
    logits = np.asarray(Q, dtype=np.float64) @ mem.T / tau
    idx = np.arange(len(pos))
    # loss = log(1 + sum_neg exp(l_k - l_pos)); log1p keeps small losses exact
    shifted = logits - logits[idx, pos][:, None]
    shifted[idx, pos] = -np.inf
    top = np.maximum(shifted.max(axis=1), 0.0)
    rest = np.exp(shifted - top[:, None]).sum(axis=1)
    denom = np.exp(-top) + rest
    losses = np.where(top > 0, top + np.log(denom), np.log1p(rest))
    # sum_k p_k mem_k - mem_pos written over negatives only
    p_neg = np.exp(shifted - top[:, None]) / denom[:, None]
    grads = (p_neg @ mem - p_neg.sum(axis=1)[:, None] * mem[pos]) / tau
    return losses, grads


@dataclass
class LossReport:
    losses: dict
    total: float
    grad: np.ndarray

    def __getitem__(self, name):
        return self.losses[name]


def epoch_losses(batch, bank, phase="intra", tau=0.05, phi1=0.1, phi2=1.0):
    """All active losses, the weighted total and d total / d query."""
    if batch.features is None:
        raise errors.ShapeMismatch("batch carries no query features")
    q = batch.features
    scopes = ["v", "r"] + (["m"] if phase == "inter" else [])
    losses = {name: 0.0 for name in LOSS_NAMES}
    grad = np.zeros_like(q)
    for key in scopes:
        if key not in bank or key not in batch.labels:
            raise errors.ScopeMismatch(f"scope {key} missing from bank or batch")
        mask = batch.labels[key] >= 0
        if not np.any(mask):
            continue
        mem = bank[key]
        count = int(mask.sum())
        for kind, table, pos, weight in (
            ("C", mem.cluster, batch.labels[key][mask], phi2),
            ("I", mem.instance, batch.positives[key][mask], phi1),
        ):
            per_q, g = contrastive_batch(q[mask], table, pos, tau)
            losses[f"{kind}_{key}"] = float(per_q.mean())
            grad[mask] += (weight / count) * g
    total = phi1 * (losses["I_r"] + losses["I_v"] + losses["I_m"]) + phi2 * (
        losses["C_r"] + losses["C_v"] + losses["C_m"]
    )
    return LossReport(losses, float(total), grad)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def update_memories(bank, batch, seed):
    """Overwrite touched rows with the feature of a randomly chosen batch query.

    For every cluster seen in the batch one member query is drawn (over both
    views for visible samples); every instance row seen in the batch is set
    to one of its own queries, again drawn over the available views.
    """
    rng = _rng(seed)
    q = batch.features
    out = bank.copy()
    for key, mem in out.scopes.items():
        labels = batch.labels.get(key)
        if labels is None:
            continue
        for c in np.unique(labels[labels >= 0]):
            members = np.flatnonzero(labels == c)
            pick = members[rng.integers(len(members))]
            mem.cluster[c] = q[pick] / np.linalg.norm(q[pick])
        rows = batch.rows[key]
        for r in np.unique(rows[rows >= 0]):
            members = np.flatnonzero(rows == r)
            pick = members[rng.integers(len(members))]
            mem.instance[r] = q[pick] / np.linalg.norm(q[pick])
    return out


def _blend(old, new, lam):
    v = lam * old + (1.0 - lam) * new
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else old


def momentum_update(bank, batch, lam):
    """row <- normalize(lam * row + (1 - lam) * q), query by query."""
    if not 0.0 <= lam <= 1.0:
        raise errors.ConfigError(f"momentum lambda={lam} outside [0, 1]")
    q = batch.features
    out = bank.copy()
    for key, mem in out.scopes.items():
        labels = batch.labels.get(key)
        if labels is None:
            continue
        rows = batch.rows[key]
        for i in np.flatnonzero(labels >= 0):
            mem.cluster[labels[i]] = _blend(mem.cluster[labels[i]], q[i], lam)
            mem.instance[rows[i]] = _blend(mem.instance[rows[i]], q[i], lam)
    return out
