from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmic import errors
from dmic.metrics import (
    TRAJECTORY_HEADER,
    ari,
    average_precision,
    cluster_report,
    cluster_trajectory,
    inverse_negative_penalty,
    pairwise_prf,
    retrieval_eval,
    singletons_for_outliers,
    write_trajectory,
)


def brute_ari(pred, truth):
    pred = singletons_for_outliers(pred)
    n = len(pred)
    both = same_p = same_t = 0
    for i, j in combinations(range(n), 2):
        p, t = pred[i] == pred[j], truth[i] == truth[j]
        both += p and t
        same_p += p
        same_t += t
    total = n * (n - 1) // 2
    if total == 0:
        return 1.0
    expected = Fraction(same_p * same_t, total)
    top = Fraction(same_p + same_t, 2)
    if top == expected:
        return 1.0
    return float((both - expected) / (top - expected))


def brute_retrieval(q, qid, g, gid):
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    gn = g / np.linalg.norm(g, axis=1, keepdims=True)
    cmc = {k: [] for k in (1, 5, 10, 20)}
    aps, inps = [], []
    for i in range(len(q)):
        sims = [float(np.dot(qn[i], gn[j])) for j in range(len(g))]
        order = sorted(range(len(g)), key=lambda j: (-sims[j], j))
        rel = [gid[j] == qid[i] for j in order]
        if not any(rel):
            continue
        ranks = [r + 1 for r, hit in enumerate(rel) if hit]
        for k in cmc:
            cmc[k].append(1.0 if ranks[0] <= k else 0.0)
        aps.append(sum((n + 1) / r for n, r in enumerate(ranks)) / len(ranks))
        inps.append(len(ranks) / ranks[-1])
    return {f"rank{k}": float(np.mean(v)) for k, v in cmc.items()} | {
        "map": float(np.mean(aps)), "minp": float(np.mean(inps)), "n_query": len(aps)}


def test_ari_examples():
    assert ari([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
    assert ari([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert ari([0, 0, 1, 1], [0, 1, 0, 1]) == brute_ari([0, 0, 1, 1], [0, 1, 0, 1]) == -0.5


def test_ari_outliers_are_singletons():
    # [-1, -1] is two singletons, so it cannot match truth [0, 0]
    assert ari([-1, -1, 0, 0], [0, 0, 1, 1]) == ari([5, 6, 0, 0], [0, 0, 1, 1])
    assert ari([-1, -1, -1], [0, 1, 2]) == 1.0


def test_ari_length_mismatch():
    with pytest.raises(errors.LengthMismatch):
        ari([0, 1], [0])


labelings = st.integers(1, 30).flatmap(lambda n: st.tuples(
    st.lists(st.integers(-1, 6), min_size=n, max_size=n),
    st.lists(st.integers(0, 6), min_size=n, max_size=n),
))


@settings(max_examples=300, deadline=None)
@given(labelings)
def test_ari_matches_pair_counting(pair):
    pred, truth = pair
    value = ari(pred, truth)
    assert value == brute_ari(np.array(pred), np.array(truth))
    assert -1.0 <= value <= 1.0


def test_prf_examples():
    assert pairwise_prf([0, 0, 1, 1], [3, 3, 4, 4]) == (1.0, 1.0, 1.0)
    p, r, _ = pairwise_prf([0, 0, 0, 0], [0, 0, 1, 1])
    assert p == pytest.approx(1 / 3) and r == 1.0
    p, r, f = pairwise_prf([-1, -1, -1, -1], [0, 0, 1, 1])
    assert (p, r, f) == (1.0, 0.0, 0.0)


def test_cluster_report():
    rep = cluster_report(np.array([0, 0, -1, 1]), np.array([0, 0, 1, 1]))
    assert (rep.n_clusters, rep.n_outliers, rep.n_identities) == (2, 1, 2)
    assert rep.precision == 1.0 and rep.recall == 0.5


def test_ap_and_inp_hand_cases():
    assert average_precision([1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)
    assert inverse_negative_penalty([1, 0, 1]) == pytest.approx(2 / 3, abs=1e-15)
    assert average_precision([0, 0]) == 0.0


def test_top1_hit():
    rep = retrieval_eval(np.array([[1.0, 0.0]]), [7], np.array([[1.0, 0.1], [0.0, 1.0]]), [7, 8])
    assert rep.rank1 == 1.0 and rep.map == 1.0 and rep.minp == 1.0


def random_retrieval(rng):
    nq, ng, d = int(rng.integers(1, 21)), int(rng.integers(1, 51)), int(rng.integers(2, 9))
    n_ids = int(rng.integers(1, 8))
    gid = rng.integers(n_ids, size=ng)
    qid = rng.integers(n_ids, size=nq)
    qid[0] = gid[0]  # at least one valid query
    return rng.standard_normal((nq, d)), qid, rng.standard_normal((ng, d)), gid


@pytest.mark.parametrize("seed", range(25))
def test_retrieval_matches_brute_force(seed):
    q, qid, g, gid = random_retrieval(np.random.default_rng(seed))
    rep = retrieval_eval(q, qid, g, gid).to_dict()
    ref = brute_retrieval(q, qid, g, gid)
    for key, value in ref.items():
        assert rep[key] == pytest.approx(value, abs=1e-12), key
    assert rep["rank1"] <= rep["rank5"] <= rep["rank10"] <= rep["rank20"] <= 1.0
    assert 0 <= rep["map"] <= 1 and 0 <= rep["minp"] <= 1
    assert rep["n_gallery"] == len(g)


def test_disjoint_identities():
    with pytest.raises(errors.EmptyEvaluation):
        retrieval_eval(np.eye(2), [0, 1], np.eye(2), [2, 3])


def _row(ge, phase, v, r, m=None):
    row = {"global_epoch": ge, "phase": phase, "clusters_v": v, "outliers_v": 0,
           "clusters_r": r, "outliers_r": 1}
    if m is not None:
        row |= {"clusters_m": m, "outliers_m": 2}
    return row


def test_trajectory(tmp_path):
    rows = [_row(0, "intra", 5, 4)]
    assert cluster_trajectory(rows) == [(0, "intra", "v", 5, 0), (0, "intra", "r", 4, 1)]
    rows.append(_row(1, "inter", 6, 3, 7))
    assert len(cluster_trajectory(rows)) == 5
    write_trajectory(rows, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == ",".join(TRAJECTORY_HEADER)
    assert lines[-1] == "1,inter,m,7,2"
    with pytest.raises(errors.EmptyLog):
        cluster_trajectory([])
