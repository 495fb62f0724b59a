import struct

import numpy as np
import pytest

from dmic import errors
from dmic.embedder import (
    LinearEmbedder,
    backward,
    forward,
    load_embedder,
    save_embedder,
    sgd_step,
    step_decay_lr,
)
from dmic.hmcl import contrastive_batch

from .conftest import fd_grad, random_unit, rel_err


def test_identity_map():
    x = random_unit(np.random.default_rng(0), 5, 4)
    np.testing.assert_allclose(forward(LinearEmbedder(np.eye(4)), x), x, atol=1e-15)


def test_scale_invariance(rng):
    e = LinearEmbedder.init(6, 3, seed=1)
    x = rng.standard_normal((7, 6))
    np.testing.assert_allclose(forward(e, x), forward(LinearEmbedder(e.W * 3.7), x), atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_output_unit_norm(seed):
    rng = np.random.default_rng(seed)
    e = LinearEmbedder.init(10, 5, seed=seed)
    out = forward(e, rng.standard_normal((20, 10)) * 50)
    assert np.max(np.abs(np.linalg.norm(out, axis=1) - 1)) < 1e-9


def test_zero_embedding():
    e = LinearEmbedder(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(errors.ZeroEmbedding):
        forward(e, np.array([[0.0, 1.0]]))


def test_invalid_weights():
    with pytest.raises(errors.ShapeMismatch):
        LinearEmbedder(np.ones((1, 3)))
    with pytest.raises(errors.NonFinite):
        LinearEmbedder(np.array([[1.0, np.inf], [0.0, 1.0]]))


def test_glorot_bounds():
    e = LinearEmbedder.init(40, 8, seed=0)
    assert np.abs(e.W).max() <= np.sqrt(6 / 48)
    np.testing.assert_array_equal(e.W, LinearEmbedder.init(40, 8, seed=0).W)


def test_parallel_upstream_has_no_gradient(rng):
    e = LinearEmbedder.init(4, 3, seed=2)
    x = rng.standard_normal((3, 4))
    q = forward(e, x)
    np.testing.assert_allclose(backward(e, x, 2.5 * q), 0.0, atol=1e-14)
    np.testing.assert_array_equal(backward(e, x, np.zeros_like(q)), 0.0)


def test_hand_case_matches_fd():
    e = LinearEmbedder(np.array([[1.0, 2.0], [0.5, -1.0]]))
    x = np.array([[0.3, -0.7]])
    u = np.array([[1.0, -2.0]])

    def loss(w):
        return float(np.sum(forward(LinearEmbedder(w), x) * u))

    assert rel_err(backward(e, x, u), fd_grad(loss, e.W)) < 1e-8


@pytest.mark.parametrize("seed", range(10))
def test_end_to_end_gradient(seed):
    rng = np.random.default_rng(seed)
    d_in, d_out = (int(v) for v in rng.integers(2, 17, size=2))
    n = int(rng.integers(1, 33))
    e = LinearEmbedder.init(d_in, d_out, seed=seed)
    x = rng.standard_normal((n, d_in))
    mem = random_unit(rng, 6, d_out)
    pos = rng.integers(6, size=n)

    def loss(w):
        return float(contrastive_batch(forward(LinearEmbedder(w), x), mem, pos)[0].sum())

    _, g = contrastive_batch(forward(e, x), mem, pos)
    assert rel_err(backward(e, x, g), fd_grad(loss, e.W)) < 1e-3


def test_sgd_step():
    e = LinearEmbedder.init(3, 2, seed=0, lr=0.1)
    np.testing.assert_array_equal(sgd_step(e, np.ones((2, 3)), lr=0.0).W, e.W)
    np.testing.assert_allclose(sgd_step(e, np.ones((2, 3))).W, e.W - 0.1, atol=1e-15)
    with pytest.raises(errors.NonFiniteGradient):
        sgd_step(e, np.full((2, 3), np.nan))
    with pytest.raises(errors.ShapeMismatch):
        sgd_step(e, np.ones((3, 2)))


def test_weight_decay_term():
    e = LinearEmbedder(np.eye(2), lr=0.5, weight_decay=0.1)
    np.testing.assert_allclose(sgd_step(e, np.zeros((2, 2))).W, np.eye(2) * 0.95, atol=1e-15)


def test_small_step_decreases_loss():
    rng = np.random.default_rng(4)
    e = LinearEmbedder.init(8, 4, seed=4)
    x = rng.standard_normal((10, 8))
    mem = random_unit(rng, 5, 4)
    pos = rng.integers(5, size=10)

    def total(emb):
        return contrastive_batch(forward(emb, x), mem, pos)[0].sum()

    _, g = contrastive_batch(forward(e, x), mem, pos)
    assert total(sgd_step(e, backward(e, x, g), lr=1e-4)) < total(e)


def test_step_decay():
    assert step_decay_lr(3.5e-4, 0) == 3.5e-4
    assert step_decay_lr(3.5e-4, 19) == 3.5e-4
    assert step_decay_lr(3.5e-4, 20) == pytest.approx(3.5e-5)
    assert step_decay_lr(3.5e-4, 45) == pytest.approx(3.5e-6)


def test_checkpoint_round_trip(tmp_path):
    e = LinearEmbedder.init(5, 3, seed=8)
    save_embedder(e, tmp_path / "w.mcw")
    raw = (tmp_path / "w.mcw").read_bytes()
    assert raw[:4] == b"MCW1" and struct.unpack("<II", raw[4:12]) == (3, 5)
    assert len(raw) == 12 + 8 * 15
    np.testing.assert_array_equal(load_embedder(tmp_path / "w.mcw").W, e.W)


def test_checkpoint_errors(tmp_path):
    e = LinearEmbedder.init(5, 3, seed=8)
    save_embedder(e, tmp_path / "w.mcw")
    raw = (tmp_path / "w.mcw").read_bytes()
    (tmp_path / "t.mcw").write_bytes(raw[:-8])
    (tmp_path / "x.mcw").write_bytes(raw + b"\0")
    (tmp_path / "m.mcw").write_bytes(b"MCF1" + raw[4:])
    with pytest.raises(errors.Truncated):
        load_embedder(tmp_path / "t.mcw")
    with pytest.raises(errors.TrailingData):
        load_embedder(tmp_path / "x.mcw")
    with pytest.raises(errors.BadMagic):
        load_embedder(tmp_path / "m.mcw")
