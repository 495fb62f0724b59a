"""Linear embedder x -> Wx/|Wx| trained with plain SGD."""
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import errors

MCW_MAGIC = b"MCW1"
_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class LinearEmbedder:
    W: np.ndarray
    lr: float = 3.5e-4
    weight_decay: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.W, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 2:
            raise errors.ShapeMismatch(f"W must be d_out x d_in with d_out >= 2, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise errors.NonFinite("embedder weights contain non-finite entries")
        object.__setattr__(self, "W", w)

    @classmethod
    def init(cls, d_in, d_out, seed=0, lr=3.5e-4, weight_decay=0.0):
        """Uniform Glorot initialisation."""
        rng = np.random.default_rng(seed)
        a = np.sqrt(6.0 / (d_in + d_out))
        return cls(rng.uniform(-a, a, size=(d_out, d_in)), lr, weight_decay)

    @property
    def d_in(self):
        return self.W.shape[1]

    @property
    def d_out(self):
        return self.W.shape[0]


def _check_input(e, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != e.d_in:
        raise errors.ShapeMismatch(f"input shape {x.shape}, embedder expects (*, {e.d_in})")
    return x


def forward(e, x):
    x = _check_input(e, x)
    z = x @ e.W.T
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise errors.ZeroEmbedding(f"row {int(np.flatnonzero(norms[:, 0] == 0)[0])} maps to zero")
    return z / norms


def backward(e, x, upstream):
    """dL/dW from dL/dq, back through q = z/|z| and z = Wx, summed over rows."""
    x = _check_input(e, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (x.shape[0], e.d_out):
        raise errors.ShapeMismatch(f"upstream {upstream.shape} vs ({x.shape[0]}, {e.d_out})")
    z = x @ e.W.T
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    q = z / norms
    # (I - q q^T) / |z| applied row-wise
    dz = (upstream - q * np.sum(upstream * q, axis=1, keepdims=True)) / norms
    return dz.T @ x


def sgd_step(e, grad, lr=None):
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != e.W.shape:
        raise errors.ShapeMismatch(f"gradient {grad.shape} vs weights {e.W.shape}")
    if not np.all(np.isfinite(grad)):
        raise errors.NonFiniteGradient("gradient contains NaN or inf")
    lr = e.lr if lr is None else lr
    step = grad + e.weight_decay * e.W if e.weight_decay else grad
    return replace(e, W=e.W - lr * step)


def step_decay_lr(base_lr, epoch, step_epochs=20, gamma=0.1):
    if step_epochs <= 0:
        return base_lr
    return base_lr * gamma ** (epoch // step_epochs)


def save_embedder(e, path):
    d_out, d_in = e.W.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MCW_MAGIC, d_out, d_in))
        fh.write(np.ascontiguousarray(e.W, dtype="<f8").tobytes())


def load_embedder(path, lr=3.5e-4, weight_decay=0.0):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MCW_MAGIC:
        raise errors.BadMagic(f"{path}: magic {raw[:4]!r}")
    if len(raw) < _HEADER.size:
        raise errors.Truncated(f"{path}: header is {len(raw)} bytes")
    _, d_out, d_in = _HEADER.unpack_from(raw)
    expected = _HEADER.size + 8 * d_out * d_in
    if len(raw) < expected:
        raise errors.Truncated(f"{path}: {len(raw)} bytes, header implies {expected}")
    if len(raw) > expected:
        raise errors.TrailingData(f"{path}: {len(raw) - expected} trailing bytes")
    w = np.frombuffer(raw, dtype="<f8", count=d_out * d_in, offset=_HEADER.size)
    return LinearEmbedder(w.reshape(d_out, d_in).copy(), lr, weight_decay)
