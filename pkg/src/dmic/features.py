"""Feature/metadata file I/O, row normalization and pairwise distances.

Feature matrices are plain ``numpy`` arrays of shape (n, d). On disk they
use the little-endian MCF1 layout (float32 payload); on load they are
promoted to float64, which is the precision used for every distance.
"""
import csv
import struct
from dataclasses import dataclass

import numpy as np

from . import errors

MCF_MAGIC = b"MCF1"
_HEADER = struct.Struct("<4sII")
_U32_MAX = 2**32 - 1

VISIBLE = "V"
INFRARED = "R"
MODALITIES = (VISIBLE, INFRARED)


def check_matrix(m):
    m = np.asarray(m)
    if m.ndim != 2:
        raise errors.ShapeMismatch(f"expected a 2-D matrix, got shape {m.shape}")
    if m.shape[0] < 1:
        raise errors.EmptyMatrix("feature matrix has no rows")
    if m.shape[1] < 2:
        raise errors.BadDimension(f"d={m.shape[1]} < 2")
    if not np.all(np.isfinite(m)):
        raise errors.NonFinite("feature matrix contains non-finite entries")
    return m


def save_features(m, path):
    m = check_matrix(m)
    n, d = m.shape
    if n * d > _U32_MAX:
        raise errors.SizeOverflow(f"n*d={n * d} elements")
    payload = np.ascontiguousarray(m, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MCF_MAGIC, n, d))
        fh.write(payload.tobytes())


def load_features(path):
    """Read an MCF1 file. Rows are returned as stored (not normalized)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        if raw[:4] != MCF_MAGIC[: len(raw[:4])]:
            raise errors.BadMagic(f"{path}: magic {raw[:4]!r}")
        raise errors.Truncated(f"{path}: header is {len(raw)} bytes")
    magic, n, d = _HEADER.unpack_from(raw)
    if magic != MCF_MAGIC:
        raise errors.BadMagic(f"{path}: magic {magic!r}")
    if n < 1:
        raise errors.EmptyMatrix(f"{path}: n=0")
    if d < 2:
        raise errors.BadDimension(f"{path}: d={d}")
    count = n * d
    if count > _U32_MAX:
        raise errors.SizeOverflow(f"{path}: n*d={count}")
    expected = _HEADER.size + 4 * count
    if len(raw) < expected:
        raise errors.Truncated(f"{path}: {len(raw)} bytes, header implies {expected}")
    if len(raw) > expected:
        raise errors.TrailingData(f"{path}: {len(raw) - expected} unexpected trailing bytes")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=_HEADER.size)
    if not np.all(np.isfinite(data)):
        raise errors.NonFinite(f"{path}: non-finite entries")
    return data.reshape(n, d).astype(np.float64)


def normalize(m):
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        bad = int(np.flatnonzero(norms[:, 0] == 0)[0])
        raise errors.ZeroRow(f"row {bad} is all zeros")
    out = m / norms
    # a second pass removes the last-ulp drift so normalize is idempotent
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def pairwise_sq_euclidean(m, tol=1e-4):
    """Squared Euclidean distances between unit rows, 2 - 2 cos, clamped to [0, 4]."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise errors.NotNormalized(f"max |norm-1| = {np.max(np.abs(norms - 1.0)):.3g}")
    gram = m @ m.T
    dist = 2.0 - 2.0 * gram
    dist = 0.5 * (dist + dist.T)
    np.clip(dist, 0.0, 4.0, out=dist)
    np.fill_diagonal(dist, 0.0)
    return dist


@dataclass(frozen=True)
class SampleMeta:
    """Per-sample modality ('V' or 'R'), camera id and identity (-1 = unknown)."""

    modality: np.ndarray
    camera: np.ndarray
    identity: np.ndarray

    def __post_init__(self):
        mod = np.asarray(self.modality).astype("<U1")
        cam = np.asarray(self.camera, dtype=np.int64)
        ident = np.asarray(self.identity, dtype=np.int64)
        object.__setattr__(self, "modality", mod)
        object.__setattr__(self, "camera", cam)
        object.__setattr__(self, "identity", ident)
        if not (mod.ndim == cam.ndim == ident.ndim == 1):
            raise errors.MetaError("metadata columns must be 1-D")
        if not (len(mod) == len(cam) == len(ident)):
            raise errors.MetaError("metadata columns differ in length")
        bad = ~np.isin(mod, MODALITIES)
        if np.any(bad):
            raise errors.MetaError(f"unknown modality {mod[bad][0]!r}")
        if np.any(cam < 0):
            raise errors.MetaError("camera ids must be non-negative")
        if np.any(ident < -1):
            raise errors.MetaError("identity must be >= -1")
        for c in np.unique(cam):
            if len(np.unique(mod[cam == c])) > 1:
                raise errors.MetaError(f"camera {c} appears under both modalities")

    def __len__(self):
        return len(self.modality)

    def subset(self, idx):
        return SampleMeta(self.modality[idx], self.camera[idx], self.identity[idx])

    def has_identities(self):
        return bool(np.all(self.identity >= 0))


def check_meta(meta, n):
    if len(meta) != n:
        raise errors.MetaError(f"metadata has {len(meta)} rows, features have {n}")


def save_meta(meta, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "modality", "camera", "identity"])
        for i in range(len(meta)):
            w.writerow([i, meta.modality[i], int(meta.camera[i]), int(meta.identity[i])])


def load_meta(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["index", "modality", "camera", "identity"]:
            raise errors.MetaError(f"{path}: bad header {header!r}")
        mod, cam, ident = [], [], []
        for expected, row in enumerate(reader):
            if not row:
                continue
            if len(row) != 4:
                raise errors.MetaError(f"{path}: row {expected} has {len(row)} fields")
            try:
                idx, c, y = int(row[0]), int(row[2]), int(row[3])
            except ValueError as exc:
                raise errors.MetaError(f"{path}: row {expected}: {exc}") from None
            if idx != expected:
                raise errors.MetaError(f"{path}: rows must be sorted by index, got {idx} at {expected}")
            mod.append(row[1].strip())
            cam.append(c)
            ident.append(y)
    if not mod:
        raise errors.MetaError(f"{path}: no rows")
    return SampleMeta(np.array(mod), np.array(cam), np.array(ident))
