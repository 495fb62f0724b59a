"""Seeded two-modality, multi-camera identity data and the channel-group view.

sample = identity centre + modality offset + camera offset + gaussian noise.
Identity centres are uniform on the unit sphere; offsets are fixed random
directions scaled to the configured norms. Camera ids are global: visible
cameras come first (0..cams_v-1), then infrared ones.
"""
import itertools
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import errors
from .features import INFRARED, VISIBLE, SampleMeta

N_GROUPS = 3
GROUP_PERMS = tuple(itertools.permutations(range(N_GROUPS)))


@dataclass(frozen=True)
class SynthConfig:
    n_identities: int = 30
    cams_v: int = 4
    cams_r: int = 2
    samples_per_id_per_cam: int = 6
    dim: int = 48
    noise_sigma: float = 0.08
    camera_offset_scale: float = 0.5
    modality_gap_scale: float = 0.9
    seed: int = 7

    def __post_init__(self):
        for name in ("n_identities", "cams_v", "cams_r", "samples_per_id_per_cam"):
            if getattr(self, name) < 1:
                raise errors.ConfigError(f"{name} must be >= 1")
        for name in ("noise_sigma", "camera_offset_scale", "modality_gap_scale"):
            if getattr(self, name) < 0:
                raise errors.ConfigError(f"{name} must be >= 0")
        if self.dim < 4 or self.dim % N_GROUPS:
            raise errors.ConfigError(f"dim={self.dim} must be >= 4 and divisible by {N_GROUPS}")

    @property
    def n_samples(self):
        return self.n_identities * (self.cams_v + self.cams_r) * self.samples_per_id_per_cam

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise errors.ConfigError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)


def _directions(rng, count, dim):
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def generate(cfg):
    """Return (raw features, SampleMeta), ordered identity -> camera -> sample."""
    rng = np.random.default_rng(cfg.seed)
    centres = _directions(rng, cfg.n_identities, cfg.dim)
    mod_offsets = _directions(rng, 2, cfg.dim) * cfg.modality_gap_scale
    n_cams = cfg.cams_v + cfg.cams_r
    cam_offsets = _directions(rng, n_cams, cfg.dim) * cfg.camera_offset_scale
    cam_modality = np.array([VISIBLE] * cfg.cams_v + [INFRARED] * cfg.cams_r)

    m = cfg.samples_per_id_per_cam
    ident = np.repeat(np.arange(cfg.n_identities), n_cams * m)
    cam = np.tile(np.repeat(np.arange(n_cams), m), cfg.n_identities)
    mod = cam_modality[cam]
    mod_row = (mod == INFRARED).astype(int)
    noise = rng.standard_normal((len(ident), cfg.dim)) * cfg.noise_sigma
    x = centres[ident] + mod_offsets[mod_row] + cam_offsets[cam] + noise
    return x, SampleMeta(mod, cam, ident)


def permute_groups(x, perm):
    """Reorder the three contiguous coordinate groups of each row by ``perm``."""
    x = np.asarray(x)
    dim = x.shape[-1]
    if dim % N_GROUPS:
        raise errors.ConfigError(f"dim={dim} not divisible by {N_GROUPS}")
    g = dim // N_GROUPS
    parts = [x[..., p * g:(p + 1) * g] for p in perm]
    return np.concatenate(parts, axis=-1)


def inverse_perm(perm):
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return tuple(inv)


def draw_perm(rng):
    return int(rng.integers(len(GROUP_PERMS)))


def ca_view(x, seed):
    """Augmented view: a uniformly drawn permutation of the channel groups."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return permute_groups(x, GROUP_PERMS[draw_perm(rng)])
