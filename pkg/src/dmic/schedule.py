"""Per-epoch search radius (eps) and expansion size (k2) for both training phases.

Both quantities move geometrically between their bounds and are pinned to
the bounds at the ends of each segment:

* intra phase: eps decays pi2 -> pi1, k2 grows eps1 -> eps2;
* inter phase: eps decays pi2 -> pi1 over ``inter_decay_epochs`` and then
  grows back to pi2; the intra-clustering k2 restarts at eps1 and grows to
  eps2; joint clustering uses the constant eps3.

The decay/growth ratios (sigma_*) are kept for reference only; the curve is
fully determined by the endpoints.
"""
import math
from dataclasses import asdict, dataclass, fields

from . import errors

INTRA = "intra"
INTER = "inter"


@dataclass(frozen=True)
class ScheduleConfig:
    pi1: float = 0.3
    pi2: float = 0.6
    eps1: int = 6
    eps2: int = 18
    eps3: int = 32
    intra_epochs: int = 50
    inter_epochs: int = 50
    inter_decay_epochs: int = 10
    k1: int = 40
    sigma_n: float = 0.5
    sigma_b: float = 2.0
    sigma_k: float = 3.0

    def __post_init__(self):
        if not 0 < self.pi1 < self.pi2:
            raise errors.ConfigError(f"need 0 < pi1 < pi2, got {self.pi1}, {self.pi2}")
        if not 0 < self.eps1 <= self.eps2 <= self.k1:
            raise errors.ConfigError(
                f"need 0 < eps1 <= eps2 <= k1, got {self.eps1}, {self.eps2}, {self.k1}"
            )
        if not 0 < self.eps3 <= self.k1:
            raise errors.ConfigError(f"need 0 < eps3 <= k1, got {self.eps3}, {self.k1}")
        if self.intra_epochs < 0 or self.inter_epochs < 0:
            raise errors.ConfigError("epoch counts must be non-negative")
        if self.inter_epochs > 0 and not 0 <= self.inter_decay_epochs < self.inter_epochs:
            raise errors.ConfigError(
                f"need inter_decay_epochs < inter_epochs, got "
                f"{self.inter_decay_epochs}, {self.inter_epochs}"
            )

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class EpochPlan:
    eps: float
    k2_intra: int
    k2_inter: int | None = None


def _geometric(lo_start, hi_end, t):
    if t <= 0:
        return lo_start
    if t >= 1:
        return hi_end
    return lo_start * (hi_end / lo_start) ** t


def _fraction(epoch, length):
    return epoch / (length - 1) if length > 1 else 0.0


def _phase_length(cfg, phase):
    if phase == INTRA:
        return cfg.intra_epochs
    if phase == INTER:
        return cfg.inter_epochs
    raise errors.ConfigError(f"unknown phase {phase!r}")


def _check_epoch(cfg, phase, epoch):
    length = _phase_length(cfg, phase)
    if not 0 <= epoch < length:
        raise errors.EpochOutOfRange(f"{phase} epoch {epoch} not in [0, {length})")
    return length


def eps_at(cfg, phase, epoch):
    length = _check_epoch(cfg, phase, epoch)
    if phase == INTRA:
        return _geometric(cfg.pi2, cfg.pi1, _fraction(epoch, length))
    decay = cfg.inter_decay_epochs
    if epoch <= decay:
        return _geometric(cfg.pi2, cfg.pi1, epoch / decay if decay else 1.0)
    return _geometric(cfg.pi1, cfg.pi2, (epoch - decay) / (length - 1 - decay))


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def k2_at(cfg, phase, epoch, clustering=INTRA):
    length = _check_epoch(cfg, phase, epoch)
    if clustering == INTER:
        return cfg.eps3
    if clustering != INTRA:
        raise errors.ConfigError(f"unknown clustering {clustering!r}")
    k = _round_half_up(_geometric(cfg.eps1, cfg.eps2, _fraction(epoch, length)))
    return min(max(k, cfg.eps1), cfg.eps2)


def plan(cfg, phase, epoch):
    eps = eps_at(cfg, phase, epoch)
    k2 = k2_at(cfg, phase, epoch, INTRA)
    k2_inter = k2_at(cfg, phase, epoch, INTER) if phase == INTER else None
    return EpochPlan(eps=eps, k2_intra=k2, k2_inter=k2_inter)


def static_plan(cfg, phase, epoch):
    """Scheduler-free baseline: eps fixed at pi2, intra k2 fixed at eps1."""
    _check_epoch(cfg, phase, epoch)
    return EpochPlan(
        eps=cfg.pi2, k2_intra=cfg.eps1, k2_inter=cfg.eps3 if phase == INTER else None
    )
