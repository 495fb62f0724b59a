"""Two-phase training loop: per-modality clustering first, then joint clustering added."""
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import errors, schedule
from .clustering import DEFAULT_MIN_SAMPLES, assign_inter, assign_intra, save_labels
from .embedder import LinearEmbedder, backward, forward, save_embedder, sgd_step, step_decay_lr
from .features import INFRARED, VISIBLE, check_matrix, check_meta
from .hmcl import (
    LOSS_NAMES,
    batch_inputs,
    epoch_losses,
    init_memories,
    momentum_update,
    sample_batch,
    update_memories,
)
from .metrics import cluster_report, retrieval_eval
from .schedule import INTER, INTRA, ScheduleConfig

log = logging.getLogger(__name__)

VARIANTS = {
    # name: (camera_balanced, dynamic_schedule)
    "VC": (False, False),
    "VC+DNC": (False, True),
    "MIE": (True, False),
    "MIE+DNC": (True, True),
}


@dataclass(frozen=True)
class TrainConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    tau: float = 0.05
    phi1: float = 0.1
    phi2: float = 1.0
    P: int = 4
    Z: int = 16
    memory_update: str = "random"
    lam: float = 0.2
    d_out: int | None = None
    lr: float = 3.5e-4
    lr_step_epochs: int = 20
    lr_gamma: float = 0.1
    weight_decay: float = 0.0
    min_samples: int = DEFAULT_MIN_SAMPLES
    camera_balanced: bool = True
    dynamic_schedule: bool = True
    augment: bool = True
    extend: bool = True
    l1_normalize: bool = True
    restrict_expansion: bool = False
    iterations: int | None = None
    seed: int = 0
    save_labels: bool = False
    out_dir: str | None = None

    def __post_init__(self):
        if self.memory_update not in ("random", "momentum"):
            raise errors.ConfigError(f"memory_update={self.memory_update!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise errors.ConfigError(f"lambda={self.lam} outside [0, 1]")
        if self.tau <= 0 or self.P < 1 or self.Z < 1 or self.min_samples < 1:
            raise errors.ConfigError("tau, P, Z and min_samples must be positive")
        if self.iterations is not None and self.iterations < 1:
            raise errors.ConfigError(f"iterations={self.iterations} must be >= 1")
        if self.d_out is not None and self.d_out < 2:
            raise errors.ConfigError(f"d_out={self.d_out} must be >= 2")

    @property
    def k1(self):
        return self.schedule.k1

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        sched_keys = {f.name for f in fields(ScheduleConfig)}
        own_keys = {f.name for f in fields(cls)} - {"schedule"}
        unknown = set(d) - sched_keys - own_keys
        if unknown:
            raise errors.ConfigError(f"unknown config keys: {sorted(unknown)}")
        sched = ScheduleConfig.from_dict({k: v for k, v in d.items() if k in sched_keys})
        return cls(schedule=sched, **{k: v for k, v in d.items() if k in own_keys})

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if k != "schedule"}
        d["lambda"] = d.pop("lam")
        d.update(self.schedule.to_dict())
        return d


def variant_config(cfg, variant):
    if variant not in VARIANTS:
        raise errors.ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    cb, dyn = VARIANTS[variant]
    return replace(cfg, camera_balanced=cb, dynamic_schedule=dyn)


LOG_COLUMNS = (
    ["phase", "epoch", "global_epoch", "eps", "k2_intra", "k2_inter", "lr", "iterations"]
    + [f"{stat}_{s}" for s in ("v", "r", "m") for stat in ("clusters", "outliers", "ari")]
    + [f"loss_{name}" for name in LOSS_NAMES]
    + ["loss_total"]
)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunLog:
    rows: list = field(default_factory=list)
    retrieval: object = None
    clustering: dict = field(default_factory=dict)
    embedder: LinearEmbedder | None = None
    config: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(LOG_COLUMNS) + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt(row.get(c)) for c in LOG_COLUMNS) + "\n")

    def report(self):
        return {
            "retrieval": self.retrieval.to_dict() if self.retrieval is not None else None,
            "clustering": {k: asdict(v) for k, v in self.clustering.items()},
            "config": self.config,
        }

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        self.to_csv(os.path.join(out_dir, "runlog.csv"))
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(self.report(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if self.embedder is not None:
            save_embedder(self.embedder, os.path.join(out_dir, "embedder.mcw1"))


def default_iterations(meta, P, Z):
    n_v = int(np.sum(meta.modality == VISIBLE))
    n_r = int(np.sum(meta.modality == INFRARED))
    return max(1, math.ceil(min(n_v, n_r) / (P * Z)))


def _scope_stats(row, key, lab, meta):
    row[f"clusters_{key}"] = lab.n_clusters
    row[f"outliers_{key}"] = lab.n_outliers
    truth = meta.identity[lab.indices]
    row[f"ari_{key}"] = cluster_report(lab.labels, truth).ari if np.all(truth >= 0) else None


def train(cfg, raw, meta, out_dir=None):
    """Run both phases; returns the RunLog (final embedder attached)."""
    raw = check_matrix(np.asarray(raw, dtype=np.float64))
    check_meta(meta, raw.shape[0])
    for mod in (VISIBLE, INFRARED):
        if not np.any(meta.modality == mod):
            raise errors.EmptyScope(f"no {mod} samples; both modalities are required")

    sched = cfg.schedule
    k1 = sched.k1
    rerank_kw = dict(extend=cfg.extend, l1_normalize=cfg.l1_normalize, restrict=cfg.restrict_expansion)
    iters = cfg.iterations or default_iterations(meta, cfg.P, cfg.Z)
    init_seed = int(np.random.default_rng([cfg.seed, 7919]).integers(2**31))
    emb = LinearEmbedder.init(raw.shape[1], cfg.d_out or raw.shape[1], seed=init_seed,
                              lr=cfg.lr, weight_decay=cfg.weight_decay)
    run = RunLog(config=cfg.to_dict())
    out_dir = out_dir or cfg.out_dir
    planner = schedule.plan if cfg.dynamic_schedule else schedule.static_plan

    labels = {}
    global_epoch = 0
    for phase_id, (phase, n_epochs) in enumerate(
        ((INTRA, sched.intra_epochs), (INTER, sched.inter_epochs))
    ):
        for epoch in range(n_epochs):
            plan = planner(sched, phase, epoch)
            lr = step_decay_lr(cfg.lr, global_epoch, cfg.lr_step_epochs, cfg.lr_gamma)
            feats = forward(emb, raw)
            v, r = assign_intra(feats, meta, plan, k1, cfg.camera_balanced, cfg.min_samples,
                                epoch=global_epoch, **rerank_kw)
            labels = {"v": v, "r": r}
            if phase == INTER:
                labels["m"] = assign_inter(feats, meta, plan, k1, cfg.camera_balanced,
                                           cfg.min_samples, epoch=global_epoch, **rerank_kw)
            row = dict(phase=phase, epoch=epoch, global_epoch=global_epoch, eps=plan.eps,
                       k2_intra=plan.k2_intra, k2_inter=plan.k2_inter, lr=lr)
            for key, lab in labels.items():
                _scope_stats(row, key, lab, meta)
            if cfg.save_labels and out_dir:
                os.makedirs(out_dir, exist_ok=True)
                for key, lab in labels.items():
                    save_labels(lab, os.path.join(out_dir, f"labels_{key}_{global_epoch}.csv"),
                                eps=plan.eps, k1=k1,
                                k2=plan.k2_inter if key == "m" else plan.k2_intra,
                                min_samples=cfg.min_samples, scope=lab.scope,
                                camera_balanced=cfg.camera_balanced)

            active = {k: lab for k, lab in labels.items() if lab.n_clusters > 0}
            P = min([cfg.P] + [active[k].n_clusters for k in ("v", "r") if k in active])
            done = 0
            sums = {name: 0.0 for name in LOSS_NAMES}
            sums["total"] = 0.0
            if "v" in active and "r" in active:
                bank = init_memories(feats, active)
                train_phase = INTER if "m" in active else INTRA
                for it in range(iters):
                    rng = np.random.default_rng([cfg.seed, phase_id, epoch, it])
                    batch = sample_batch(active, P, cfg.Z, rng, augment=cfg.augment)
                    x = batch_inputs(raw, batch)
                    batch = batch.with_features(forward(emb, x))
                    rep = epoch_losses(batch, bank, train_phase, cfg.tau, cfg.phi1, cfg.phi2)
                    if not np.isfinite(rep.total) or not np.all(np.isfinite(rep.grad)):
                        raise errors.TrainingDiverged(
                            f"{phase} epoch {epoch} iteration {it}: losses {rep.losses}"
                        )
                    emb = sgd_step(emb, backward(emb, x, rep.grad), lr)
                    if cfg.memory_update == "random":
                        bank = update_memories(bank, batch, rng)
                    else:
                        bank = momentum_update(bank, batch, cfg.lam)
                    for name in LOSS_NAMES:
                        sums[name] += rep.losses[name]
                    sums["total"] += rep.total
                    done += 1
            else:
                log.warning("%s epoch %d: a modality has no clusters, skipping updates", phase, epoch)
            row["iterations"] = done
            active_losses = {"C_v", "C_r", "I_v", "I_r"}
            if phase == INTER and "m" in active:
                active_losses |= {"C_m", "I_m"}
            for name in LOSS_NAMES:
                row[f"loss_{name}"] = sums[name] / done if done and name in active_losses else None
            row["loss_total"] = sums["total"] / done if done else None
            run.rows.append(row)
            log.info(
                "%s %2d eps=%.4f k2=%d clusters v=%s r=%s m=%s loss=%s",
                phase, epoch, plan.eps, plan.k2_intra, row.get("clusters_v"),
                row.get("clusters_r"), row.get("clusters_m"), row["loss_total"],
            )
            global_epoch += 1

    run.embedder = emb
    feats = forward(emb, raw)
    for key, lab in labels.items():
        truth = meta.identity[lab.indices]
        if np.all(truth >= 0):
            run.clustering[key] = cluster_report(lab.labels, truth)
    if meta.has_identities():
        q = meta.modality == INFRARED
        g = meta.modality == VISIBLE
        try:
            run.retrieval = retrieval_eval(feats[q], meta.identity[q], feats[g], meta.identity[g])
        except errors.EmptyEvaluation:
            log.warning("no infrared query shares an identity with the visible gallery")
    if out_dir:
        run.write(out_dir)
    return run


def run_ablation(cfg, raw, meta, variant, out_dir=None):
    return train(variant_config(cfg, variant), raw, meta, out_dir=out_dir)
