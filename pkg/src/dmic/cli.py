"""Command line entry point: ``dmic {gen,rerank,cluster,train,eval,ablate}``.

Failures print a single ``error code=<Code> message=<text>`` line on stderr.
Exit status: 2 usage, 3 domain error, 4 I/O error.
"""
import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import errors
from .clustering import DEFAULT_MIN_SAMPLES, PseudoLabels, dbscan, save_labels
from .embedder import forward, load_embedder
from .features import INFRARED, VISIBLE, check_meta, load_features, load_meta, save_features, save_meta
from .metrics import cluster_report, retrieval_eval, write_trajectory
from .rerank import rerank_pipeline, save_jaccard, scope_indices
from .synth import SynthConfig, generate
from .trainer import VARIANTS, TrainConfig, run_ablation, train

EXIT_USAGE = 2
EXIT_DOMAIN = 3
EXIT_IO = 4


def _load_inputs(args):
    feats = load_features(args.features)
    meta = load_meta(args.meta)
    check_meta(meta, feats.shape[0])
    return feats, meta


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen(args):
    cfg = SynthConfig.from_json(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        cfg = SynthConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    x, meta = generate(cfg)
    save_features(x, args.out_features)
    save_meta(meta, args.out_meta)
    print(f"wrote {x.shape[0]} samples (d={x.shape[1]}) to {args.out_features}")


def _rerank_kw(args):
    return dict(extend=args.extend, l1_normalize=args.l1_normalize, restrict=args.restrict)


def cmd_rerank(args):
    feats, meta = _load_inputs(args)
    jac = rerank_pipeline(feats, meta, args.k1, args.k2, args.camera_balanced, args.scope, **_rerank_kw(args))
    save_jaccard(jac, args.out)
    print(f"wrote {jac.shape[0]}x{jac.shape[0]} Jaccard matrix to {args.out}")


def cmd_cluster(args):
    feats, meta = _load_inputs(args)
    scope = "joint" if args.scope == "inter" else args.scope
    idx = scope_indices(meta, scope)
    jac = rerank_pipeline(feats, meta, args.k1, args.k2, args.camera_balanced, scope, **_rerank_kw(args))
    labels = PseudoLabels(dbscan(jac, args.eps, args.min_samples), idx, scope)
    save_labels(labels, args.out, eps=args.eps, k1=args.k1, k2=args.k2,
                min_samples=args.min_samples, scope=scope, camera_balanced=args.camera_balanced)
    print(f"{labels.n_clusters} clusters, {labels.n_outliers} outliers -> {args.out}")
    if args.report:
        truth = meta.identity[idx]
        if np.all(truth >= 0):
            rep = cluster_report(labels.labels, truth)
            with open(args.report, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(rep.__dataclass_fields__.keys())
                w.writerow(rep.__dict__.values())


def _train_config(args):
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "save_labels", False):
        overrides["save_labels"] = True
    if overrides:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg


def cmd_train(args):
    feats, meta = _load_inputs(args)
    cfg = _train_config(args)
    run = train(cfg, feats, meta, out_dir=args.out_dir)
    write_trajectory(run.rows, os.path.join(args.out_dir, "clusters.csv"))
    if run.retrieval is not None:
        r = run.retrieval
        print(f"rank1={r.rank1:.4f} map={r.map:.4f} minp={r.minp:.4f}")
    print(f"outputs in {args.out_dir}")


def cmd_eval(args):
    feats, meta = _load_inputs(args)
    if args.embedder:
        feats = forward(load_embedder(args.embedder), feats)
    qmod = args.query_modality
    gmod = VISIBLE if qmod == INFRARED else INFRARED
    q = meta.modality == qmod
    g = meta.modality == gmod
    if not q.any() or not g.any():
        raise errors.EmptyScope(f"need both {qmod} queries and {gmod} gallery samples")
    rep = retrieval_eval(feats[q], meta.identity[q], feats[g], meta.identity[g])
    _write_json(rep.to_dict(), args.out)
    print(json.dumps(rep.to_dict(), sort_keys=True))


def cmd_ablate(args):
    feats, meta = _load_inputs(args)
    cfg = _train_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    summary = []
    for variant in args.variants:
        sub = os.path.join(args.out_dir, variant.replace("+", "_"))
        run = run_ablation(cfg, feats, meta, variant, out_dir=sub)
        last = run.rows[-1] if run.rows else {}
        summary.append({
            "variant": variant,
            "ari_v": last.get("ari_v"),
            "ari_r": last.get("ari_r"),
            "ari_m": last.get("ari_m"),
            "clusters_v": last.get("clusters_v"),
            "clusters_r": last.get("clusters_r"),
            "clusters_m": last.get("clusters_m"),
            "rank1": run.retrieval.rank1 if run.retrieval else None,
            "map": run.retrieval.map if run.retrieval else None,
        })
        print(f"{variant}: ari_m={last.get('ari_m')} clusters_v={last.get('clusters_v')}")
    with open(os.path.join(args.out_dir, "ablation.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]))
        w.writeheader()
        for row in summary:
            w.writerow({k: "" if v is None else v for k, v in row.items()})


def _add_io(p):
    p.add_argument("--features", required=True, help="MCF1 feature file")
    p.add_argument("--meta", required=True, help="metadata CSV")


def _add_rerank(p, scopes):
    p.add_argument("--scope", choices=scopes, default="joint")
    p.add_argument("--k1", type=int, default=40)
    p.add_argument("--k2", type=int, default=6)
    p.add_argument("--camera-balanced", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--extend", action=argparse.BooleanOptionalAction, default=True,
                   help="half-k1 reciprocal-set extension")
    p.add_argument("--l1-normalize", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--restrict", action="store_true",
                   help="take the top-k2 expansion neighbours from the reciprocal set only")


def build_parser():
    parser = argparse.ArgumentParser(prog="dmic", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic two-modality dataset")
    p.add_argument("--config", help="synthetic recipe JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-features", required=True)
    p.add_argument("--out-meta", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("rerank", help="write the Jaccard matrix of a scope (MCJ1)")
    _add_io(p)
    _add_rerank(p, ["V", "R", "joint", "inter"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("cluster", help="re-rank then DBSCAN one scope, write labels CSV")
    _add_io(p)
    _add_rerank(p, ["V", "R", "joint", "inter"])
    p.add_argument("--eps", type=float, default=0.6)
    p.add_argument("--min-samples", type=int, default=DEFAULT_MIN_SAMPLES)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="optional clustering-report CSV (needs identities)")
    p.set_defaults(func=cmd_cluster)

    for name, helptext in (("train", "run both training phases"),
                           ("ablate", "train several clustering variants")):
        p = sub.add_parser(name, help=helptext)
        _add_io(p)
        p.add_argument("--config", help="training config JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--save-labels", action="store_true",
                       help="write labels_<scope>_<epoch>.csv every epoch")
        if name == "train":
            p.set_defaults(func=cmd_train)
        else:
            p.add_argument("--variants", nargs="+", choices=list(VARIANTS), default=list(VARIANTS))
            p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="cross-modal retrieval metrics as JSON")
    _add_io(p)
    p.add_argument("--embedder", help="MCW1 checkpoint applied before evaluation")
    p.add_argument("--query-modality", choices=[INFRARED, VISIBLE], default=INFRARED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except errors.DmicError as exc:
        msg = str(exc).split(": ", 1)[-1].replace("\n", " ")
        print(f"error code={exc.code} message={msg}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error code=IOError message={exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
