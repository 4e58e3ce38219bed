"""``pccd`` command line entry point."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .config import load_config
from .evaluation import (ABLATIONS, ablation_config, affiliation_dump, evaluate_model,
                         infomap_baseline, random_baseline, sparsity_sweep, user_type_eval,
                         write_affiliations_csv, write_sweep_csv)
from .graph import load_manifest, save_edge_list, save_truth, sparsify
from .mapequation import detect_communities, write_partition
from .model import SIDES, PccdModel
from .synthetic import PlantConfig, plant_synthetic_dataset
from .training import TrainConfig, prepare_experiment, train

log = logging.getLogger("pccd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _manifest(args, out, configs, outputs):
    _write_json(Path(out) / "run_manifest.json", {
        "command": args.command,
        "argv": args.argv,
        "seed": getattr(args, "seed", None),
        "configs": configs,
        "outputs": sorted(outputs),
        "version": __version__,
    })


def _train_config(args):
    return load_config(TrainConfig, getattr(args, "config", None), seed=getattr(args, "seed", None))


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args):
    cfg = load_config(PlantConfig, args.config, seed=args.seed)
    dataset, truth = plant_synthetic_dataset(cfg)
    out = _out(args)
    save_edge_list(dataset.main, out / "main.tsv")
    save_edge_list(dataset.sparse, out / "sparse.tsv")
    save_truth(truth, out / "truth.tsv")
    _write_json(out / "manifest.json", {"main": "main.tsv", "sparse": "sparse.tsv", "truth": "truth.tsv",
                                        "main_tag": "main", "sparse_tag": "sparse"})
    _manifest(args, out, {"plant": asdict(cfg)}, ["main.tsv", "sparse.tsv", "truth.tsv", "manifest.json"])
    print(f"main: {dataset.main.num_users} users, {dataset.main.num_objects} objects, {dataset.main.num_links} links")
    print(f"sparse: {dataset.sparse.num_users} users, {dataset.sparse.num_objects} objects, {dataset.sparse.num_links} links")


def cmd_communities(args):
    dataset, _, _ = load_manifest(args.data)
    graph = dataset.main if args.graph == "main" else dataset.sparse
    if args.delta < 1.0:
        graph = sparsify(graph, args.delta, args.seed)
    part = detect_communities(graph, seed=args.seed, trials=args.trials)
    out = _out(args)
    name = f"partition_{args.graph}.tsv"
    write_partition(part, out / name)
    _manifest(args, out, {"graph": args.graph, "delta": args.delta, "trials": args.trials}, [name])
    print(f"communities: {part.num_communities}")
    print(f"codelength: {part.codelength:.6f} bits")


def cmd_train(args):
    cfg = _train_config(args)
    dataset, truth, _ = load_manifest(args.data)
    ex = prepare_experiment(dataset, truth, cfg)
    result = train(ex.features, ex.train_triplets, cfg, ex.validation_triplets)
    out = _out(args)
    result.model.save(out / "checkpoint.json")
    with open(out / "loss.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for epoch, loss in result.loss_curve:
            w.writerow([epoch, repr(float(loss))])
    _write_json(out / "train_config.json", asdict(cfg))
    _manifest(args, out, {"train": asdict(cfg)}, ["checkpoint.json", "loss.csv", "train_config.json"])
    print(f"final loss: {result.loss_curve[-1][1]:.6f}")
    if result.validation_accuracy:
        print(f"validation acc: {result.validation_accuracy[-1]:.4f}")


def _load_for_eval(args):
    cfg = _train_config(args)
    dataset, truth, _ = load_manifest(args.data)
    ex = prepare_experiment(dataset, truth, cfg)
    model = PccdModel.load(args.checkpoint)
    if list(model.object_community) != list(ex.features.object_community):
        raise RuntimeError("checkpoint raw communities do not match this dataset/config")
    return cfg, ex, model


def _write_report(out, name, rep):
    (out / f"{name}.json").write_text(rep.to_json() + "\n", encoding="utf-8")
    rep.write_csv(out / f"{name}.csv")
    return [f"{name}.json", f"{name}.csv"]


def cmd_eval(args):
    cfg, ex, model = _load_for_eval(args)
    out = _out(args)
    ntrue = len(set(ex.truth.values()))
    reports = {
        "pccd": evaluate_model(model, ex.features, ex.test_triplets),
        "random": random_baseline(ex.dataset.all_users(), max(2, ntrue), ex.truth, ex.test_triplets, cfg.seed),
        "infomap_sparse": infomap_baseline(ex.sparse_view, ex.test_triplets, cfg.seed, cfg.infomap_trials),
    }
    files = []
    for name, rep in reports.items():
        files += _write_report(out, name, rep)
        print(f"{name:15s} acc={rep.acc:.4f} f1={rep.f1_macro:.4f} mcc={rep.mcc:.4f} "
              f"mrr={rep.mrr:.4f} ndcg={rep.ndcg:.4f} map={rep.map:.4f}")
    _manifest(args, out, {"train": asdict(cfg), "checkpoint": str(args.checkpoint)}, files)


def cmd_sweep(args):
    cfg = _train_config(args)
    deltas = [float(x) for x in args.delta_grid.split(",") if x.strip()]
    if not deltas or any(not 0 < d <= 1 for d in deltas):
        raise UsageError("--delta-grid needs comma-separated values in (0, 1]")
    dataset, truth, _ = load_manifest(args.data)
    rows = sparsity_sweep(dataset, truth, cfg, deltas)
    out = _out(args)
    write_sweep_csv(rows, out / "sweep.csv")
    _manifest(args, out, {"train": asdict(cfg), "deltas": deltas}, ["sweep.csv"])
    for delta, rep in rows:
        print(f"delta={delta:.2f} acc={rep.acc:.4f} mcc={rep.mcc:.4f}")


def cmd_usertypes(args):
    cfg, ex, model = _load_for_eval(args)
    if ex.truth is None:
        raise RuntimeError("user-type analysis needs ground truth")
    reports = user_type_eval(model, ex.features, ex.dataset, ex.truth, args.count, cfg.seed)
    out = _out(args)
    files = []
    with open(out / "usertypes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_type", "acc", "f1", "mcc", "mrr", "ndcg", "map"])
        for kind, rep in reports.items():
            w.writerow([kind] + [repr(float(getattr(rep, m))) for m in rep.METRICS])
            files += _write_report(out, f"usertype_{kind}", rep)
            print(f"{kind} acc={rep.acc:.4f} mcc={rep.mcc:.4f}")
    _manifest(args, out, {"train": asdict(cfg), "count": args.count}, files + ["usertypes.csv"])


def cmd_affiliations(args):
    cfg, ex, model = _load_for_eval(args)
    users = [u for u in args.users.split(",") if u]
    side = {"main": "M", "sparse": "S"}[args.graph]
    rows = affiliation_dump(model, ex.features, users, side)
    out = _out(args)
    name = f"affiliations_{args.graph}.csv"
    write_affiliations_csv(rows, out / name)
    _manifest(args, out, {"train": asdict(cfg), "users": users, "graph": args.graph}, [name])
    print(f"wrote {len(rows)} x {model.config.K} affiliation table")


def cmd_ablate(args):
    cfg = _train_config(args)
    chosen = [name for name in ABLATIONS if getattr(args, f"no_{name}")]
    dataset, truth, _ = load_manifest(args.data)
    runs = {}
    if args.all:
        runs["full"] = cfg
        for name in ABLATIONS:
            runs[f"no-{name}"] = ablation_config(cfg, [name])
    else:
        label = "+".join(f"no-{n}" for n in chosen) or "full"
        runs[label] = ablation_config(cfg, chosen)
    out = _out(args)
    files = []
    rows = []
    for label, run_cfg in runs.items():
        ex = prepare_experiment(dataset, truth, run_cfg)
        result = train(ex.features, ex.train_triplets, run_cfg, ex.validation_triplets)
        rep = evaluate_model(result.model, ex.features, ex.test_triplets)
        files += _write_report(out, f"ablation_{label}", rep)
        rows.append((label, rep))
        print(f"{label:12s} acc={rep.acc:.4f} mcc={rep.mcc:.4f}")
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "acc", "f1", "mcc", "mrr", "ndcg", "map"])
        for label, rep in rows:
            w.writerow([label] + [repr(float(getattr(rep, m))) for m in rep.METRICS])
    _manifest(args, out, {"train": asdict(cfg), "ablations": list(runs)}, files + ["ablation.csv"])


def build_parser():
    p = _Parser(prog="pccd", description="Pairwise cross-graph community detection.")
    p.add_argument("--version", action="version", version=f"pccd {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def common(sp, data=True, config=True):
        if data:
            sp.add_argument("--data", required=True, help="dataset manifest JSON or directory holding manifest.json")
        if config:
            sp.add_argument("--config", help="TrainConfig file (JSON or key=value)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("gen", help="plant a synthetic cross-graph dataset")
    sp.add_argument("--config", help="PlantConfig file (JSON or key=value)")
    sp.add_argument("--seed", type=int, help="override the config seed")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("communities", help="map-equation communities of one graph")
    common(sp, config=False)
    sp.set_defaults(seed=0)
    sp.add_argument("--graph", choices=("main", "sparse"), default="main", help="which graph to partition")
    sp.add_argument("--delta", type=float, default=1.0, help="fraction of links kept before detection")
    sp.add_argument("--trials", type=int, default=3, help="optimiser restarts")
    sp.set_defaults(func=cmd_communities)

    sp = sub.add_parser("train", help="train a model and write checkpoint.json and loss.csv")
    common(sp)
    sp.set_defaults(func=cmd_train)

    for name, func, hlp in (("eval", cmd_eval, "evaluate a checkpoint and the baselines on test triplets"),
                            ("usertypes", cmd_usertypes, "evaluate MU / MO / SO triplets separately"),
                            ("affiliations", cmd_affiliations, "dump community affiliation scores")):
        sp = sub.add_parser(name, help=hlp)
        common(sp)
        sp.add_argument("--checkpoint", required=True, help="checkpoint.json written by train")
        sp.set_defaults(func=func)
        if name == "usertypes":
            sp.add_argument("--count", type=int, default=500, help="triplets per label per user type")
        if name == "affiliations":
            sp.add_argument("--users", required=True, help="comma-separated user ids")
            sp.add_argument("--graph", choices=("main", "sparse"), default="main", help="graph side")

    sp = sub.add_parser("sweep", help="sparsity sweep over the sparse graph")
    common(sp)
    sp.add_argument("--delta-grid", default="0.1,0.3,0.5,0.7,0.9", help="comma-separated link-keep ratios")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("ablate", help="train and evaluate with components removed")
    common(sp)
    descr = {"rcr": "zero the raw main-graph community one-hot",
             "dtr": "zero the direct transformation representation",
             "nf": "drop node-level attention logits",
             "cf": "fix community-level weights at 1",
             "cc": "drop the community constraint (alpha=0)",
             "mt": "disable masked training (rho=0)"}
    for name in ABLATIONS:
        sp.add_argument(f"--no-{name}", action="store_true", help=descr[name])
    sp.add_argument("--all", action="store_true", help="run the full model and every single ablation")
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("pccd: a command is required (see --help)")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"pccd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
