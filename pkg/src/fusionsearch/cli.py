"""Command-line entry points: search, eval, ablate, viz."""

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from fusionsearch import genotype as gt
from fusionsearch.config import ConfigError, load_config
from fusionsearch.fusion_net import analytic_param_count
from fusionsearch.search import BASELINE_KINDS, evaluate_genotype, run_baseline, run_search

log = logging.getLogger("fusionsearch")


def _setup(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    base = os.path.dirname(os.path.abspath(args.config))
    data = cfg.load_data(base)
    return cfg, data, cfg.search_space(data)


def _write_curve(out, history):
    path = os.path.join(out, "search_curve.csv")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_metric", "best_score"])
        for r in history:
            w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["val_metric"]), repr(r["best_score"])])
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot([r["epoch"] for r in history], [r["val_metric"] for r in history], marker="o")
        ax.set_xlabel("epoch")
        ax.set_ylabel("hypernet val metric")
        fig.tight_layout()
        fig.savefig(os.path.join(out, "search_curve.png"), dpi=100)
        plt.close(fig)
    except Exception as exc:  # rendering is optional
        log.warning("plot rendering skipped: %s", exc)


def cmd_search(args):
    cfg, data, space = _setup(args)
    out = cfg.resolve_output(args.out)
    os.makedirs(out, exist_ok=True)
    log_path = os.path.join(out, "search_log.jsonl")
    if os.path.exists(log_path) and not args.resume:
        os.remove(log_path)
    resume = os.path.join(out, "checkpoint.pt") if args.resume else None
    g, state = run_search(data, space, cfg.train_config(), out_dir=out, resume=resume)
    gt.save(g, os.path.join(out, "genotype.json"))
    with open(os.path.join(out, "genotype.dot"), "w") as f:
        f.write(gt.to_dot(g))
    _write_curve(out, state.history)
    print(json.dumps({"genotype": g.digest(), "best_val_metric": state.best_score, "out": out}))
    return 0


def cmd_eval(args):
    cfg, data, space = _setup(args)
    g = gt.load(args.genotype)
    if tuple(g.space.features) != tuple(space.features):
        raise ConfigError([("genotype.space.features", "feature inventory does not match the config's task")])
    res = evaluate_genotype(g, data, cfg.train_config())
    report = {
        "genotype": res.digest,
        "metric": "accuracy" if data.task_mode == "multiclass" else "weighted_f1",
        "test_metric": res.metric,
        "param_count": res.param_count,
        "analytic_param_count": analytic_param_count(g, data.n_classes),
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "metrics.json"), "w") as f:
            json.dump(report, f, indent=2)
    print(json.dumps(report))
    return 0


def ablation_rows(cfg, data, space, kinds, n_seeds=5):
    """One search per seed, then every baseline with that seed's searched genotype."""
    values = {"searched": []}
    values.update({k: [] for k in kinds})
    for t in range(n_seeds):
        tcfg = cfg.train_config(cfg.seed + t)
        searched, _ = run_search(data, space, tcfg)
        values["searched"].append(evaluate_genotype(searched, data, tcfg).metric)
        for k in kinds:
            values[k].extend(run_baseline(k, data, space, tcfg, searched, trials=1).values)
        log.info("ablation seed %d done", tcfg.seed)
    return [(k, float(np.mean(v)), float(np.std(v)), v) for k, v in values.items()]


def write_ablation_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["kind", "mean", "std", "n", "values"])
        for kind, mean, std, vals in rows:
            w.writerow([kind, repr(mean), repr(std), len(vals), ";".join(repr(v) for v in vals)])


def read_ablation_csv(path):
    with open(path, newline="") as f:
        return [(r["kind"], float(r["mean"]), float(r["std"]), [float(v) for v in r["values"].split(";")])
                for r in csv.DictReader(f)]


def cmd_ablate(args):
    cfg, data, space = _setup(args)
    kinds = args.kinds or list(BASELINE_KINDS)
    for k in kinds:
        if k not in BASELINE_KINDS:
            raise ConfigError([("--kinds", f"unknown baseline {k!r}; choose from {', '.join(BASELINE_KINDS)}")])
    out = cfg.resolve_output(args.out)
    os.makedirs(out, exist_ok=True)
    rows = ablation_rows(cfg, data, space, kinds, args.n_seeds)
    write_ablation_csv(os.path.join(out, "ablation.csv"), rows)
    for kind, mean, std, _ in rows:
        print(f"{kind:20s} {100 * mean:6.2f} ± {100 * std:.2f}")
    return 0


def cmd_viz(args):
    g = gt.load(args.genotype)
    text = gt.to_dot(g)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="fusionsearch", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("search", help="run the architecture search")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.pt")
    s.set_defaults(func=cmd_search)

    e = sub.add_parser("eval", help="retrain a genotype on train+val and score it on test")
    e.add_argument("--config", required=True)
    e.add_argument("--genotype", required=True)
    e.add_argument("--out")
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="compare the searched genotype against baselines")
    a.add_argument("--config", required=True)
    a.add_argument("--kinds", nargs="+")
    a.add_argument("--out")
    a.add_argument("--seed", type=int)
    a.add_argument("--n-seeds", type=int, default=5)
    a.set_defaults(func=cmd_ablate)

    v = sub.add_parser("viz", help="write a Graphviz description of a genotype")
    v.add_argument("--genotype", required=True)
    v.add_argument("--out")
    v.set_defaults(func=cmd_viz)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for path, msg in exc.problems:
            print(f"config error at {path}: {msg}", file=sys.stderr)
        return 2
    except gt.GenotypeError as exc:
        print(f"genotype error at {exc.path}: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
