"""Command-line experiment driver: ``train``, ``ablate``, ``compare`` and ``eval``."""

import argparse
import json
import os
import sys

import numpy as np

from . import metrics
from .config import coerce, default_output_dir, load_config
from .core import MODES, train
from .data import save_noise_mask
from .errors import ConfigurationError, DnferError, ParseError
from .io import write_atomic
from .nn import load_checkpoint, save_checkpoint

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SWEEPS = {"alpha": "alpha", "warmup": "warm_epochs", "noise": "noise_rate"}

# flag name -> config key
_FLAG_KEYS = {
    "mode": "mode", "noise_rate": "noise_rate", "alpha": "alpha",
    "warm_epochs": "warm_epochs", "epochs": "epochs", "batch_size": "batch_size",
    "lr": "lr", "seed": "seed", "repeats": "repeats", "out": "out",
    "csv": "csv_train", "csv_test": "csv_test",
    "idx_images": "idx_images", "idx_labels": "idx_labels",
    "idx_test_images": "idx_test_images", "idx_test_labels": "idx_test_labels",
    "blobs_counts": "blobs_counts", "blobs_dim": "blobs_dim",
    "blobs_separation": "blobs_separation",
}


# -- running -------------------------------------------------------------------

def _stats(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return {"values": list(values), "mean": None, "std": None}
    return {"values": list(values), "mean": float(np.mean(vals)), "std": float(np.std(vals))}


def _fmt_stat(stat, scale=100.0):
    if stat["mean"] is None:
        return "n/a"
    return f"{scale * stat['mean']:.2f} ± {scale * stat['std']:.2f}"


def run_single(cfg, seed, run_dir):
    """Train one repeat and write its artifacts into ``run_dir``."""
    train_set, test_set, flipped = cfg.load_datasets(seed)
    run, model = train(train_set, test_set, cfg.train_config(seed), cfg.policy_for(train_set))
    os.makedirs(run_dir, exist_ok=True)
    write_atomic(os.path.join(run_dir, "metrics.jsonl"), run.to_jsonl())
    save_checkpoint(os.path.join(run_dir, "model.ckpt"), model)
    cm = metrics.ConfusionMatrix(np.asarray(run.confusion))
    write_atomic(os.path.join(run_dir, "confusion.csv"), cm.to_csv())
    save_noise_mask(os.path.join(run_dir, "noise_mask.csv"), train_set, flipped)
    return run


def run_repeats(cfg, out):
    """All repeats of one config; writes ``config.txt``, per-seed dirs and the summary."""
    os.makedirs(out, exist_ok=True)
    write_atomic(os.path.join(out, "config.txt"), cfg.dumps())
    runs = [run_single(cfg, s, os.path.join(out, f"seed_{s}")) for s in cfg.seeds]
    summary = {
        "mode": cfg.mode,
        "noise_rate": cfg.noise_rate,
        "seeds": cfg.seeds,
        "test_acc": _stats([r.final_test_acc for r in runs]),
        "memorization_rate": _stats([r.final_memorization_rate for r in runs]),
    }
    write_atomic(os.path.join(out, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    text = (f"mode {cfg.mode}, noise {cfg.noise_rate:g}, {len(runs)} run(s), seeds {cfg.seeds}\n"
            f"test accuracy (%): {_fmt_stat(summary['test_acc'])}\n"
            f"memorization (%):  {_fmt_stat(summary['memorization_rate'])}\n")
    write_atomic(os.path.join(out, "summary.txt"), text)
    return runs, summary


def cmd_train(cfg, out):
    _, summary = run_repeats(cfg, out)
    print(open(os.path.join(out, "summary.txt"), encoding="utf-8").read(), end="")
    return summary


def cmd_ablate(cfg, out, sweep, values):
    if sweep not in SWEEPS:
        raise ConfigurationError(f"sweep must be one of {', '.join(SWEEPS)}")
    if not values:
        raise ConfigurationError("ablation needs at least one value")
    key = SWEEPS[sweep]
    parsed = [coerce(key, v) for v in values]
    rows = []
    for v in parsed:
        sub = cfg.replace(**{key: v})
        _, summary = run_repeats(sub, os.path.join(out, f"{sweep}_{v:g}"))
        acc = summary["test_acc"]
        rows.append((v, acc["mean"], acc["std"], len(acc["values"])))
    lines = [f"{sweep},mean_test_acc,std_test_acc,repeats"]
    lines += [f"{v:g},{m:.6f},{s:.6f},{n}" for v, m, s, n in rows]
    write_atomic(os.path.join(out, f"sweep_{sweep}.csv"), "\n".join(lines) + "\n")
    table = [f"{sweep:>10}  test acc (%)"]
    table += [f"{v:>10g}  {100 * m:.2f} ± {100 * s:.2f}" for v, m, s, _ in rows]
    text = "\n".join(table) + "\n"
    write_atomic(os.path.join(out, f"sweep_{sweep}.txt"), text)
    print(text, end="")
    return rows


def cmd_compare(cfg, out):
    if cfg.noise_rate == 0:
        print("warning: noise rate is 0; memorization curves will be empty", file=sys.stderr)
    base_runs, _ = run_repeats(cfg.replace(mode="baseline"), os.path.join(out, "baseline"))
    dnfer_runs, _ = run_repeats(cfg.replace(mode="dnfer"), os.path.join(out, "dnfer"))
    reports = []
    for seed, b, d in zip(cfg.seeds, base_runs, dnfer_runs):
        rows = metrics.memorization_trace(b, d)
        write_atomic(os.path.join(out, f"memorization_seed_{seed}.csv"), metrics.gap_report_csv(rows))
        write_atomic(os.path.join(out, f"memorization_seed_{seed}.txt"),
                     metrics.gap_report_table(rows))
        reports.append(rows)
    last = reports[0][-1]
    print(metrics.gap_report_table(reports[0]), end="")
    print(f"final test acc: baseline {last['baseline_test_acc']:.4f}, "
          f"dnfer {last['dnfer_test_acc']:.4f}")
    return reports


def cmd_eval(cfg, checkpoint, out=None):
    model, _ = load_checkpoint(checkpoint)
    _, test_set = cfg.load_clean_datasets(cfg.seed)
    acc, cm, per_class = metrics.evaluate(model, test_set)
    result = {"checkpoint": os.fspath(checkpoint), "test_acc": acc, "n": cm.total,
              "per_class_accuracy": [None if np.isnan(v) else float(v) for v in per_class],
              "confusion_matrix": cm.counts.tolist()}
    if out:
        os.makedirs(out, exist_ok=True)
        write_atomic(os.path.join(out, "eval.json"), json.dumps(result, indent=2, sort_keys=True) + "\n")
        write_atomic(os.path.join(out, "confusion.csv"), cm.to_csv())
    print(f"test accuracy: {acc:.4f} ({cm.total} samples)")
    print(cm.to_table(), end="")
    return result


# -- argument parsing --------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", metavar="PATH", help="flat key = value config file")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--noise-rate", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--warm-epochs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--out", metavar="DIR")
    src = p.add_argument_group("dataset")
    src.add_argument("--blobs", action="store_true", help="synthetic Gaussian blobs (default)")
    src.add_argument("--blobs-counts", help="comma-separated per-class train counts")
    src.add_argument("--blobs-dim", type=int)
    src.add_argument("--blobs-separation", type=float)
    src.add_argument("--csv", metavar="PATH", help="training CSV")
    src.add_argument("--csv-test", metavar="PATH")
    src.add_argument("--idx-images", metavar="PATH")
    src.add_argument("--idx-labels", metavar="PATH")
    src.add_argument("--idx-test-images", metavar="PATH")
    src.add_argument("--idx-test-labels", metavar="PATH")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")


def build_parser():
    parser = argparse.ArgumentParser(prog="dnfer", description="Noisy-label training experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("train", help="train one mode over all repeats"))
    ab = sub.add_parser("ablate", help="sweep one hyperparameter")
    _add_common(ab)
    ab.add_argument("--sweep", required=True, choices=tuple(SWEEPS))
    ab.add_argument("--values", nargs="*", default=[])
    _add_common(sub.add_parser("compare", help="paired baseline vs dnfer memorization report"))
    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(ev)
    ev.add_argument("--checkpoint", required=True, metavar="PATH")
    return parser


def resolve_config(args):
    overrides = {}
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = coerce(key, value) if isinstance(value, str) else value
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        overrides[key] = coerce(key, value)
    if args.csv:
        overrides["dataset"] = "csv"
    elif args.idx_images or args.idx_labels:
        overrides["dataset"] = "idx"
    elif args.blobs:
        overrides["dataset"] = "blobs"
    cfg = load_config(args.config, overrides)
    if not cfg.out and args.command != "eval":
        cfg = cfg.replace(out=default_output_dir(args.command))
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ConfigurationError, ParseError, TypeError) as exc:
        parser.print_usage(sys.stderr)
        print(f"dnfer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"dnfer: error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "train":
            cmd_train(cfg, cfg.out)
        elif args.command == "ablate":
            cmd_ablate(cfg, cfg.out, args.sweep, args.values)
        elif args.command == "compare":
            cmd_compare(cfg, cfg.out)
        else:
            cmd_eval(cfg, args.checkpoint, cfg.out or None)
    except ConfigurationError as exc:
        print(f"dnfer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DnferError, ValueError, ArithmeticError, OSError) as exc:
        print(f"dnfer: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
