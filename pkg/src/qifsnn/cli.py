"""
Command-line entry point.

Exit codes: 0 success, 1 gradient check failed, 2 invalid config or usage,
3 training diverged (non-finite loss), 4 re-evaluation mismatch, 5 missing file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .harness import (evaluate_run, gradcheck_suite, metrics_from_predictions, report_csv,
                      report_markdown, report_rows)
from .train.data import TASKS, make_datasets
from .train.loop import TrainingDiverged, train_task

OUTPUT_ENV = "QIFSNN_OUTPUT_DIR"
EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_MISMATCH, EXIT_MISSING = range(6)

log = logging.getLogger("qifsnn")


def _resolve_output(args, cfg) -> Path:
    if args.output_dir:
        return Path(args.output_dir)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    base = Path(os.environ.get(OUTPUT_ENV, "runs"))
    name = f"{cfg.task}_{cfg.model}"
    if cfg.model == "lif_direct":
        name += f"{cfg.lif.n_steps}"
    return base / f"{name}_s{cfg.train.seed}"


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.deterministic:
        overrides["deterministic"] = True
    try:
        cfg = cfg.replace_train(**overrides)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    out = _resolve_output(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    every = max(1, cfg.train.epochs // 20)

    def progress(ep, loss):
        if ep % every == 0 or ep == cfg.train.epochs - 1:
            log.info("epoch %d loss %.6e", ep, loss)

    result = train_task(cfg.task, cfg.train, cfg.model, cfg.lif, out_dir=out, progress=progress)
    m = result.metrics
    print(f"{cfg.task} {cfg.model}: rel_l2={m.rel_l2:.4f}% mae={m.mae:.4e} rmse={m.rmse:.4e} "
          f"r2={m.r2:.6f} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    fresh, stored = evaluate_run(args.run_dir)
    bad = []
    for k, v in fresh.items():
        print(f"{k}: {v:.17g}")
        if k in stored and abs(stored[k] - v) > 1e-9 * max(1.0, abs(v)):
            bad.append(k)
    if bad:
        print(f"mismatch against stored metrics: {', '.join(bad)}", file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    T = 2.0
    if args.config:
        T = load_config(args.config).train.trial_T
    suite = gradcheck_suite(args.n_nets, args.seed, args.tol, args.step, args.max_layers,
                            args.max_width, args.max_spikes, T)
    for line in suite.lines():
        print(line)
    return EXIT_OK if suite.passed else EXIT_GRADCHECK


def cmd_report(args) -> int:
    rows = report_rows(args.run_dirs)
    md = report_markdown(rows)
    print(md, end="")
    if args.out:
        Path(args.out).write_text(md)
    if args.csv:
        Path(args.csv).write_text(report_csv(rows))
    if args.verify:
        status = EXIT_OK
        for d in args.run_dirs:
            stored = json.loads((Path(d) / "metrics.json").read_text())
            fresh = metrics_from_predictions(d)
            for k, v in fresh.items():
                if abs(stored.get(k, float("nan")) - v) > 1e-9 * max(1.0, abs(v)):
                    print(f"{d}: {k} differs ({stored.get(k)} vs {v})", file=sys.stderr)
                    status = EXIT_MISMATCH
        return status
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.config:
        cfg = load_config(args.config).train
    else:
        from .train.config import default_config
        cfg = default_config(args.task, seed=args.seed)
    train, test = make_datasets(cfg.task, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for ds in (train, test):
        with open(out / f"{ds.split}.csv", "w", newline="") as f:
            w = csv.writer(f)
            n_in, n_out = ds.inputs.shape[1], ds.targets.shape[1]
            w.writerow([f"in{i}" for i in range(n_in)] + [f"target{i}" for i in range(n_out)])
            for x, y in zip(ds.inputs, ds.targets):
                w.writerow([f"{v:.17g}" for v in (*x, *y)])
    print(f"{cfg.task}: {len(train)} train / {len(test)} test rows -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qifsnn", description=__doc__.splitlines()[1])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train a model from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--epochs", type=int)
    r.add_argument("--output-dir")
    r.add_argument("--threads", type=int)
    r.add_argument("--deterministic", action="store_true")
    r.set_defaults(fn=cmd_run)

    e = sub.add_parser("eval", help="re-evaluate a run directory from its checkpoint")
    e.add_argument("--run-dir", required=True)
    e.set_defaults(fn=cmd_eval)

    g = sub.add_parser("gradcheck", help="compare tape gradients with central differences")
    g.add_argument("--config")
    g.add_argument("--n-nets", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=1e-5)
    g.add_argument("--step", type=float, default=1e-5)
    g.add_argument("--max-layers", type=int, default=3)
    g.add_argument("--max-width", type=int, default=8)
    g.add_argument("--max-spikes", type=int, default=4)
    g.set_defaults(fn=cmd_gradcheck)

    rp = sub.add_parser("report", help="tabulate metrics of run directories")
    rp.add_argument("run_dirs", nargs="+")
    rp.add_argument("--out", help="write the Markdown table here")
    rp.add_argument("--csv", help="write a CSV table here")
    rp.add_argument("--verify", action="store_true",
                    help="recompute metrics from predictions.csv and compare")
    rp.set_defaults(fn=cmd_report)

    d = sub.add_parser("gen-data", help="write a task's train/test datasets as CSV")
    d.add_argument("--task", choices=TASKS, default="parabola")
    d.add_argument("--config")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
