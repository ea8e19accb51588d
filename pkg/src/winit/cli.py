"""``winit`` command line: simulate, train, explain, evaluate, render, bench.

Settings are resolved in this order, later winning: built-in defaults, the
``--config`` file, each ``--override KEY=VALUE`` in order, then the
dedicated flags (``--seed``, ``--method``, ``--window``, ``--samples``).
The output directory is ``--out``, else ``output_dir`` from the config,
else ``$WINIT_OUTPUT_ROOT/<config-hash>``, else ``runs/<config-hash>``.

Exit codes: 0 success, 1 validation error, 2 runtime or model failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import pipeline as pl
from . import render
from . import seqdata as sd
from .config import (
    ExperimentConfig,
    MethodSpec,
    apply_override,
    delayed_spike_experiment,
    load_config,
    save_config,
    spike_experiment,
)
from .explainers import METHODS, read_importance
from .seqmodels import CheckpointError

ENV_OUTPUT_ROOT = "WINIT_OUTPUT_ROOT"

log = logging.getLogger("winit")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--method", help=f"one of {', '.join(METHODS)}")
    common.add_argument("--window", type=int, help="WinIT lookback window")
    common.add_argument("--samples", type=int, help="Monte Carlo samples per estimate")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a config field, e.g. dataset.label_delay=2 (repeatable)")
    common.add_argument("--force", action="store_true", help="ignore config-hash mismatches with upstream artifacts")
    common.add_argument("--preset", choices=["spike", "delayed-spike"],
                        help="start from a built-in benchmark config instead of --config")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="winit", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate train/test datasets")
    t = sub.add_parser("train", parents=[common], help="train the predictor and/or generators")
    t.add_argument("--role", choices=["predictor", "generator", "all"], default="all")
    sub.add_parser("explain", parents=[common], help="compute importance scores on the test set")
    sub.add_parser("evaluate", parents=[common], help="ranking / AUC-drop / runtime reports")
    r = sub.add_parser("render", parents=[common], help="saliency maps for one test sample")
    r.add_argument("--sample-id", required=True)
    sub.add_parser("bench", parents=[common], help="simulate, train, explain and evaluate every seed")
    sub.add_parser("config", parents=[common], help="print the resolved config as JSON")
    return p


def resolve(args) -> tuple[ExperimentConfig, Path]:
    if args.config and args.preset:
        raise ValueError("--config and --preset are mutually exclusive")
    if args.config:
        config = load_config(args.config)
    elif args.preset:
        config = spike_experiment() if args.preset == "spike" else delayed_spike_experiment()
    else:
        config = ExperimentConfig()
    for ov in args.override:
        config = apply_override(config, ov)
    if args.seed is not None:
        config.seeds = [args.seed]
    if args.method:
        if args.method not in METHODS:
            raise ValueError(f"unknown method {args.method!r}; valid methods: {', '.join(METHODS)}")
        match = [m for m in config.methods if m.name == args.method]
        base = match[0] if match else MethodSpec(args.method, window=8 if args.method == "WinIT" else 1)
        config.methods = [MethodSpec(base.name, base.window, base.samples)]
    for m in config.methods:
        if args.window is not None and m.name == "WinIT":
            m.window = args.window
        if args.samples is not None:
            m.samples = args.samples
    config.validate()
    if args.out:
        out = args.out
    elif config.output_dir:
        out = Path(config.output_dir)
    else:
        out = Path(os.environ.get(ENV_OUTPUT_ROOT, "runs")) / config.hash()
    return config, out


def _render(config, out, sample_id, force):
    seed = config.seeds[0]
    d = pl.seed_dir(out, seed)
    test = sd.read_dataset(d / "test.jsonl")
    try:
        sample = test.by_id(sample_id)
    except KeyError:
        raise ValueError(f"unknown sample id {sample_id!r} in {d / 'test.jsonl'}") from None
    maps = {}
    for m in config.methods:
        path = d / f"importance-{m.tag}.tsv"
        if not path.exists():
            raise FileNotFoundError(f"missing importance file: {path}")
        results, header = read_importance(path, test.num_features, test.num_steps)
        if header.get("method_hash") != pl._method_hash(config, seed, m) and not force:
            raise pl.StaleArtifactError(f"{path}: produced by a different configuration; pass --force to use it")
        maps[m.tag] = next(r.aggregated for r in results if r.sample_id == sample_id)
    provenance = {"config_hash": config.hash(), "master_seed": config.master_seed, "seed": seed}
    return render.render_sample(sample, maps, d / "render", provenance=provenance)


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config, out = resolve(args)
        if args.command == "config":
            print(json.dumps(config.to_dict(), indent=2, sort_keys=True))
        elif args.command == "simulate":
            out.mkdir(parents=True, exist_ok=True)
            save_config(config, out / "config.json")
            for s in config.seeds:
                print(pl.stage_simulate(config, s, out))
        elif args.command == "train":
            roles = {"predictor": ("predictor",), "generator": ("joint", "per-feature"),
                     "all": ("predictor", "joint", "per-feature")}[args.role]
            for s in config.seeds:
                models = pl.stage_train(config, s, out, roles, args.force)
                if models.predictor is not None:
                    acc = models.reports["predictor"].final_valid_accuracy
                    print(f"seed {s}: predictor validation accuracy {acc:.4f}")
        elif args.command == "explain":
            for s in config.seeds:
                for m in config.methods:
                    res = pl.stage_explain(config, s, out, m, args.force)
                    print(f"seed {s}: {m.tag} on {len(res)} samples in {sum(r.seconds for r in res):.2f}s")
        elif args.command == "evaluate":
            pl.stage_evaluate(config, out, args.force)
            print((out / "summary.txt").read_text(), end="")
        elif args.command == "render":
            for p in _render(config, out, args.sample_id, args.force):
                print(p)
        elif args.command == "bench":
            out.mkdir(parents=True, exist_ok=True)
            save_config(config, out / "config.json")
            pl.stage_bench(config, out, args.force)
            print((out / "summary.txt").read_text(), end="")
    except pl.StaleArtifactError as exc:
        print(f"winit: error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, RuntimeError) as exc:
        print(f"winit: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"winit: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())
