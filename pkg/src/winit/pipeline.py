"""Simulate / train / explain / evaluate, in memory and as file-backed stages.

The file-backed stages lay out one directory per seed::

    OUT/seed-<s>/manifest.json        dataset provenance and hashes
    OUT/seed-<s>/train.jsonl, test.jsonl
    OUT/seed-<s>/predictor.ckpt, generator-joint.ckpt, generator-per-feature.ckpt
    OUT/seed-<s>/train-report.json
    OUT/seed-<s>/importance-<tag>.tsv
    OUT/seed-<s>/timing.json          wall-clock seconds (not reproducible)
    OUT/report-ranking.json, report-drop.json, report-runtime.json, summary.txt

Everything except ``timing.json`` is byte-identical across reruns.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import explainers as ex
from . import seqdata as sd
from . import seqmodels as sm
from .config import ExperimentConfig, MethodSpec, content_hash, derive_seed

log = logging.getLogger(__name__)

ROLE_DATA, ROLE_SPLIT, ROLE_VALID, ROLE_PRED, ROLE_GJ, ROLE_GP, ROLE_EXPLAIN, ROLE_RANDOM = range(1, 9)
GENERATOR_FOR = {"FIT": "joint", "IFIT": "per-feature", "WinIT": "per-feature"}


class StaleArtifactError(RuntimeError):
    """An upstream artifact was produced from a different configuration."""


# ------------------------------------------------------------ in memory


@dataclass
class TrainedModels:
    predictor: sm.PredictorModel
    generators: dict
    reports: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)


def build_datasets(config: ExperimentConfig, seed: int):
    spec = config.dataset
    if spec.kind == "file":
        return sd.read_dataset(spec.train_path), sd.read_dataset(spec.test_path)
    full = sd.make_spike_dataset(spec.spike_config(derive_seed(config.master_seed, seed, ROLE_DATA)))
    frac = spec.num_train / (spec.num_train + spec.num_test)
    return sd.split_dataset(full, frac, derive_seed(config.master_seed, seed, ROLE_SPLIT))


def _with_seed(tc: sm.TrainConfig, seed: int) -> sm.TrainConfig:
    return sm.TrainConfig(**{**tc.__dict__, "seed": seed})


def fit_models(config: ExperimentConfig, train: sd.Dataset, seed: int, roles=("predictor", "joint", "per-feature")):
    """Train the predictor (on 90% of ``train``, early-stopped on the rest) and the generators."""
    ms = config.master_seed
    out = TrainedModels(None, {})
    if "predictor" in roles:
        fit, valid = sd.split_dataset(train, 0.9, derive_seed(ms, seed, ROLE_VALID))
        t0 = time.perf_counter()
        out.predictor, rep = sm.train_predictor(fit, valid, _with_seed(config.predictor, derive_seed(ms, seed, ROLE_PRED)))
        out.seconds["predictor"] = time.perf_counter() - t0
        out.reports["predictor"] = rep
    for mode, tc, role in (("joint", config.generator_joint, ROLE_GJ), ("per-feature", config.generator_per_feature, ROLE_GP)):
        if mode not in roles:
            continue
        t0 = time.perf_counter()
        out.generators[mode], rep = sm.train_generator(train, _with_seed(tc, derive_seed(ms, seed, role)), mode)
        out.seconds[f"generator-{mode}"] = time.perf_counter() - t0
        out.reports[f"generator-{mode}"] = rep
    return out


def explain_config(config: ExperimentConfig, method: MethodSpec, seed: int) -> ex.ExplainConfig:
    return ex.ExplainConfig(
        window=method.window,
        samples=method.samples,
        seed=derive_seed(config.master_seed, seed, ROLE_EXPLAIN),
        legacy_kl0_zero=config.legacy_kl0_zero,
    )


def run_method(config, method: MethodSpec, models: TrainedModels, test, train, seed):
    gen = models.generators.get(GENERATOR_FOR.get(method.name, ""))
    if method.name in GENERATOR_FOR and gen is None:
        raise ex.MissingGeneratorError(f"{method.name} needs the {GENERATOR_FOR[method.name]} generator")
    cfg = explain_config(config, method, seed)
    return ex.explain_dataset(method.name, models.predictor, test, gen, cfg, train.values_array())


@dataclass
class SeedRun:
    seed: int
    train: sd.Dataset
    test: sd.Dataset
    models: TrainedModels
    results: dict  # method tag -> list[ImportanceResult]

    def seconds(self, tag):
        return float(sum(r.seconds for r in self.results[tag]))


def run_seed(config: ExperimentConfig, seed: int, methods=None) -> SeedRun:
    train, test = build_datasets(config, seed)
    models = fit_models(config, train, seed)
    results = {}
    for m in methods or config.methods:
        results[m.tag] = run_method(config, m, models, test, train, seed)
        log.info("seed %s %s: %.1fs", seed, m.tag, sum(r.seconds for r in results[m.tag]))
    return SeedRun(seed, train, test, models, results)


def summarize_ranking(runs, tag):
    """Mean and std over seeds of the per-seed mean AUROC / AUPRC."""
    reports = [ev.dataset_ranking_report(r.results[tag], r.test, [r.seed]) for r in runs]
    a = np.array([x.auroc_mean for x in reports])
    p = np.array([x.auprc_mean for x in reports])
    return {
        "method": tag,
        "auroc_mean": float(a.mean()),
        "auroc_std": float(a.std()),
        "auprc_mean": float(p.mean()),
        "auprc_std": float(p.std()),
        "per_seed_auroc": a.tolist(),
        "per_seed_auprc": p.tolist(),
        "seeds": [r.seed for r in runs],
        "excluded_samples": int(sum(len(x.excluded) for x in reports)),
    }


# ------------------------------------------------------------ file stages


def seed_dir(out, seed) -> Path:
    return Path(out) / f"seed-{seed}"


def _data_hash(config: ExperimentConfig, seed: int) -> str:
    return content_hash({"dataset": config.to_dict()["dataset"], "master_seed": config.master_seed, "seed": seed})


def _models_hash(config: ExperimentConfig, seed: int) -> str:
    d = config.to_dict()
    return content_hash({
        "data": _data_hash(config, seed),
        "predictor": d["predictor"],
        "generator_joint": d["generator_joint"],
        "generator_per_feature": d["generator_per_feature"],
    })


def _method_hash(config: ExperimentConfig, seed: int, method: MethodSpec) -> str:
    return content_hash({"models": _models_hash(config, seed), "method": method.__dict__,
                         "legacy_kl0_zero": config.legacy_kl0_zero})


def _write_json(path, payload):
    ev.write_report(path, payload)


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _check(path, key, expected, force):
    if not Path(path).exists():
        raise FileNotFoundError(f"missing upstream artifact: {path}")
    found = _read_json(path).get(key)
    if found != expected and not force:
        raise StaleArtifactError(
            f"{path}: {key}={found} does not match the current configuration ({expected}); "
            "re-run the upstream stage or pass --force"
        )


def _update_timing(d: Path, entries: dict):
    path = d / "timing.json"
    timing = _read_json(path) if path.exists() else {}
    timing.update(entries)
    _write_json(path, timing)


def stage_simulate(config: ExperimentConfig, seed: int, out) -> Path:
    d = seed_dir(out, seed)
    d.mkdir(parents=True, exist_ok=True)
    train, test = build_datasets(config, seed)
    stamp = {"config_hash": config.hash(), "data_hash": _data_hash(config, seed),
             "master_seed": str(config.master_seed), "seed": str(seed)}
    for name, ds in (("train", train), ("test", test)):
        sd.write_dataset(replace(ds, metadata={**ds.metadata, **stamp}), d / f"{name}.jsonl")
    _write_json(d / "manifest.json", {
        "config_hash": config.hash(),
        "data_hash": _data_hash(config, seed),
        "master_seed": config.master_seed,
        "seed": seed,
        "dataset": config.to_dict()["dataset"],
        "label_delay": config.dataset.label_delay,
        "num_train": len(train),
        "num_test": len(test),
        "metadata": train.metadata,
    })
    return d


def stage_train(config: ExperimentConfig, seed: int, out, roles=("predictor", "joint", "per-feature"), force=False):
    d = seed_dir(out, seed)
    _check(d / "manifest.json", "data_hash", _data_hash(config, seed), force)
    train_path = d / "train.jsonl"
    if not train_path.exists():
        raise FileNotFoundError(f"missing dataset file: {train_path}")
    train = sd.read_dataset(train_path)
    models = fit_models(config, train, seed, roles)
    rep_path = d / "train-report.json"
    report = _read_json(rep_path) if rep_path.exists() else {}
    report.update({"config_hash": config.hash(), "models_hash": _models_hash(config, seed),
                   "master_seed": config.master_seed, "seed": seed})
    provenance = {k: report[k] for k in ("config_hash", "models_hash", "master_seed", "seed")}
    if models.predictor is not None:
        sm.save_model(models.predictor, d / "predictor.ckpt", provenance)
    for mode, g in models.generators.items():
        sm.save_model(g, d / f"generator-{mode}.ckpt", provenance)
    for name, rep in models.reports.items():
        r = rep.to_dict()
        r.pop("seconds")
        report[name] = r
    _write_json(rep_path, report)
    _update_timing(d, {f"train:{k}": v for k, v in models.seconds.items()})
    return models


def load_models(config, seed, out, force=False) -> TrainedModels:
    d = seed_dir(out, seed)
    _check(d / "train-report.json", "models_hash", _models_hash(config, seed), force)
    path = d / "predictor.ckpt"
    if not path.exists():
        raise FileNotFoundError(f"missing predictor checkpoint: {path}")
    models = TrainedModels(sm.load_model(path, "predictor"), {})
    for mode in ("joint", "per-feature"):
        p = d / f"generator-{mode}.ckpt"
        if p.exists():
            models.generators[mode] = sm.load_model(p, "generator")
    return models


def stage_explain(config: ExperimentConfig, seed: int, out, method: MethodSpec, force=False):
    d = seed_dir(out, seed)
    models = load_models(config, seed, out, force)
    if method.name in GENERATOR_FOR and GENERATOR_FOR[method.name] not in models.generators:
        raise ex.MissingGeneratorError(
            f"{method.name} needs {d / ('generator-' + GENERATOR_FOR[method.name] + '.ckpt')}; "
            "run `winit train --role generator` first"
        )
    train = sd.read_dataset(d / "train.jsonl")
    test = sd.read_dataset(d / "test.jsonl")
    results = run_method(config, method, models, test, train, seed)
    header = {
        "config_hash": config.hash(),
        "method_hash": _method_hash(config, seed, method),
        "master_seed": config.master_seed,
        "seed": seed,
        "method": method.name,
        "window": method.window,
        "samples": method.samples,
    }
    ex.write_importance(d / f"importance-{method.tag}.tsv", results, header)
    _update_timing(d, {f"explain:{method.tag}": float(sum(r.seconds for r in results))})
    return results


def _load_results(config, seed, out, method, test, force):
    path = seed_dir(out, seed) / f"importance-{method.tag}.tsv"
    if not path.exists():
        raise FileNotFoundError(f"missing importance file: {path}; run `winit explain` first")
    results, header = ex.read_importance(path, test.num_features, test.num_steps)
    if header.get("method_hash") != _method_hash(config, seed, method) and not force:
        raise StaleArtifactError(f"{path}: produced by a different configuration; re-run explain or pass --force")
    order = {sid: i for i, sid in enumerate(test.ids())}
    return sorted(results, key=lambda r: order.get(r.sample_id, len(order)))


def stage_evaluate(config: ExperimentConfig, out, force=False):
    """Write ranking, drop and runtime reports plus a plain-text summary table."""
    out = Path(out)
    seeds = list(config.seeds)
    if not seeds:
        raise ValueError("seeds: at least one seed must be configured")
    runs = []
    for s in seeds:
        d = seed_dir(out, s)
        test = sd.read_dataset(d / "test.jsonl")
        train = sd.read_dataset(d / "train.jsonl")
        results = {m.tag: _load_results(config, s, out, m, test, force) for m in config.methods}
        runs.append(SeedRun(s, train, test, None, results))
    common = {"config_hash": config.hash(), "master_seed": config.master_seed, "seeds": seeds}
    lines = [f"config {config.hash()}  master_seed {config.master_seed}  seeds {seeds}", ""]
    ranking = []
    if config.evaluation.ranking and all(s.gt_importance is not None for s in runs[0].test):
        lines.append(f"{'method':<12}{'AUROC':>20}{'AUPRC':>20}")
        for m in config.methods:
            row = summarize_ranking(runs, m.tag)
            ranking.append(row)
            lines.append(f"{m.tag:<12}{row['auroc_mean']:>12.3f} ± {row['auroc_std']:.3f}"
                         f"{row['auprc_mean']:>12.3f} ± {row['auprc_std']:.3f}")
        _write_json(out / "report-ranking.json", {**common, "rows": ranking})
    drops = []
    specs = config.evaluation.mask_specs()
    if specs:
        lines += ["", f"{'method':<12}{'mask':<12}{'drop':>20}"]
        for spec in specs:
            tags = [m.tag for m in config.methods] + (["random"] if config.evaluation.random_baseline else [])
            for tag in tags:
                vals = []
                for r in runs:
                    models = load_models(config, r.seed, out, force)
                    res = r.results[tag] if tag != "random" else ev.random_importance(
                        r.test, derive_seed(config.master_seed, r.seed, ROLE_RANDOM))
                    rep = ev.auc_drop(models.predictor, r.test, res, spec, r.train.feature_means(),
                                      config.evaluation.drop_readout, tag)
                    vals.append(rep.to_dict())
                dv = np.array([v["drop"] for v in vals])
                drops.append({"method": tag, "spec": spec.label(), "drop_mean": float(dv.mean()),
                              "drop_std": float(dv.std()), "per_seed": vals})
                lines.append(f"{tag:<12}{spec.label():<12}{dv.mean():>12.4f} ± {dv.std():.4f}")
        _write_json(out / "report-drop.json", {**common, "readout": config.evaluation.drop_readout, "rows": drops})
    timings = {}
    for s in seeds:
        path = seed_dir(out, s) / "timing.json"
        t = _read_json(path) if path.exists() else {}
        for m in config.methods:
            timings[m.tag] = timings.get(m.tag, 0.0) + t.get(f"explain:{m.tag}", 0.0)
    runtime = ev.runtime_report(timings)
    _write_json(out / "report-runtime.json", {**common, "rows": runtime,
                                              "note": "wall-clock seconds summed over seeds; not reproducible"})
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"ranking": ranking, "drop": drops, "runtime": runtime}


def stage_bench(config: ExperimentConfig, out, force=False):
    for s in config.seeds:
        stage_simulate(config, s, out)
        stage_train(config, s, out, force=force)
        for m in config.methods:
            stage_explain(config, s, out, m, force=force)
    return stage_evaluate(config, out, force=force)
