"""Experiment configuration: a JSON file, CLI overrides, and content hashes."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .evaluation import MaskSpec
from .seqdata import SpikeConfig
from .seqmodels import TrainConfig

DATASET_KINDS = ("spike", "delayed_spike", "file")


@dataclass
class DatasetSpec:
    kind: str = "spike"
    num_train: int = 1000
    num_test: int = 300
    num_features: int = 3
    num_steps: int = 80
    narma_order: int = 10
    spike_probability: float = 0.05
    spike_magnitude: float = 2.0
    label_delay: int = 0
    trend_slopes: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    train_path: str = ""
    test_path: str = ""

    def spike_config(self, seed: int) -> SpikeConfig:
        return SpikeConfig(
            num_samples=self.num_train + self.num_test,
            num_features=self.num_features,
            num_steps=self.num_steps,
            narma_order=self.narma_order,
            spike_probability=self.spike_probability,
            spike_magnitude=self.spike_magnitude,
            label_delay=self.label_delay,
            trend_slopes=tuple(self.trend_slopes),
            seed=seed,
        )


@dataclass
class MethodSpec:
    name: str
    window: int = 1
    samples: int = 10

    @property
    def tag(self):
        return f"{self.name}-N{self.window}" if self.name == "WinIT" else self.name


@dataclass
class EvaluationSpec:
    ranking: bool = True
    drop: list = field(default_factory=list)  # [{"kind": "top_k", "value": 50}, ...]
    drop_readout: str = "all"
    random_baseline: bool = True

    def mask_specs(self):
        return [MaskSpec(d["kind"], d["value"]) for d in self.drop]


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    predictor: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=30))
    generator_joint: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=15))
    generator_per_feature: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=15, hidden_size=32))
    methods: list = field(
        default_factory=lambda: [MethodSpec("FIT"), MethodSpec("IFIT"), MethodSpec("WinIT", window=8)]
    )
    evaluation: EvaluationSpec = field(default_factory=EvaluationSpec)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    master_seed: int = 0
    output_dir: str = ""
    legacy_kl0_zero: bool = False

    def validate(self):
        if self.dataset.kind not in DATASET_KINDS:
            raise ValueError(f"dataset.kind must be one of {DATASET_KINDS}")
        if not self.seeds:
            raise ValueError("seeds: at least one seed must be configured")
        if self.dataset.kind != "file":
            try:
                self.dataset.spike_config(0)
            except ValueError as exc:
                raise ValueError(f"dataset: {exc}") from None
        from .explainers import METHODS

        for m in self.methods:
            if m.name not in METHODS:
                raise ValueError(f"methods: unknown method {m.name!r}; valid methods: {', '.join(METHODS)}")
            if m.window < 1 or m.samples < 1:
                raise ValueError(f"methods: {m.name} needs window >= 1 and samples >= 1")
        for d in self.evaluation.drop:
            MaskSpec(d["kind"], d["value"])
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = copy.deepcopy(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        if "dataset" in data:
            kw["dataset"] = DatasetSpec(**data.pop("dataset"))
        for role in ("predictor", "generator_joint", "generator_per_feature"):
            if role in data:
                kw[role] = TrainConfig(**data.pop(role))
        if "methods" in data:
            kw["methods"] = [MethodSpec(**m) for m in data.pop("methods")]
        if "evaluation" in data:
            kw["evaluation"] = EvaluationSpec(**data.pop("evaluation"))
        kw.update(data)
        return cls(**kw)

    def hash(self, *sections):
        """Short content hash of the whole config, or of the named top-level sections."""
        d = self.to_dict()
        if sections:
            d = {k: d[k] for k in sections}
        return content_hash(d)


def content_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def save_config(config: ExperimentConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_override(config: ExperimentConfig, assignment: str) -> ExperimentConfig:
    """Apply ``dotted.key=VALUE``; VALUE is parsed as JSON, falling back to a string."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ValueError(f"override {assignment!r} must look like KEY=VALUE")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    d = config.to_dict()
    node = d
    parts = key.split(".")
    for p in parts[:-1]:
        if isinstance(node, list):
            p = int(p)
        elif p not in node:
            raise ValueError(f"override: unknown key {key!r}")
        node = node[p]
    last = int(parts[-1]) if isinstance(node, list) else parts[-1]
    if not isinstance(node, list) and last not in node:
        raise ValueError(f"override: unknown key {key!r}")
    node[last] = value
    return ExperimentConfig.from_dict(d)


def derive_seed(*parts) -> int:
    """Deterministic 63-bit seed from integer parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0] >> 1)


def spike_experiment(**dataset_overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(
        evaluation=EvaluationSpec(drop=[{"kind": "top_k", "value": 50}, {"kind": "top_percent", "value": 5}])
    )
    for k, v in dataset_overrides.items():
        setattr(cfg.dataset, k, v)
    return cfg


def delayed_spike_experiment(delay=2, **dataset_overrides) -> ExperimentConfig:
    cfg = spike_experiment(kind="delayed_spike", label_delay=delay, trend_slopes=[0.0, 0.01, -0.01])
    cfg.methods = [MethodSpec("FIT"), MethodSpec("IFIT"), MethodSpec("WinIT", window=8)]
    for k, v in dataset_overrides.items():
        setattr(cfg.dataset, k, v)
    return cfg
