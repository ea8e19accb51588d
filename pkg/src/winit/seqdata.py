"""Synthetic Spike / Delayed Spike benchmarks and the dataset file format.

Every sample is a ``D x T`` matrix (feature x time) with a per-step label
vector.  The spike generators also attach a ground-truth importance mask
that marks the single observation responsible for the label change.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "TimeSeriesSample",
    "Dataset",
    "SpikeConfig",
    "DatasetFormatError",
    "InfeasibleConfigError",
    "NarmaDivergenceError",
    "narma_sequence",
    "inject_spikes",
    "make_spike_dataset",
    "spike_config",
    "delayed_spike_config",
    "split_dataset",
    "write_dataset",
    "read_dataset",
]

FORMAT_NAME = "winit-dataset"
FORMAT_VERSION = 1

NARMA_COEFFICIENTS = (0.3, 0.05, 1.5, 0.1)
NARMA_BOUND = 100.0
MAX_RESAMPLE = 100


class DatasetFormatError(ValueError):
    """Raised when a dataset file or record violates the format."""


class InfeasibleConfigError(RuntimeError):
    """Raised when a spike configuration cannot produce valid samples."""


class NarmaDivergenceError(ArithmeticError):
    """A NARMA draw left the bounded regime (rare for order 10)."""


@dataclass(frozen=True, eq=False)
class TimeSeriesSample:
    id: str
    values: np.ndarray
    labels: np.ndarray
    gt_importance: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if values.ndim != 2:
            raise ValueError(f"values must be a D x T matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"sample {self.id!r}: values contain non-finite entries")
        if labels.shape != (values.shape[1],):
            raise ValueError(
                f"sample {self.id!r}: labels have shape {labels.shape}, "
                f"expected ({values.shape[1]},)"
            )
        values.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        if self.gt_importance is not None:
            gt = np.asarray(self.gt_importance, dtype=np.int64)
            if gt.shape != values.shape:
                raise ValueError(
                    f"sample {self.id!r}: gt_importance shape {gt.shape} "
                    f"does not match values shape {values.shape}"
                )
            if not np.all((gt == 0) | (gt == 1)):
                raise ValueError(f"sample {self.id!r}: gt_importance must be binary")
            gt.setflags(write=False)
            object.__setattr__(self, "gt_importance", gt)

    @property
    def num_features(self) -> int:
        return self.values.shape[0]

    @property
    def num_steps(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesSample):
            return NotImplemented
        if (self.gt_importance is None) != (other.gt_importance is None):
            return False
        return (
            self.id == other.id
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.labels, other.labels)
            and (self.gt_importance is None or np.array_equal(self.gt_importance, other.gt_importance))
        )


@dataclass(frozen=True)
class Dataset:
    samples: tuple[TimeSeriesSample, ...]
    num_features: int
    num_steps: int
    num_classes: int
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        for name in ("num_features", "num_steps", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        seen = set()
        for s in self.samples:
            if s.values.shape != (self.num_features, self.num_steps):
                raise ValueError(
                    f"sample {s.id!r} has shape {s.values.shape}, expected "
                    f"({self.num_features}, {self.num_steps})"
                )
            if s.labels.min(initial=0) < 0 or s.labels.max(initial=0) >= self.num_classes:
                raise ValueError(f"sample {s.id!r} has labels outside [0, {self.num_classes})")
            if s.id in seen:
                raise ValueError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
        object.__setattr__(self, "metadata", {str(k): str(v) for k, v in self.metadata.items()})

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def by_id(self, sample_id: str) -> TimeSeriesSample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)

    def values_array(self) -> np.ndarray:
        """Stacked values, shape ``(num_samples, D, T)``."""
        return np.stack([s.values for s in self.samples]) if self.samples else np.zeros(
            (0, self.num_features, self.num_steps)
        )

    def labels_array(self) -> np.ndarray:
        return np.stack([s.labels for s in self.samples]) if self.samples else np.zeros(
            (0, self.num_steps), dtype=np.int64
        )

    def feature_means(self) -> np.ndarray:
        return self.values_array().mean(axis=(0, 2))

    def with_samples(self, samples) -> "Dataset":
        return replace(self, samples=tuple(samples))


@dataclass(frozen=True)
class SpikeConfig:
    """Parameters of the Spike / Delayed Spike generator.

    ``label_delay=0`` with zero trends gives Spike; ``label_delay=2`` with
    trends on two features gives Delayed Spike.
    """

    num_samples: int = 1300
    num_features: int = 3
    num_steps: int = 80
    narma_order: int = 10
    spike_probability: float = 0.05
    spike_magnitude: float = 2.0
    label_delay: int = 0
    trend_slopes: tuple[float, ...] = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "trend_slopes", tuple(float(v) for v in self.trend_slopes))
        self.validate()

    def validate(self):
        for name in ("num_samples", "num_features", "num_steps", "narma_order"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not 0.0 < self.spike_probability < 1.0:
            raise ValueError("spike_probability must lie in (0, 1)")
        if self.spike_magnitude <= 0:
            raise ValueError("spike_magnitude must be positive")
        if self.label_delay < 0:
            raise ValueError("label_delay must be non-negative")
        if self.label_delay + 1 >= self.num_steps:
            raise ValueError("label_delay must satisfy label_delay + 1 < num_steps")
        if len(self.trend_slopes) != self.num_features:
            raise ValueError("trend_slopes needs one entry per feature")

    def as_metadata(self) -> dict[str, str]:
        return {
            "generator": "delayed_spike" if self.label_delay else "spike",
            "num_samples": str(self.num_samples),
            "num_features": str(self.num_features),
            "num_steps": str(self.num_steps),
            "narma_order": str(self.narma_order),
            "spike_probability": repr(self.spike_probability),
            "spike_magnitude": repr(self.spike_magnitude),
            "label_delay": str(self.label_delay),
            "trend_slopes": json.dumps(list(self.trend_slopes)),
            "seed": str(self.seed),
        }


def spike_config(**overrides) -> SpikeConfig:
    return SpikeConfig(**overrides)


def delayed_spike_config(delay: int = 2, **overrides) -> SpikeConfig:
    overrides.setdefault("trend_slopes", (0.0, 0.01, -0.01))
    return SpikeConfig(label_delay=delay, **overrides)


def narma_sequence(order: int, length: int, rng: np.random.Generator, inputs=None) -> np.ndarray:
    """NARMA(order) signal driven by i.i.d. ``U[0, 0.5]`` inputs.

    ``y[t+1] = 0.3 y[t] + 0.05 y[t] sum(y[t-order+1..t]) + 1.5 u[t-order+1] u[t] + 0.1``
    with zero history before the start.  ``inputs`` overrides the random
    drive (used for checking the recurrence by hand).
    """
    if order < 1:
        raise ValueError("order must be a positive integer")
    if length < 1:
        raise ValueError("length must be a positive integer")
    if inputs is None:
        u = rng.uniform(0.0, 0.5, size=length)
    else:
        u = np.asarray(inputs, dtype=np.float64)
        if u.shape != (length,):
            raise ValueError(f"inputs must have shape ({length},)")
    a, b, c, d = NARMA_COEFFICIENTS
    y = np.zeros(length)
    for t in range(length - 1):
        lo = max(0, t - order + 1)
        u_lag = u[t - order + 1] if t - order + 1 >= 0 else 0.0
        y[t + 1] = a * y[t] + b * y[t] * y[lo : t + 1].sum() + c * u_lag * u[t] + d
        if not abs(y[t + 1]) < NARMA_BOUND:
            raise NarmaDivergenceError(f"NARMA({order}) exceeded |y| < {NARMA_BOUND:g} at step {t + 1}")
    return y


def inject_spikes(sequence, spike_probability: float, spike_magnitude: float, rng: np.random.Generator):
    """Add ``spike_magnitude + |g|`` at each step after the first with the given probability.

    Returns the spiked copy and the sorted spike positions.
    """
    seq = np.array(sequence, dtype=np.float64)
    if seq.ndim != 1 or seq.size == 0:
        raise ValueError("sequence must be a non-empty vector")
    hits = rng.random(seq.size) < spike_probability
    bumps = spike_magnitude + np.abs(rng.standard_normal(seq.size))
    hits[0] = False
    seq[hits] += bumps[hits]
    return seq, np.flatnonzero(hits).tolist()


def _spike_sample(cfg: SpikeConfig, index: int) -> TimeSeriesSample:
    rng = np.random.default_rng([cfg.seed, index])
    T, D, delay = cfg.num_steps, cfg.num_features, cfg.label_delay
    steps = np.arange(T, dtype=np.float64)
    for _ in range(MAX_RESAMPLE):
        values = np.empty((D, T))
        first = None
        try:
            bases = [narma_sequence(cfg.narma_order, T, rng) for _ in range(D)]
        except NarmaDivergenceError:
            continue
        for d in range(D):
            base = bases[d] + cfg.trend_slopes[d] * steps
            values[d], spikes = inject_spikes(base, cfg.spike_probability, cfg.spike_magnitude, rng)
            if d == 0:
                first = spikes[0] if spikes else None
        if first is None or first > T - delay - 1:
            continue
        labels = np.zeros(T, dtype=np.int64)
        labels[first + delay :] = 1
        gt = np.zeros((D, T), dtype=np.int64)
        gt[0, first] = 1
        return TimeSeriesSample(f"s{index:05d}", values, labels, gt)
    raise InfeasibleConfigError(
        f"no valid sample after {MAX_RESAMPLE} attempts (sample {index}); "
        "raise spike_probability or num_steps, or lower label_delay"
    )


def make_spike_dataset(config: SpikeConfig) -> Dataset:
    """Generate a Spike (delay 0) or Delayed Spike dataset.

    Sample ``i`` draws from its own stream seeded by ``(config.seed, i)``,
    so samples can be generated independently and in any order.  A draw is
    rejected and redrawn when the first spike in feature 0 comes too late
    for the label change to be observed, or when a NARMA base diverges.
    """
    config.validate()
    samples = [_spike_sample(config, i) for i in range(config.num_samples)]
    return Dataset(samples, config.num_features, config.num_steps, 2, config.as_metadata())


def split_dataset(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_train = int(round(train_fraction * len(dataset)))
    train_idx = sorted(order[:n_train])
    test_idx = sorted(order[n_train:])
    pick = lambda idx: dataset.with_samples(dataset.samples[i] for i in idx)  # noqa: E731
    return pick(train_idx), pick(test_idx)


def _record(sample: TimeSeriesSample) -> str:
    rec = {"id": sample.id, "values": sample.values.tolist(), "labels": sample.labels.tolist()}
    if sample.gt_importance is not None:
        rec["gt_importance"] = sample.gt_importance.tolist()
    return json.dumps(rec, allow_nan=False, separators=(",", ":"))


def write_dataset(dataset: Dataset, path) -> None:
    """Write ``dataset`` as JSON lines: one header line, then one record per sample.

    Floats go through ``repr`` so they read back bit-identical.
    """
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "num_features": dataset.num_features,
        "num_steps": dataset.num_steps,
        "num_classes": dataset.num_classes,
        "metadata": dict(sorted(dataset.metadata.items())),
    }
    lines = [json.dumps(header, separators=(",", ":"), sort_keys=True)]
    lines.extend(_record(s) for s in dataset.samples)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}:1: malformed header ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise DatasetFormatError(f"{path}:1: not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}:1: unsupported version {header.get('version')!r}")
    try:
        D, T, K = (int(header[k]) for k in ("num_features", "num_steps", "num_classes"))
    except (KeyError, TypeError, ValueError):
        raise DatasetFormatError(f"{path}:1: header must carry num_features, num_steps, num_classes") from None
    samples = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{where}: malformed record ({exc.msg})") from None
        if not isinstance(rec, dict) or not {"id", "values", "labels"} <= rec.keys():
            raise DatasetFormatError(f"{where}: record needs id, values and labels")
        sid = str(rec["id"])
        if sid in seen:
            raise DatasetFormatError(f"{where}: duplicate id {sid!r}")
        seen.add(sid)
        try:
            values = np.array(rec["values"], dtype=np.float64)
            labels = np.array(rec["labels"], dtype=np.int64)
            gt = rec.get("gt_importance")
            gt = None if gt is None else np.array(gt, dtype=np.int64)
        except (TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{where}: bad array ({exc})") from None
        if values.shape != (D, T):
            raise DatasetFormatError(f"{where}: values shape {values.shape} != ({D}, {T})")
        if labels.shape != (T,):
            raise DatasetFormatError(f"{where}: labels length {labels.size} != T={T}")
        if gt is not None and gt.shape != (D, T):
            raise DatasetFormatError(f"{where}: gt_importance shape {gt.shape} != ({D}, {T})")
        try:
            samples.append(TimeSeriesSample(sid, values, labels, gt))
        except ValueError as exc:
            raise DatasetFormatError(f"{where}: {exc}") from None
    try:
        return Dataset(samples, D, T, K, header.get("metadata", {}))
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
