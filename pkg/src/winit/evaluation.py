"""Scoring explanations: ground-truth ranking and predictor degradation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .seqdata import Dataset


class ProtocolError(ValueError):
    """Raised when an evaluation cannot be carried out as specified."""


def auroc(scores, labels) -> float:
    """Rank-sum AUROC with mid-ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ProtocolError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision: step integration of precision over recall.

    Tied scores enter the curve together as one threshold.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ProtocolError("AUPRC needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp, k = tp[last], last + 1
    recall = tp / n_pos
    precision = tp / k
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def ranking_metrics(importance, gt):
    """Per-sample ``(AUROC, AUPRC)`` of raw importance scores against a binary mask."""
    importance = np.asarray(importance, dtype=np.float64)
    gt = np.asarray(gt)
    if importance.shape != gt.shape:
        raise ValueError(f"importance shape {importance.shape} != ground truth shape {gt.shape}")
    return auroc(importance, gt), auprc(importance, gt)


@dataclass
class RankingReport:
    method: str
    auroc_mean: float
    auroc_std: float
    auprc_mean: float
    auprc_std: float
    per_sample: dict = field(default_factory=dict)
    excluded: list = field(default_factory=list)
    seeds: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def dataset_ranking_report(results, dataset: Dataset, seeds=()):
    """Average per-sample AUROC/AUPRC; samples whose mask is constant are excluded."""
    by_id = {r.sample_id: r for r in results}
    if not by_id:
        raise ProtocolError("no importance results to evaluate")
    per, excluded = {}, []
    method = next(iter(by_id.values())).method
    for sample in dataset:
        if sample.id not in by_id:
            continue
        gt = sample.gt_importance
        if gt is None or gt.min() == gt.max():
            excluded.append(sample.id)
            continue
        per[sample.id] = ranking_metrics(by_id[sample.id].aggregated, gt)
    if not per:
        raise ProtocolError(
            "no evaluable samples: ground-truth ranking needs masks with both important and "
            f"unimportant cells ({len(excluded)} samples excluded)"
        )
    a = np.array([v[0] for v in per.values()])
    p = np.array([v[1] for v in per.values()])
    return RankingReport(method, float(a.mean()), float(a.std()), float(p.mean()), float(p.std()),
                         {k: list(v) for k, v in per.items()}, excluded, list(seeds))


# ------------------------------------------------------------ masking


@dataclass(frozen=True)
class MaskSpec:
    """``top_k``: the ``value`` highest-|score| cells of each sample.
    ``top_percent``: the highest ``value`` percent of cells across the whole set."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("top_k", "top_percent"):
            raise ValueError("MaskSpec.kind must be 'top_k' or 'top_percent'")
        if self.value < 0 or (self.kind == "top_percent" and self.value > 100):
            raise ValueError("MaskSpec.value out of range")

    def label(self):
        return f"top{int(self.value)}" if self.kind == "top_k" else f"top{self.value:g}pct"


def select_cells(dataset: Dataset, results, spec: MaskSpec) -> np.ndarray:
    """Boolean mask ``(num_samples, D, T)`` of cells to remove.

    Cells are ranked by absolute importance; ties go to the earlier cell in
    (sample, feature, time) order.
    """
    by_id = {r.sample_id: r for r in results}
    missing = [s.id for s in dataset if s.id not in by_id]
    if missing:
        raise ProtocolError(f"no importance for samples {missing[:5]}")
    D, T = dataset.num_features, dataset.num_steps
    mags = np.stack([np.abs(by_id[s.id].aggregated) for s in dataset]).reshape(len(dataset), -1)
    mask = np.zeros_like(mags, dtype=bool)
    if spec.kind == "top_k":
        k = int(spec.value)
        if k > D * T:
            raise ProtocolError(f"K={k} exceeds the {D * T} cells of a sample")
        if k:
            order = np.argsort(-mags, axis=1, kind="mergesort")[:, :k]
            np.put_along_axis(mask, order, True, axis=1)
    else:
        count = int(round(spec.value / 100.0 * mags.size))
        if count:
            flat = np.argsort(-mags.ravel(), kind="mergesort")[:count]
            mask.ravel()[flat] = True
    return mask.reshape(len(dataset), D, T)


def carry_forward_mask(dataset: Dataset, results, spec: MaskSpec, fill_values=None, mask=None) -> Dataset:
    """Replace selected cells with the last unmasked value of the same feature.

    Cells at the first step take ``fill_values`` (the training-set feature
    means); they default to the dataset's own means.  Labels are untouched.
    """
    if mask is None:
        mask = select_cells(dataset, results, spec)
    fill = dataset.feature_means() if fill_values is None else np.asarray(fill_values, dtype=np.float64)
    out = []
    for sample, m in zip(dataset, mask):
        if not m.any():
            out.append(sample)
            continue
        v = sample.values.copy()
        for d, t in zip(*np.nonzero(m)):  # row-major: time ascending within a feature
            v[d, t] = fill[d] if t == 0 else v[d, t - 1]
        out.append(type(sample)(sample.id, v, sample.labels, sample.gt_importance))
    return dataset.with_samples(out)


@dataclass
class DropReport:
    method: str
    spec: str
    base_auroc: float
    masked_auroc: float
    drop: float
    masked_cells: int
    readout: str

    def to_dict(self):
        return asdict(self)


def prediction_auroc(predictor, dataset: Dataset, readout="final"):
    """AUROC of ``p(y=1)`` against labels at the final step, or pooled over all steps."""
    if dataset.num_classes != 2:
        raise ProtocolError("AUC drop is defined for binary tasks only")
    X = np.transpose(dataset.values_array(), (0, 2, 1))
    probs = predictor.forward_batch(X)[..., 1]
    labels = dataset.labels_array()
    if readout == "final":
        probs, labels = probs[:, -1], labels[:, -1]
    elif readout != "all":
        raise ValueError("readout must be 'final' or 'all'")
    try:
        return auroc(probs, labels)
    except ProtocolError:
        raise ProtocolError(
            f"readout {readout!r} sees a single class; use readout='all' for tasks whose "
            "final labels are constant"
        ) from None


def auc_drop(predictor, test: Dataset, results, spec: MaskSpec, fill_values=None, readout="final", method=None):
    mask = select_cells(test, results, spec)
    masked = carry_forward_mask(test, results, spec, fill_values, mask=mask)
    base = prediction_auroc(predictor, test, readout)
    after = prediction_auroc(predictor, masked, readout)
    name = method or (results[0].method if results else "none")
    return DropReport(name, spec.label(), base, after, base - after, int(mask.sum()), readout)


def random_importance(dataset: Dataset, seed: int):
    """Uniform random scores, a baseline for masking comparisons."""
    from .explainers import ImportanceResult

    rng = np.random.default_rng(seed)
    shape = (dataset.num_features, dataset.num_steps)
    return [ImportanceResult(s.id, "random", rng.random(shape), 0.0) for s in dataset]


def runtime_report(timings):
    """Rows ``(method, seconds, ratio_to_FIT)``; ratios only when FIT and another method are present.

    ``timings`` maps a method to seconds or to a list of results carrying ``seconds``.
    """
    secs = {}
    for m, v in timings.items():
        secs[m] = float(sum(r.seconds for r in v)) if isinstance(v, (list, tuple)) else float(v)
    ref = secs.get("FIT")
    rows = []
    for m, s in secs.items():
        ratio = s / ref if ref and len(secs) > 1 else None
        rows.append({"method": m, "seconds": s, "ratio_to_FIT": ratio})
    return rows


def write_report(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
