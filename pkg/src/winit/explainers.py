"""Importance scores from shifts in the predictive distribution.

Three generator-based methods share one engine that, for a masked feature
set and a window start ``s``, draws ``num_samples`` counterfactual completions of the
masked features over ``s, s+1, ...`` and records the predictor's averaged
distribution at every step of the window:

* **FIT**: temporal shift ``KL(p_t || p_{t-1})`` minus the shift left when
  only ``features`` is observed at ``t`` (the complement is sampled).
* **IFIT**: ``KL(p_t || p(y | x_<t, x_{S^c,t}))`` with ``features`` sampled.
* **WinIT**: telescoping differences of masked-window KLs, one score per
  (observation time, horizon), aggregated with a signed absmax.

Two occlusion baselines (FO, AFO) replace one observation at a time with a
draw from a fixed reference or from the training distribution.

Times are 0-based throughout.  Random draws for a window are taken from a
stream keyed by ``(seed..., masked-set bitmask, start)`` so any subset of
windows can be recomputed, serially or in parallel, with identical draws.
"""

from __future__ import annotations

import time
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

from .seqmodels import floor_probs, generator_sample_window

METHODS = ("FIT", "IFIT", "WinIT", "FO", "AFO")
FO_REFERENCE = (-3.0, 3.0)


class MissingGeneratorError(ValueError):
    pass


def kl_divergence(p, q):
    """``sum_k p_k log(p_k / q_k)`` along the last axis, after flooring both."""
    p = floor_probs(p)
    q = floor_probs(q)
    if p.shape[-1] != q.shape[-1]:
        raise ValueError(f"distribution lengths differ: {p.shape[-1]} vs {q.shape[-1]}")
    return np.maximum(np.sum(p * (np.log(p) - np.log(q)), axis=-1), 0.0)


class FeatureSet(tuple):
    """Sorted, duplicate-free, non-empty tuple of feature indices."""

    def __new__(cls, indices, num_features=None):
        idx = sorted({int(i) for i in np.atleast_1d(indices)})
        if not idx:
            raise ValueError("a feature set must be non-empty")
        if idx[0] < 0 or (num_features is not None and idx[-1] >= num_features):
            raise ValueError(f"feature indices {idx} out of range for D={num_features}")
        return super().__new__(cls, idx)

    def complement(self, num_features):
        return tuple(d for d in range(num_features) if d not in self)

    @property
    def bitmask(self):
        return sum(1 << d for d in self)


def _as_tuple(features, D):
    return tuple(FeatureSet(features, D))


def _key(seed):
    return [int(v) for v in np.atleast_1d(seed)]


def window_rng(seed, masked, start):
    """Random stream used for the window starting at ``start`` with ``masked`` sampled."""
    mask = sum(1 << int(d) for d in masked)
    return np.random.default_rng(_key(seed) + [mask, int(start)])


def sample_key(sample_id: str) -> int:
    return zlib.crc32(sample_id.encode("utf-8"))


# ------------------------------------------------------------ recurrent caches


def _stack_states(states):
    return np.concatenate(states, axis=0)


class _PredictorTrace:
    """True-series predictor states and distributions, computed once per sample."""

    def __init__(self, predictor, series):
        D, T = series.shape
        state = predictor.init_state(1)
        states, probs = [state], []
        for t in range(T):
            state, p = predictor.step(state, series[:, t][None])
            states.append(state)
            probs.append(p[0])
        self.states = _stack_states(states)  # state before column s sits at index s
        self.probs = np.stack(probs)


def _generator_trace(generator, series, masked):
    state = generator.init_state(masked, 1)
    states = [state]
    for t in range(series.shape[1] - 1):
        state = generator.advance(state, series[:, t][None], masked)
        states.append(state)
    return _stack_states(states)


def masked_window_predictions(predictor, generator, series, masked, steps, num_samples, seed, trace=None, starts=None):
    """Averaged counterfactual distributions for windows starting at ``starts``.

    Entry ``[i, j]`` is ``p(y_{s+j} | x_<s, x_{S^c, s..s+j})`` for ``s = starts[i]``,
    estimated from ``num_samples`` rollouts; ``valid[i, j]`` is False past the end of
    the series.

    Returns ``(probs, valid)`` with shapes ``(len(starts), steps, K)`` and
    ``(len(starts), steps)``.
    """
    series = np.asarray(series, dtype=np.float64)
    D, T = series.shape
    masked = list(masked)
    comp = [d for d in range(D) if d not in masked]
    trace = trace or _PredictorTrace(predictor, series)
    starts = np.arange(T) if starts is None else np.asarray(starts, dtype=np.int64)
    n = len(starts)
    gstates = _generator_trace(generator, series, masked)
    noise = np.stack([window_rng(seed, masked, s).standard_normal((steps, num_samples, len(masked))) for s in starts], 1)
    gstate = np.repeat(gstates[starts], num_samples, axis=0)
    pstate = np.repeat(trace.states[starts], num_samples, axis=0)
    K = trace.probs.shape[1]
    out = np.empty((n, steps, K))
    valid = (starts[:, None] + np.arange(steps)[None]) < T
    x = np.empty((n * num_samples, D))
    for j in range(steps):
        cols = np.minimum(starts + j, T - 1)
        mean, std = generator.emit(gstate, masked)
        x[:, masked] = mean + std * noise[j].reshape(n * num_samples, -1)
        if comp:
            x[:, comp] = np.repeat(series[comp][:, cols].T, num_samples, axis=0)
        pstate, probs = predictor.step(pstate, x)
        out[:, j] = floor_probs(probs.reshape(n, num_samples, K).mean(axis=1))
        if j + 1 < steps:
            gstate = generator.advance(gstate, x, masked)
    return out, valid


# ------------------------------------------------------------ scalar reference path


def _rerun_prefix(predictor, counterfactuals):
    """Distribution at the last column for each ``D x t`` counterfactual, from scratch."""
    C = np.asarray(counterfactuals)
    if hasattr(predictor, "forward_batch"):
        return predictor.forward_batch(np.transpose(C, (0, 2, 1)))[:, -1]
    state = predictor.init_state(C.shape[0])
    for t in range(C.shape[2]):
        state, p = predictor.step(state, C[:, :, t])
    return p


def partial_prediction(predictor, generator, series, features, t, n, num_samples, seed=0):
    """Monte Carlo ``p(y_t | x_{<t-n}, x_{S^c, t-n..t})`` with ``features`` sampled.

    Reference implementation: conditions the generator on the raw history and
    re-runs the predictor over each full counterfactual prefix.  The window
    is truncated at the start of the series.
    """
    series = np.asarray(series, dtype=np.float64)
    D, T = series.shape
    if not 0 <= t < T:
        raise ValueError(f"t={t} outside [0, {T})")
    if n < 0 or num_samples < 1:
        raise ValueError("need n >= 0 and num_samples >= 1")
    features = _as_tuple(features, D)
    comp = [d for d in range(D) if d not in features]
    s = max(0, t - n)
    draws = generator_sample_window(
        generator, series[:, :s], series[comp, s : t + 1], features, t - s, num_samples, window_rng(seed, features, s)
    )
    cf = np.repeat(series[None, :, : t + 1], num_samples, axis=0)
    cf[:, list(features), s : t + 1] = draws
    return floor_probs(_rerun_prefix(predictor, cf).mean(axis=0))


def _true_prediction(predictor, series, t):
    return _rerun_prefix(predictor, np.asarray(series, dtype=np.float64)[None, :, : t + 1])[0]


def fit_score(predictor, generator, series, features, t, num_samples, seed=0):
    """Temporal shift at ``t`` minus the shift unexplained by observing only ``features``."""
    series = np.asarray(series, dtype=np.float64)
    D = series.shape[0]
    features = _as_tuple(features, D)
    if t == 0:
        warnings.warn("FIT score at the first step has no predecessor; returning 0", stacklevel=2)
        return 0.0
    p_t = _true_prediction(predictor, series, t)
    p_prev = _true_prediction(predictor, series, t - 1)
    comp = FeatureSet(features).complement(D)
    partial = p_t if not comp else partial_prediction(predictor, generator, series, comp, t, 0, num_samples, seed)
    return float(kl_divergence(p_t, p_prev) - kl_divergence(p_t, partial))


def ifit_score(predictor, generator, series, features, t, num_samples, seed=0):
    """Shift explained by ``features`` at ``t``: KL from the truth to the ``features``-marginalized prediction."""
    p_t = _true_prediction(predictor, series, t)
    return float(kl_divergence(p_t, partial_prediction(predictor, generator, series, features, t, 0, num_samples, seed)))


# ------------------------------------------------------------ WinIT


@dataclass
class WindowedScores:
    """Scores indexed by observation time ``s`` and horizon ``n``.

    ``scores[s, n]`` is the contribution of the observation at ``s`` to the
    prediction at ``s + n`` (``s + n + 1`` under the legacy convention).
    """

    scores: np.ndarray
    valid: np.ndarray
    window: int
    features: tuple
    legacy_kl0_zero: bool = False

    def prediction_time(self, s, n):
        return s + n + (1 if self.legacy_kl0_zero else 0)


def winit_windowed_scores(predictor, generator, series, features, window, num_samples, seed=0, legacy_kl0_zero=False, trace=None):
    """Windowed contributions ``C(s, n)`` for feature set ``features``.

    ``C(s, n) = KL(p_t || q[s..t]) - KL(p_t || q[s+1..t])`` for ``t = s + n``,
    where ``q[a..t]`` is the prediction at ``t`` with ``features`` sampled over
    ``a..t`` and ``q[t+1..t]`` is the true prediction.  The contributions
    for a fixed ``t`` telescope to ``KL(p_t || q[t-window+1..t])``.

    With ``legacy_kl0_zero`` the horizons run over ``1..window`` and the first
    difference is taken against zero, as in the literal loop with
    ``KL_0 = 0``.
    """
    if window < 1 or num_samples < 1:
        raise ValueError("need window >= 1 and num_samples >= 1")
    series = np.asarray(series, dtype=np.float64)
    D, T = series.shape
    features = _as_tuple(features, D)
    trace = trace or _PredictorTrace(predictor, series)
    lag = 1 if legacy_kl0_zero else 0
    steps = window + lag
    probs, valid = masked_window_predictions(predictor, generator, series, features, steps, num_samples, seed, trace)
    # kl[a, j]: mask a..a+j, prediction at a+j
    p_true = trace.probs[np.minimum(np.arange(T)[:, None] + np.arange(steps)[None], T - 1)]
    kl = np.where(valid, kl_divergence(p_true, probs), 0.0)
    inner = np.zeros_like(kl)
    inner[:-1, 1:] = kl[1:, :-1]  # mask s+1..s+j, prediction at s+j
    contrib = kl - inner
    scores = contrib[:, lag:]
    if legacy_kl0_zero:
        scores = scores.copy()
        scores[:, 0] = kl[:, 1]
    ok = valid[:, lag:]
    return WindowedScores(np.where(ok, scores, 0.0), ok, window, features, legacy_kl0_zero)


def winit_aggregate(w: WindowedScores) -> np.ndarray:
    """Signed absmax over valid horizons; ties go to the smallest horizon."""
    mags = np.where(w.valid, np.abs(w.scores), -1.0)
    best = np.argmax(mags, axis=1)
    picked = np.take_along_axis(w.scores, best[:, None], axis=1)[:, 0]
    return np.where(w.valid.any(axis=1), picked, 0.0)


# ------------------------------------------------------------ per-sample drivers


@dataclass
class ExplainConfig:
    window: int = 8
    samples: int = 10
    seed: int = 0
    legacy_kl0_zero: bool = False


@dataclass
class ImportanceResult:
    sample_id: str
    method: str
    aggregated: np.ndarray
    seconds: float
    raw: dict = field(default_factory=dict)


def _fit_matrix(predictor, generator, series, num_samples, seed, trace):
    D, T = series.shape
    out = np.zeros((D, T))
    temporal = np.zeros(T)
    temporal[1:] = kl_divergence(trace.probs[1:], trace.probs[:-1])
    for d in range(D):
        comp = [c for c in range(D) if c != d]
        if not comp:
            out[d, 1:] = temporal[1:]
            continue
        probs, _ = masked_window_predictions(predictor, generator, series, comp, 1, num_samples, seed, trace)
        out[d, 1:] = temporal[1:] - kl_divergence(trace.probs, probs[:, 0])[1:]
    return out


def _occlusion_matrix(predictor, series, num_samples, rng, draw, trace):
    D, T = series.shape
    out = np.zeros((D, T))
    for d in range(D):
        pstate = np.repeat(trace.states[:T], num_samples, axis=0)
        x = np.repeat(series.T, num_samples, axis=0)
        x[:, d] = draw(d, rng, T * num_samples)
        _, probs = predictor.step(pstate, x)
        change = 0.5 * np.abs(probs.reshape(T, num_samples, -1) - trace.probs[:, None]).sum(-1)
        out[d] = change.mean(axis=1)
    return out


def explain_sample(method, predictor, sample, generator=None, config=None, train_values=None):
    """Importance matrix ``(D, T)`` for one sample with singleton feature sets.

    ``generator`` is required for FIT, IFIT and WinIT.  AFO needs
    ``train_values``, an array ``(num_train, D, T)`` (or ``(D, n)``) of
    training observations to bootstrap from.
    """
    config = config or ExplainConfig()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
    if method in ("FIT", "IFIT", "WinIT") and generator is None:
        raise MissingGeneratorError(f"{method} needs a trained generator")
    series = sample.values
    D, T = series.shape
    key = [config.seed, sample_key(sample.id)]
    num_samples = config.samples
    t0 = time.perf_counter()
    trace = _PredictorTrace(predictor, series)
    raw = {}
    if method == "FIT":
        agg = _fit_matrix(predictor, generator, series, num_samples, key, trace)
    elif method in ("IFIT", "WinIT"):
        window = 1 if method == "IFIT" else config.window
        legacy = config.legacy_kl0_zero and method == "WinIT"
        agg = np.zeros((D, T))
        for d in range(D):
            w = winit_windowed_scores(predictor, generator, series, [d], window, num_samples, key, legacy, trace)
            agg[d] = winit_aggregate(w)
            if method == "WinIT":
                raw[d] = w
    elif method == "FO":
        lo, hi = FO_REFERENCE
        rng = np.random.default_rng(key + [0xF0])
        agg = _occlusion_matrix(predictor, series, num_samples, rng, lambda d, r, m: r.uniform(lo, hi, m), trace)
    else:
        if train_values is None:
            raise ValueError("AFO needs the training-set values to bootstrap from")
        tv = np.asarray(train_values, dtype=np.float64)
        pool = np.moveaxis(tv, -2, 0).reshape(D, -1) if tv.ndim == 3 else tv.reshape(D, -1)
        rng = np.random.default_rng(key + [0xAF0])
        agg = _occlusion_matrix(predictor, series, num_samples, rng, lambda d, r, m: r.choice(pool[d], m), trace)
    return ImportanceResult(sample.id, method, agg, time.perf_counter() - t0, raw)


def explain_dataset(method, predictor, dataset, generator=None, config=None, train_values=None):
    return [explain_sample(method, predictor, s, generator, config, train_values) for s in dataset]


# ------------------------------------------------------------ importance files

IMPORTANCE_FORMAT = "winit-importance 1"
IMPORTANCE_COLUMNS = ("sample_id", "method", "feature", "time", "score", "horizon_scores")


def _fmt(v):
    return repr(float(v)) if np.isfinite(v) else "nan"


def write_importance(path, results, header=None):
    """Tab-separated records, one per (sample, feature, time).

    ``horizon_scores`` holds the comma-separated windowed scores ``C(s, 0..window-1)``
    (``nan`` for horizons running past the end) when the method produces them.
    """
    lines = [f"# {IMPORTANCE_FORMAT}"]
    for k, v in sorted((header or {}).items()):
        lines.append(f"# {k}={v}")
    lines.append("\t".join(IMPORTANCE_COLUMNS))
    for r in results:
        D, T = r.aggregated.shape
        for d in range(D):
            w = r.raw.get(d)
            for t in range(T):
                hz = ""
                if w is not None:
                    hz = ",".join(_fmt(v) if ok else "nan" for v, ok in zip(w.scores[t], w.valid[t]))
                lines.append(f"{r.sample_id}\t{r.method}\t{d}\t{t}\t{_fmt(r.aggregated[d, t])}\t{hz}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_importance(path, num_features=None, num_steps=None):
    """Read an importance file; returns ``(results, header)``.  Seconds are not stored (0.0)."""
    header, cells, horizons = {}, {}, {}
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != f"# {IMPORTANCE_FORMAT}":
            raise ValueError(f"{path}:1: not a {IMPORTANCE_FORMAT} file")
        lineno = 1
        for line in fh:
            lineno += 1
            line = line.rstrip("\n")
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                header[k] = v
                continue
            parts = line.split("\t")
            if tuple(parts) == IMPORTANCE_COLUMNS:
                continue
            if len(parts) != len(IMPORTANCE_COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(IMPORTANCE_COLUMNS)} columns")
            sid, method, d, t, score, hz = parts
            cells.setdefault((sid, method), {})[(int(d), int(t))] = float(score)
            if hz:
                horizons.setdefault((sid, method), {})[(int(d), int(t))] = [float(v) for v in hz.split(",")]
    results = []
    for (sid, method), vals in cells.items():
        D = num_features or 1 + max(d for d, _ in vals)
        T = num_steps or 1 + max(t for _, t in vals)
        agg = np.zeros((D, T))
        for (d, t), v in vals.items():
            agg[d, t] = v
        raw = {}
        for (d, t), hs in horizons.get((sid, method), {}).items():
            if d not in raw:
                window = len(hs)
                raw[d] = WindowedScores(np.zeros((T, window)), np.zeros((T, window), dtype=bool), window, (d,))
            row = np.array(hs)
            raw[d].valid[t] = np.isfinite(row)
            raw[d].scores[t] = np.nan_to_num(row)
        results.append(ImportanceResult(sid, method, agg, 0.0, raw))
    return results, header
