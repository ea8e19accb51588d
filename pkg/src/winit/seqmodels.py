"""Recurrent predictor (black-box classifier) and counterfactual generator.

Both models are single-layer GRUs written against :mod:`winit.nn`.  The
predictor emits a categorical distribution at every step; the generator
emits a diagonal Gaussian over the *next* observation given the history.

State protocol
--------------
Explainers talk to models only through a small recurrent interface, which
test doubles can implement as well:

``predictor.init_state(batch)`` / ``predictor.step(state, x) -> (state, probs)``

``generator.init_state(features, batch)``,
``generator.emit(state, features) -> (mean, std)`` and
``generator.advance(state, x, features) -> state``

States are arrays with a leading batch axis.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn

PROB_FLOOR = 1e-12
LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
PREDICTOR_VERSION = "winit-gru-predictor/1"
GENERATOR_VERSION = "winit-gru-generator/1"
MODES = ("per-feature", "joint")

_MAGIC = b"WINITCKP"
_CKPT_FORMAT = 1
_KINDS = {1: "predictor", 2: "generator"}


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass


def floor_probs(p):
    """Floor at ``PROB_FLOOR`` and renormalize along the last axis."""
    p = np.maximum(np.asarray(p, dtype=np.float64), PROB_FLOOR)
    return p / p.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class PredictiveDistribution:
    probabilities: np.ndarray

    def __post_init__(self):
        p = floor_probs(self.probabilities)
        if p.ndim != 1:
            raise ValueError("a predictive distribution is a single probability vector")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    def __array__(self, dtype=None, copy=None):
        return self.probabilities if dtype is None else self.probabilities.astype(dtype)

    def __len__(self):
        return self.probabilities.size


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 50
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    hidden_size: int = 64
    seed: int = 0
    patience: int = 8

    def __post_init__(self):
        for name in ("epochs", "batch_size", "learning_rate", "clip_norm", "hidden_size", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps > 0):
            raise ValueError("TrainConfig optimizer hyperparameters out of range")


@dataclass
class TrainingReport:
    epoch_losses: list = field(default_factory=list)
    valid_losses: list = field(default_factory=list)
    valid_accuracy: list = field(default_factory=list)
    best_epoch: int = -1
    seconds: float = 0.0

    @property
    def final_valid_accuracy(self):
        if not self.valid_accuracy:
            return None
        return self.valid_accuracy[self.best_epoch]

    def to_dict(self):
        d = asdict(self)
        d["final_valid_accuracy"] = self.final_valid_accuracy
        return d


# ---------------------------------------------------------------- predictor


class PredictorModel:
    """GRU classifier estimating ``p(y_t | x_1..x_t)`` at every step."""

    kind = "predictor"

    def __init__(self, params, input_size, hidden_size, num_classes, version=PREDICTOR_VERSION):
        self.params = params
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        self.num_classes = int(num_classes)
        self.version = version

    @classmethod
    def initialize(cls, input_size, hidden_size, num_classes, rng):
        params = nn.init_gru(rng, input_size, hidden_size)
        params["V"], params["c"] = nn.init_dense(rng, hidden_size, num_classes)
        return cls(params, input_size, hidden_size, num_classes)

    def hyperparameters(self):
        return {
            "input_size": self.input_size,
            "hidden_size": self.hidden_size,
            "num_classes": self.num_classes,
        }

    def init_state(self, batch):
        return np.zeros((batch, self.hidden_size))

    def step(self, state, x):
        h = nn.gru_step(self.params, x, state)
        return h, floor_probs(nn.softmax(h @ self.params["V"] + self.params["c"]))

    def forward_batch(self, X):
        """Distributions for ``X`` of shape ``(B, T, D)``; returns ``(B, T, K)``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[2] != self.input_size:
            raise ValueError(f"expected (B, T, {self.input_size}) input, got {X.shape}")
        hs, _ = nn.gru_forward(self.params, X, self.init_state(X.shape[0]))
        return floor_probs(nn.softmax(hs @ self.params["V"] + self.params["c"]))


def predictor_forward(model, series) -> np.ndarray:
    """Per-step predictive distributions for one ``D x t`` series.

    Row ``s`` of the returned ``(t, K)`` array is the distribution after
    observing columns ``0..s``.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2 or series.shape[1] < 1:
        raise ValueError("series must be a D x t matrix with t >= 1")
    if hasattr(model, "forward_batch"):
        return model.forward_batch(series.T[None])[0]
    state = model.init_state(1)
    out = []
    for s in range(series.shape[1]):
        state, p = model.step(state, series[:, s][None])
        out.append(p[0])
    return np.stack(out)


def predictor_loss(params, X, Y):
    """Mean per-step cross-entropy and its gradients."""
    B, T, _ = X.shape
    H = params["U"].shape[0]
    hs, cache = nn.gru_forward(params, X, np.zeros((B, H)))
    logits = hs @ params["V"] + params["c"]
    probs = nn.softmax(logits)
    picked = np.take_along_axis(probs, Y[..., None], axis=-1)[..., 0]
    loss = -np.mean(np.log(np.maximum(picked, 1e-300)))
    dlogits = probs.copy()
    np.put_along_axis(dlogits, Y[..., None], np.take_along_axis(dlogits, Y[..., None], -1) - 1.0, -1)
    dlogits /= B * T
    grads, _ = nn.gru_backward(params, dlogits @ params["V"].T, cache)
    grads["V"] = hs.reshape(B * T, H).T @ dlogits.reshape(B * T, -1)
    grads["c"] = dlogits.sum(axis=(0, 1))
    return loss, grads


# ---------------------------------------------------------------- generator


class GeneratorModel:
    """Recurrent diagonal-Gaussian forecaster of the next observation.

    ``mode="joint"`` uses one network emitting every feature; ``mode="per-feature"``
    keeps an independent network per feature, each reading the full history,
    so sampling a single feature only runs that feature's network.
    """

    kind = "generator"

    def __init__(self, networks, input_size, hidden_size, mode, version=GENERATOR_VERSION):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.networks = networks
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        self.mode = mode
        self.version = version

    @classmethod
    def initialize(cls, input_size, hidden_size, mode, rng):
        n_out = [input_size] if mode == "joint" else [1] * input_size
        nets = []
        for m in n_out:
            p = nn.init_gru(rng, input_size, hidden_size)
            p["V"], p["c"] = nn.init_dense(rng, hidden_size, 2 * m)
            p["h0"] = np.zeros(hidden_size)
            nets.append(p)
        return cls(nets, input_size, hidden_size, mode)

    @property
    def params(self):
        return {f"net{i}.{k}": v for i, net in enumerate(self.networks) for k, v in net.items()}

    def hyperparameters(self):
        return {"input_size": self.input_size, "hidden_size": self.hidden_size, "mode": self.mode}

    def output_features(self, net_index):
        return list(range(self.input_size)) if self.mode == "joint" else [net_index]

    def _nets(self, features):
        features = list(features)
        if any(f < 0 or f >= self.input_size for f in features):
            raise ValueError(f"feature indices out of range for D={self.input_size}")
        return [0] if self.mode == "joint" else features

    def init_state(self, features, batch):
        nets = self._nets(features)
        return np.stack([np.broadcast_to(self.networks[i]["h0"], (batch, self.hidden_size)) for i in nets], 1)

    def advance(self, state, x, features):
        nets = self._nets(features)
        return np.stack([nn.gru_step(self.networks[i], x, state[:, j]) for j, i in enumerate(nets)], 1)

    def emit(self, state, features):
        """Mean and standard deviation of the next observation of ``features``."""
        features = list(features)
        nets = self._nets(features)
        if self.mode == "joint":
            out = state[:, 0] @ self.networks[0]["V"] + self.networks[0]["c"]
            D = self.input_size
            mean, raw = out[:, features], out[:, [D + f for f in features]]
        else:
            outs = [state[:, j] @ self.networks[i]["V"] + self.networks[i]["c"] for j, i in enumerate(nets)]
            mean = np.stack([o[:, 0] for o in outs], 1)
            raw = np.stack([o[:, 1] for o in outs], 1)
        return mean, np.exp(0.5 * np.clip(raw, LOGVAR_MIN, LOGVAR_MAX))

    def emissions(self, X):
        """One-step-ahead ``(mean, logvar)`` for every column of ``X`` ``(B, T, D)``."""
        means, logvars = [], []
        for i, net in enumerate(self.networks):
            mu, lv, _ = _generator_emissions(net, X)
            means.append(mu)
            logvars.append(lv)
        return np.concatenate(means, axis=-1), np.concatenate(logvars, axis=-1)


def _generator_emissions(p, X):
    B, T, D = X.shape
    H = p["U"].shape[0]
    h0 = np.broadcast_to(p["h0"], (B, H))
    hs, cache = nn.gru_forward(p, X[:, : T - 1], h0)
    pre = np.concatenate([h0[:, None], hs], axis=1)
    out = pre @ p["V"] + p["c"]
    m = out.shape[-1] // 2
    return out[..., :m], np.clip(out[..., m:], LOGVAR_MIN, LOGVAR_MAX), (pre, cache, out)


def generator_loss(p, X, features):
    """Mean one-step Gaussian NLL of ``X[..., features]`` and gradients for one network."""
    B, T, _ = X.shape
    H = p["U"].shape[0]
    mean, logvar, (pre, cache, out) = _generator_emissions(p, X)
    target = X[..., features]
    m = len(features)
    inv = np.exp(-logvar)
    resid = target - mean
    n = B * T * m
    loss = 0.5 * np.mean(logvar + resid * resid * inv + np.log(2 * np.pi))
    dmean = -resid * inv / n
    raw = out[..., m:]
    inside = (raw >= LOGVAR_MIN) & (raw <= LOGVAR_MAX)
    dlogvar = 0.5 * (1.0 - resid * resid * inv) / n * inside
    dout = np.concatenate([dmean, dlogvar], axis=-1)
    dpre = dout @ p["V"].T
    grads, dh0 = nn.gru_backward(p, dpre[:, 1:], cache)
    grads["h0"] = dpre[:, 0].sum(axis=0) + dh0.sum(axis=0)
    grads["V"] = pre.reshape(B * T, H).T @ dout.reshape(B * T, -1)
    grads["c"] = dout.sum(axis=(0, 1))
    return loss, grads


# ---------------------------------------------------------------- training


def _arrays(dataset):
    X = np.transpose(dataset.values_array(), (0, 2, 1)).copy()
    return X, dataset.labels_array()


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _check_finite(loss, epoch, what):
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"{what} training diverged at epoch {epoch}: loss={loss!r}; "
            "lower the learning rate or the gradient clip norm"
        )


def train_predictor(train, valid, config: TrainConfig):
    """Fit a GRU classifier by minimizing mean per-step cross-entropy.

    Early stopping watches the validation loss; the parameters of the best
    epoch are returned.  Deterministic for a fixed ``config.seed``.
    """
    if len(train) == 0 or len(valid) == 0:
        raise ValueError("train and valid datasets must be non-empty")
    if (train.num_features, train.num_steps) != (valid.num_features, valid.num_steps):
        raise ValueError("train and valid datasets disagree on shape")
    rng = np.random.default_rng(config.seed)
    model = PredictorModel.initialize(train.num_features, config.hidden_size, train.num_classes, rng)
    X, Y = _arrays(train)
    Xv, Yv = _arrays(valid)
    opt = nn.Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.eps, config.clip_norm)
    report = TrainingReport()
    best, best_loss, stale = None, np.inf, 0
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        total = 0.0
        for idx in _batches(len(X), config.batch_size, rng):
            loss, grads = predictor_loss(model.params, X[idx], Y[idx])
            _check_finite(loss, epoch, "predictor")
            opt.step(model.params, grads)
            total += loss * len(idx)
        report.epoch_losses.append(total / len(X))
        probs = model.forward_batch(Xv)
        picked = np.take_along_axis(probs, Yv[..., None], -1)[..., 0]
        vloss = float(-np.mean(np.log(picked)))
        report.valid_losses.append(vloss)
        report.valid_accuracy.append(float(np.mean(probs.argmax(-1) == Yv)))
        if vloss < best_loss:
            best_loss, stale, report.best_epoch = vloss, 0, epoch
            best = {k: v.copy() for k, v in model.params.items()}
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.params = best
    report.seconds = time.perf_counter() - t0
    return model, report


def train_generator(train, config: TrainConfig, mode="per-feature"):
    """Fit the one-step-ahead Gaussian forecaster by maximum likelihood.

    Each network of the model is trained on its own output features.  Early
    stopping watches the training loss.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if len(train) == 0:
        raise ValueError("train dataset must be non-empty")
    if train.num_steps < 2:
        raise ValueError("generator training needs at least two time steps")
    rng = np.random.default_rng(config.seed)
    model = GeneratorModel.initialize(train.num_features, config.hidden_size, mode, rng)
    X, _ = _arrays(train)
    report = TrainingReport()
    t0 = time.perf_counter()
    net_losses = []
    for i, net in enumerate(model.networks):
        feats = model.output_features(i)
        opt = nn.Adam(net, config.learning_rate, config.beta1, config.beta2, config.eps, config.clip_norm)
        best, best_loss, stale, losses = None, np.inf, 0, []
        for epoch in range(config.epochs):
            total = 0.0
            for idx in _batches(len(X), config.batch_size, rng):
                loss, grads = generator_loss(net, X[idx], feats)
                _check_finite(loss, epoch, "generator")
                opt.step(net, grads)
                total += loss * len(idx)
            losses.append(total / len(X))
            if losses[-1] < best_loss - 1e-6:
                best_loss, stale = losses[-1], 0
                best = {k: v.copy() for k, v in net.items()}
            else:
                stale += 1
                if stale >= config.patience:
                    break
        net.update(best)
        net_losses.append(losses)
    n_epochs = max(len(l) for l in net_losses)
    report.epoch_losses = [
        float(np.mean([l[min(e, len(l) - 1)] for l in net_losses])) for e in range(n_epochs)
    ]
    report.best_epoch = int(np.argmin(report.epoch_losses))
    report.seconds = time.perf_counter() - t0
    return model, report


def generator_nll(model, dataset):
    """Mean one-step Gaussian NLL of ``dataset`` under ``model``."""
    X, _ = _arrays(dataset)
    mean, logvar = model.emissions(X)
    order = np.concatenate([model.output_features(i) for i in range(len(model.networks))])
    target = X[..., order]
    return float(0.5 * np.mean(logvar + (target - mean) ** 2 * np.exp(-logvar) + np.log(2 * np.pi)))


def generator_sample_window(model, history, observed_complement, masked_features, horizon, count, rng):
    """Sample ``count`` completions of the masked features over a window.

    The recurrent state is conditioned on ``history`` (``D x h``, possibly
    empty).  The window spans ``horizon + 1`` steps: at each one the masked
    features are drawn from the emitted Gaussians, the rest come from
    ``observed_complement`` (``num_unmasked x (horizon+1)``), and the merged column is
    fed forward.  With a diagonal Gaussian the draw for the masked features
    does not depend on the complement values of the same step.

    Returns an array of shape ``(count, num_masked, horizon + 1)``.
    """
    D = model.input_size
    masked = sorted(set(int(i) for i in masked_features))
    if not masked:
        raise ValueError("masked_features must be non-empty")
    if count < 1 or horizon < 0:
        raise ValueError("count must be >= 1 and horizon >= 0")
    comp = [d for d in range(D) if d not in masked]
    history = np.asarray(history, dtype=np.float64).reshape(D, -1)
    observed = np.asarray(observed_complement, dtype=np.float64)
    if observed.size != len(comp) * (horizon + 1):
        raise ValueError(f"observed_complement must be {len(comp)} x {horizon + 1}, got shape {observed.shape}")
    observed = observed.reshape(len(comp), horizon + 1)
    noise = rng.standard_normal((horizon + 1, count, len(masked)))
    return _rollout(model, history[None], observed[None], masked, comp, noise[:, None])[0]


def _rollout(model, history, observed, masked, comp, noise):
    """Batched window sampler.

    history ``(B, D, h)``, observed ``(B, num_unmasked, n+1)``, noise ``(n+1, B, num_samples, num_masked)``.
    Returns ``(B, num_samples, num_masked, n+1)``.
    """
    B, D, h = history.shape
    steps, _, num_samples, _ = noise.shape
    state = model.init_state(masked, B)
    for s in range(h):
        state = model.advance(state, history[:, :, s], masked)
    state = np.repeat(state, num_samples, axis=0)
    out = np.empty((B * num_samples, len(masked), steps))
    x = np.empty((B * num_samples, D))
    for j in range(steps):
        mean, std = model.emit(state, masked)
        draw = mean + std * noise[j].reshape(B * num_samples, -1)
        out[:, :, j] = draw
        x[:, masked] = draw
        x[:, comp] = np.repeat(observed[:, :, j], num_samples, axis=0)
        state = model.advance(state, x, masked)
    return out.reshape(B, num_samples, len(masked), steps)


# ---------------------------------------------------------------- checkpoints


def save_model(model, path, provenance=None):
    """Write a versioned little-endian binary checkpoint.

    ``provenance`` (e.g. the config hash) is stored in the metadata block and
    ignored on load.
    """
    kind = {v: k for k, v in _KINDS.items()}[model.kind]
    meta = {"version": model.version, "hyperparameters": model.hyperparameters()}
    if provenance:
        meta["provenance"] = provenance
    meta = json.dumps(meta, sort_keys=True)
    meta_b = meta.encode("utf-8")
    tensors = model.params
    chunks = [_MAGIC, struct.pack("<HB", _CKPT_FORMAT, kind), struct.pack("<I", len(meta_b)), meta_b]
    chunks.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"{self.path}: truncated checkpoint at offset {self.pos} while reading {what} "
                f"({n} bytes needed, {len(self.data) - self.pos} available)"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_model(path, expected_kind=None):
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    if r.take(len(_MAGIC), "magic") != _MAGIC:
        raise CheckpointError(f"{path}: not a winit checkpoint (bad magic at offset 0)")
    fmt, kind_code = r.unpack("<HB", "header")
    if fmt != _CKPT_FORMAT:
        raise IncompatibleCheckpointError(f"{path}: checkpoint format {fmt}, this build reads {_CKPT_FORMAT}")
    kind = _KINDS.get(kind_code)
    if kind is None:
        raise CheckpointError(f"{path}: unknown model kind {kind_code} at offset {len(_MAGIC) + 2}")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"{path}: expected a {expected_kind} checkpoint, found {kind}")
    (meta_len,) = r.unpack("<I", "metadata length")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt metadata block") from None
    expected_version = PREDICTOR_VERSION if kind == "predictor" else GENERATOR_VERSION
    if meta.get("version") != expected_version:
        raise IncompatibleCheckpointError(
            f"{path}: model version {meta.get('version')!r} is incompatible with {expected_version!r}"
        )
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "tensor name length")
        name = r.take(nlen, "tensor name").decode("utf-8")
        (ndim,) = r.unpack("<B", f"rank of {name}")
        shape = r.unpack(f"<{ndim}I", f"shape of {name}")
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(r.take(8 * size, f"data of {name}"), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes at offset {r.pos}")
    hp = meta["hyperparameters"]
    if kind == "predictor":
        return PredictorModel(tensors, hp["input_size"], hp["hidden_size"], hp["num_classes"], meta["version"])
    n_nets = 1 if hp["mode"] == "joint" else hp["input_size"]
    nets = [{k.split(".", 1)[1]: v for k, v in tensors.items() if k.startswith(f"net{i}.")} for i in range(n_nets)]
    return GeneratorModel(nets, hp["input_size"], hp["hidden_size"], hp["mode"], meta["version"])
