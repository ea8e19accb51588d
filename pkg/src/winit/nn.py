"""Numpy GRU layer with hand-written backpropagation through time, plus Adam.

Gate layout follows the usual ``[reset, update, candidate]`` ordering with
the reset gate applied to the hidden projection of the candidate.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def orthogonal(rng, n, m):
    a = rng.standard_normal((max(n, m), min(n, m)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if n >= m else q.T


def init_gru(rng, input_size, hidden_size):
    """Uniform fan-in input weights, orthogonal recurrent blocks, zero biases."""
    bound = 1.0 / np.sqrt(max(input_size, 1))
    H = hidden_size
    return {
        "W": rng.uniform(-bound, bound, size=(input_size, 3 * H)),
        "U": np.concatenate([orthogonal(rng, H, H) for _ in range(3)], axis=1),
        "b": np.zeros(3 * H),
        "bh": np.zeros(H),
    }


def init_dense(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)


def gru_step(p, x, h):
    """One GRU update for a batch: ``x`` is ``(B, D)``, ``h`` is ``(B, H)``."""
    H = h.shape[-1]
    gx = x @ p["W"] + p["b"]
    gh = h @ p["U"]
    r = sigmoid(gx[:, :H] + gh[:, :H])
    z = sigmoid(gx[:, H : 2 * H] + gh[:, H : 2 * H])
    n = np.tanh(gx[:, 2 * H :] + r * (gh[:, 2 * H :] + p["bh"]))
    return (1.0 - z) * n + z * h


def gru_forward(p, X, h0):
    """Run over ``X`` of shape ``(B, T, D)``; returns states ``(B, T, H)`` and a cache."""
    B, T, D = X.shape
    H = h0.shape[-1]
    gx_all = (X.reshape(B * T, D) @ p["W"] + p["b"]).reshape(B, T, 3 * H)
    U, bh = p["U"], p["bh"]
    hs = np.empty((B, T, H))
    cache = []
    h = h0
    for t in range(T):
        gx = gx_all[:, t]
        gh = h @ U
        r = sigmoid(gx[:, :H] + gh[:, :H])
        z = sigmoid(gx[:, H : 2 * H] + gh[:, H : 2 * H])
        ghn = gh[:, 2 * H :] + bh
        n = np.tanh(gx[:, 2 * H :] + r * ghn)
        h_new = (1.0 - z) * n + z * h
        cache.append((h, r, z, n, ghn))
        hs[:, t] = h_new
        h = h_new
    return hs, (X, cache)


def gru_backward(p, dhs, cache):
    """Gradients of the GRU parameters and of ``h0`` given ``dL/dh_t`` for every step."""
    X, steps = cache
    B, T, D = X.shape
    H = dhs.shape[-1]
    U = p["U"]
    dgx_all = np.empty((B, T, 3 * H))
    dU = np.zeros_like(U)
    dbh = np.zeros(H)
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h_prev, r, z, n, ghn = steps[t]
        dh = dh + dhs[:, t]
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dan = dn * (1.0 - n * n)
        dar = dan * ghn * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dghn = dan * r
        dgx_all[:, t, :H] = dar
        dgx_all[:, t, H : 2 * H] = daz
        dgx_all[:, t, 2 * H :] = dan
        dgh = np.concatenate([dar, daz, dghn], axis=1)
        dU += h_prev.T @ dgh
        dbh += dghn.sum(axis=0)
        dh = dh * z + dgh @ U.T
    flat = dgx_all.reshape(B * T, 3 * H)
    grads = {
        "W": X.reshape(B * T, D).T @ flat,
        "U": dU,
        "b": flat.sum(axis=0),
        "bh": dbh,
    }
    return grads, dh


class Adam:
    """Adam with global gradient-norm clipping, operating on a flat dict of arrays."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=5.0):
        self.lr, self.beta1, self.beta2, self.eps, self.clip_norm = lr, beta1, beta2, eps, clip_norm
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        scale = self.clip_norm / norm if self.clip_norm and norm > self.clip_norm else 1.0
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in sorted(params):
            g = grads[k] * scale
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return norm
