"""
Importance scores on a hand-built classifier
============================================

A tiny recurrent classifier whose state is the running logit
``w . sum(x)``, paired with a generator that draws unit Gaussians.
Both are plain objects implementing the ``init_state`` / ``step`` and
``init_state`` / ``emit`` / ``advance`` protocols, so no training is needed.
"""

import numpy as np

from winit import explainers as ex
from winit import nn
from winit import seqdata as sd


class SumLogistic:
    num_classes = 2

    def __init__(self, weights, bias=0.0):
        self.weights = np.asarray(weights, dtype=float)
        self.bias = bias
        self.input_size = self.weights.size

    def init_state(self, batch):
        return np.full((batch, 1), self.bias)

    def step(self, state, x):
        state = state + (x @ self.weights)[:, None]
        p1 = nn.sigmoid(state[:, 0])
        return state, np.stack([1 - p1, p1], axis=1)


class UnitGaussian:
    def __init__(self, num_features):
        self.input_size = num_features

    def init_state(self, features, batch):
        return np.zeros((batch, 1))

    def advance(self, state, x, features):
        return state

    def emit(self, state, features):
        shape = (state.shape[0], len(list(features)))
        return np.zeros(shape), np.ones(shape)


predictor = SumLogistic([1.5, 0.0])
generator = UnitGaussian(2)
series = np.random.default_rng(8).normal(size=(2, 7))
sample = sd.TimeSeriesSample("toy", series, np.zeros(7, dtype=int))

# feature 1 has zero weight: IFIT and WinIT give it exactly zero, while FIT
# still moves because it resamples the other feature
for method in ("FIT", "IFIT", "WinIT"):
    res = ex.explain_sample(method, predictor, sample, generator, ex.ExplainConfig(window=3, samples=200))
    print(method)
    print(np.round(res.aggregated, 3))

# the windowed contributions for one observation time telescope to a masked-window KL
w = ex.winit_windowed_scores(predictor, generator, series, [0], window=3, num_samples=200)
print("C(s, n) for feature 0:")
print(np.round(w.scores, 3))
