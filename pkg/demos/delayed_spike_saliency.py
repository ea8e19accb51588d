"""
Saliency maps on Delayed Spike
==============================

Train a small predictor and generators, explain one test sample with FIT
and WinIT, and write SVG, PPM and CSV renderings next to this script.
Runs in about ten seconds.
"""

import numpy as np

from winit import explainers as ex
from winit import render
from winit import seqdata as sd
from winit import seqmodels as sm

data = sd.make_spike_dataset(sd.delayed_spike_config(num_samples=600, num_steps=40, seed=1))
train, test = sd.split_dataset(data, 0.9, 2)
fit_part, valid = sd.split_dataset(train, 0.9, 3)

predictor, report = sm.train_predictor(fit_part, valid, sm.TrainConfig(epochs=25, hidden_size=32, learning_rate=3e-3, seed=4))
print("validation accuracy", round(report.final_valid_accuracy, 4))
joint, _ = sm.train_generator(train, sm.TrainConfig(epochs=5, hidden_size=16, seed=5), "joint")
per_feature, _ = sm.train_generator(train, sm.TrainConfig(epochs=5, hidden_size=16, seed=6), "per-feature")

sample = test[0]
cfg = ex.ExplainConfig(window=8, samples=10, seed=11)
maps = {
    "FIT": ex.explain_sample("FIT", predictor, sample, joint, cfg).aggregated,
    "WinIT-N8": ex.explain_sample("WinIT", predictor, sample, per_feature, cfg).aggregated,
}
spike = int(np.argmax(sample.gt_importance[0]))
for name, m in maps.items():
    print(name, "score at the spike", round(float(m[0, spike]), 4), "max elsewhere",
          round(float(np.delete(np.abs(m).ravel(), spike).max()), 4))

for path in render.render_sample(sample, maps, "."):
    print("wrote", path)
