"""
Spike and Delayed Spike datasets
================================

Each feature is a NARMA(10) series; feature 0 receives random spikes and the
label switches to 1 once the first of them has been seen.
"""

import numpy as np

from winit import seqdata as sd

# a zero-input NARMA series settles towards its fixed point
print(sd.narma_sequence(10, 6, None, inputs=np.zeros(6)))

# a short Spike dataset: the ground-truth mask marks the first spike of feature 0
ds = sd.make_spike_dataset(sd.SpikeConfig(num_samples=4, num_steps=30, seed=7))
for s in ds:
    d, t = np.argwhere(s.gt_importance)[0]
    print(s.id, "first spike at", t, "label turns on at", int(np.argmax(s.labels)))

# with a delay the label lags the spike by two steps
delayed = sd.make_spike_dataset(sd.delayed_spike_config(num_samples=4, num_steps=30, seed=7))
for s in delayed:
    t = int(np.argmax(s.gt_importance[0]))
    print(s.id, "first spike at", t, "label turns on at", int(np.argmax(s.labels)))

# datasets round-trip through a line-oriented JSON file
sd.write_dataset(delayed, "delayed.jsonl")
assert sd.read_dataset("delayed.jsonl") == delayed
