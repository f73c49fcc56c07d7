# coding: utf-8

# # Features from raw accelerometry
#
# A synthetic subject is generated, then the wrist stream is reduced to the
# sequences the network sees.  Window SD tracks movement intensity; the window
# mean mostly tracks sensor orientation.

# In[1]:

import numpy as np

from paee.preprocess import AggregationFn, resample_stream
from paee.sequencing import SequenceSpec, build_training_set, derive_sr
from paee.synth import SynthConfig, generate_subjects

subjects = generate_subjects(SynthConfig(n_subjects=4, duration_sec=900, outdoor_sec=300, seed=1))
s = subjects[0]
rec = s.recording
print(rec.id, rec.profile)
print("breaths:", len(rec.breaths), " wrist samples:", len(rec.wrist), " duration (s):", round(rec.end, 1))


# Sampling rate follows from sequence size and window length.

# In[2]:

for seq, win in [(50, 120.0), (480, 240.0), (4, 60.0)]:
    print(f"seq {seq:>3} over {win:>5.0f} s -> {derive_sr(seq, win):.4f} Hz")


# 10 s windows of the wrist stream, aggregated two ways, against the true intensity.

# In[3]:

n = int(rec.end // 10)
inten = s.intensity[: n * 10].reshape(n, 10).mean(axis=1)
for fn in (AggregationFn.SD, AggregationFn.MEAN):
    v = resample_stream(rec.wrist, 0.1, fn, 0.0, n * 10.0)
    r = [abs(np.corrcoef(v[:, k], inten)[0, 1]) for k in range(3)]
    print(f"{fn.value:>4}: |r| with intensity per axis", np.round(r, 2))


# Training examples: one per 10 s target bin, each a (seq, 6) wrist+ankle block.

# In[4]:

spec = SequenceSpec(50, 120.0, AggregationFn.SD, use_static=True)
examples = build_training_set(rec, spec)
e = examples[0]
print(len(examples), "examples; first at t =", e.t, "s, accel", e.accel.shape, "target", round(e.target, 3), "kcal/min")
print("static features:", e.static)
