"""File formats and the polyphase resampler.

Round-trips a waveform through WAV, visual features through the feature
binary, model weights through the checkpoint format, and audio through a
rational-factor resample.
"""

import os
import tempfile

import numpy as np

from mmsep.audio import Waveform, read_wav, resample, write_wav
from mmsep.checkpoint import load_checkpoint, save_checkpoint
from mmsep.conditioning import load_precomputed_features, write_features
from mmsep.metrics import si_sdr

tmp = tempfile.mkdtemp()
rng = np.random.default_rng(0)

# WAV: PCM16 by default; float32 keeps ~24-bit precision (err ~1e-8).
w = Waveform(0.5 * np.sin(2 * np.pi * 440 * np.arange(16000) / 16000), 16000)
wav_path = os.path.join(tmp, "tone.wav")
write_wav(wav_path, w, encoding="float32")
back = read_wav(wav_path)
print("wav roundtrip max err:", np.abs(back.samples - w.samples).max())

# Resample up by the paper's 3.2x factor and back down again.
up = resample(w, 3.2)
down = resample(up, 1.0 / 3.2)
n = min(len(down), len(w))
print(f"resample 3.2x: {len(w)} -> {len(up)} samples @ {up.sample_rate} Hz; "
      f"roundtrip SI-SDR {si_sdr(down.samples[:n], w.samples[:n]):.1f} dB")

# Visual features: (t_v, c) float32 matrix with a small header.
feats = rng.standard_normal((25, 64)).astype(np.float32)
feat_path = os.path.join(tmp, "clip.vffe")
write_features(feat_path, feats)
print("feature roundtrip exact:",
      np.array_equal(load_precomputed_features(feat_path), feats.astype(np.float64)))

# Checkpoints: a flat name -> array dict.
ck_path = os.path.join(tmp, "weights.vfck")
params = {"layer.w": rng.standard_normal((8, 4)).astype(np.float32),
          "layer.b": np.zeros(4, dtype=np.float32)}
save_checkpoint(ck_path, params)
loaded = load_checkpoint(ck_path)
print("checkpoint params:", sorted(loaded), "exact:",
      all(np.array_equal(loaded[k], params[k]) for k in params))
