"""Multi-modal fusion bottleneck.

Token streams from the three modalities are stacked along the temporal
axis and refined by an unmasked Transformer encoder; only the rows
corresponding to the audio segment feed the waveform decoder.  A 2-layer
LSTM bottleneck (channel-wise concatenation of audio and nearest-frame
resampled video) is included as the ablation baseline, and per-layer
attention weights are captured for cross-modal inspection.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass
class TransformerConfig:
    layers: int = 3
    heads: int = 8
    d_model: int = 768
    ffn_width: int = 0  # 0 -> 4 * d_model
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.ffn_width == 0:
            self.ffn_width = 4 * self.d_model


@dataclass
class FusedSequence:
    tokens: Tensor  # (t_a + t_v + t_q, c)
    t_a: int
    t_v: int
    t_q: int

    @property
    def boundaries(self):
        return (self.t_a, self.t_a + self.t_v)


@dataclass
class AttentionMap:
    """Per-layer attention weights, each (heads, n, n)."""

    layers: list = field(default_factory=list)

    def first_layer_mean(self):
        return self.layers[0].mean(axis=0)


def concat_streams(audio, video=None, text=None):
    """Stack encoded streams row-wise; video/text may be None or empty."""
    streams = []
    lengths = []
    for s in (audio, video, text):
        if s is None or s.data.shape[0] == 0:
            lengths.append(0)
        else:
            streams.append(s)
            lengths.append(s.data.shape[0])
    widths = {s.data.shape[1] for s in streams}
    if len(widths) > 1:
        raise ShapeError(f"concat_streams: channel widths differ: {sorted(widths)}")
    z = streams[0] if len(streams) == 1 else T.concat_rows(streams)
    return FusedSequence(z, *lengths)


def take_audio_output(y, fused):
    """First t_a rows of the encoder output; the rest is discarded."""
    if fused.t_a == 0:
        raise ShapeError("take_audio_output: fused sequence has no audio segment")
    if fused.t_a == y.data.shape[0]:
        return y
    return T.slice_rows(y, 0, fused.t_a)


# ---------------------------------------------------------------------------
# transformer encoder
# ---------------------------------------------------------------------------

def init_transformer_params(cfg, rng, dtype=np.float64, prefix="tf"):
    params = {}
    c, f = cfg.d_model, cfg.ffn_width

    def lin(name, n_in, n_out):
        bound = np.sqrt(6.0 / (n_in + n_out))
        params[f"{name}.w"] = Tensor(
            rng.uniform(-bound, bound, (n_in, n_out)).astype(dtype),
            requires_grad=True, name=f"{name}.w",
        )
        params[f"{name}.b"] = Tensor(
            np.zeros(n_out, dtype=dtype), requires_grad=True, name=f"{name}.b"
        )

    def norm(name):
        params[f"{name}.g"] = Tensor(
            np.ones(c, dtype=dtype), requires_grad=True, name=f"{name}.g"
        )
        params[f"{name}.b"] = Tensor(
            np.zeros(c, dtype=dtype), requires_grad=True, name=f"{name}.b"
        )

    for l in range(cfg.layers):
        for proj in ("wq", "wk", "wv", "wo"):
            lin(f"{prefix}{l}.attn.{proj}", c, c)
        lin(f"{prefix}{l}.ffn.w1", c, f)
        lin(f"{prefix}{l}.ffn.w2", f, c)
        norm(f"{prefix}{l}.ln1")
        norm(f"{prefix}{l}.ln2")
    return params


def _linear(x, params, name):
    return T.add_bias(T.matmul(x, params[f"{name}.w"]), params[f"{name}.b"], axis=1)


def _self_attention(x, cfg, params, layer, prefix):
    n, c = x.data.shape
    d = c // cfg.heads
    q = _linear(x, params, f"{prefix}{layer}.attn.wq")
    k = _linear(x, params, f"{prefix}{layer}.attn.wk")
    v = _linear(x, params, f"{prefix}{layer}.attn.wv")
    heads_t = []
    weights = np.empty((cfg.heads, n, n))
    for h in range(cfg.heads):
        qh = T.slice_cols(q, h * d, (h + 1) * d)
        kh = T.slice_cols(k, h * d, (h + 1) * d)
        vh = T.slice_cols(v, h * d, (h + 1) * d)
        att = T.softmax(T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / np.sqrt(d)), axis=-1)
        weights[h] = att.data
        heads_t.append(T.transpose(T.matmul(att, vh)))
    merged = T.transpose(heads_t[0] if cfg.heads == 1 else T.concat_rows(heads_t))
    return _linear(merged, params, f"{prefix}{layer}.attn.wo"), weights


def transformer_encoder(z, cfg, params, prefix="tf", rng=None, train=False):
    """Unmasked post-norm encoder stack; returns (output, AttentionMap)."""
    if z.data.shape[0] == 0:
        raise ShapeError("transformer_encoder: empty input")
    if z.data.shape[1] != cfg.d_model:
        raise ConfigError(
            f"transformer_encoder: input width {z.data.shape[1]} != d_model {cfg.d_model}"
        )
    p = cfg.dropout if train else 0.0
    attn_map = AttentionMap()
    x = z
    for l in range(cfg.layers):
        a, weights = _self_attention(x, cfg, params, l, prefix)
        attn_map.layers.append(weights)
        if p > 0:
            a = T.dropout(a, p, rng)
        x = T.layer_norm(T.add(x, a), params[f"{prefix}{l}.ln1.g"],
                         params[f"{prefix}{l}.ln1.b"])
        h = _linear(T.relu(_linear(x, params, f"{prefix}{l}.ffn.w1")),
                    params, f"{prefix}{l}.ffn.w2")
        if p > 0:
            h = T.dropout(h, p, rng)
        x = T.layer_norm(T.add(x, h), params[f"{prefix}{l}.ln2.g"],
                         params[f"{prefix}{l}.ln2.b"])
    return x, attn_map


# ---------------------------------------------------------------------------
# recurrent (LSTM) baseline bottleneck
# ---------------------------------------------------------------------------

def init_lstm_params(c, rng, dtype=np.float64, layers=2, prefix="lstm"):
    """2-layer LSTM over time; layer 0 ingests audio||video (2c channels)."""
    params = {}

    def mat(name, n_in, n_out):
        bound = np.sqrt(6.0 / (n_in + n_out))
        params[name] = Tensor(
            rng.uniform(-bound, bound, (n_in, n_out)).astype(dtype),
            requires_grad=True, name=name,
        )

    for l in range(layers):
        n_in = 2 * c if l == 0 else c
        mat(f"{prefix}{l}.wx", n_in, 4 * c)
        mat(f"{prefix}{l}.wh", c, 4 * c)
        params[f"{prefix}{l}.b"] = Tensor(
            np.zeros(4 * c, dtype=dtype), requires_grad=True, name=f"{prefix}{l}.b"
        )
    mat(f"{prefix}.proj.w", c, c)
    params[f"{prefix}.proj.b"] = Tensor(
        np.zeros(c, dtype=dtype), requires_grad=True, name=f"{prefix}.proj.b"
    )
    return params


def nearest_frame_resample(v, length):
    """Resample a (t_v, c) array to ``length`` rows by nearest frame."""
    t_v = v.shape[0]
    idx = np.minimum((np.arange(length) + 0.5) * t_v / length, t_v - 1).astype(int)
    return v[idx]


def _lstm_layer(xs, params, prefix, c, dtype):
    h = Tensor(np.zeros((1, c), dtype=dtype))
    cell = Tensor(np.zeros((1, c), dtype=dtype))
    outs = []
    wx, wh, b = params[f"{prefix}.wx"], params[f"{prefix}.wh"], params[f"{prefix}.b"]
    for x_t in xs:
        z = T.add_bias(T.add(T.matmul(x_t, wx), T.matmul(h, wh)), b, axis=1)
        i = T.sigmoid(T.slice_cols(z, 0, c))
        f = T.sigmoid(T.slice_cols(z, c, 2 * c))
        g = T.tanh(T.slice_cols(z, 2 * c, 3 * c))
        o = T.sigmoid(T.slice_cols(z, 3 * c, 4 * c))
        cell = T.add(T.mul(f, cell), T.mul(i, g))
        h = T.mul(o, T.tanh(cell))
        outs.append(h)
    return outs


def recurrent_bottleneck(audio, video, params, prefix="lstm", layers=2):
    """LSTM baseline: channel-concat audio with frame-aligned video features.

    ``audio`` is (t_a, c); ``video`` is a (t_v, c) array resampled to t_a
    rows by nearest frame before concatenation.
    """
    t_a, c = audio.data.shape
    v = nearest_frame_resample(np.asarray(video, dtype=audio.data.dtype), t_a)
    if v.shape != (t_a, c):
        raise ShapeError(f"recurrent_bottleneck: video {v.shape} vs audio {audio.data.shape}")
    vt = Tensor(v)
    xs = [
        T.concat_rows([T.slice_rows(audio, t, t + 1), T.slice_rows(vt, t, t + 1)])
        for t in range(t_a)
    ]
    xs = [T.reshape(x, (1, 2 * c)) for x in xs]
    for l in range(layers):
        xs = _lstm_layer(xs, params, f"{prefix}{l}", c, audio.data.dtype)
    seq = T.concat_rows(xs)
    return T.add_bias(T.matmul(seq, params[f"{prefix}.proj.w"]),
                      params[f"{prefix}.proj.b"], axis=1)


# ---------------------------------------------------------------------------
# attention inspection
# ---------------------------------------------------------------------------

def extract_attention_rows(attn_map, fused):
    """Slice the head-averaged first-layer map into cross-modal blocks.

    Returns audio->video and audio->text blocks of shapes (t_a, t_v) and
    (t_a, t_q); empty modalities give empty blocks.
    """
    m = attn_map.first_layer_mean()
    b0, b1 = fused.boundaries
    return {
        "audio_video": m[: fused.t_a, b0:b1].copy(),
        "audio_text": m[: fused.t_a, b1:].copy(),
    }


def export_attention_csv(blocks, out_dir):
    """Write one CSV per cross-modal block with row/column indices."""
    import os

    paths = []
    for name, block in blocks.items():
        path = os.path.join(out_dir, f"attention_{name}.csv")
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["audio_token"] + [f"col_{j}" for j in range(block.shape[1])])
            for i, row in enumerate(block):
                writer.writerow([i] + [f"{v:.8g}" for v in row])
        paths.append(path)
    return paths
