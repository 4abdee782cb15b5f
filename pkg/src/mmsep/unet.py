"""Raw-waveform U-Net: strided-conv encoder and transposed-conv decoder.

Each encoder block is a strided conv + ReLU followed by a 1x1 conv + GLU;
each decoder block mirrors it (1x1 conv + GLU, transposed conv + ReLU),
with additive skip connections joining encoder block i to the matching
decoder block.  The last decoder block emits a single channel with no
ReLU, so output samples may be negative.

Input is right-padded with zeros to the next multiple of stride**depth
and trimmed back after decoding, so output length always equals input
length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DataError, ShapeError
from .tensor import Tensor


@dataclass
class UNetConfig:
    depth: int = 5
    base_channels: int = 48
    channel_growth: int = 2
    kernel: int = 8
    stride: int = 4
    pad: int = 2
    resample_factor: float = 3.2

    def __post_init__(self):
        if self.kernel < self.stride:
            raise ShapeError(f"kernel {self.kernel} < stride {self.stride}")

    @property
    def channels(self):
        """Per-block output channel counts, e.g. 48, 96, 192, 384, 768."""
        return [self.base_channels * self.channel_growth**i for i in range(self.depth)]

    @property
    def bottleneck_channels(self):
        return self.channels[-1]

    @property
    def total_stride(self):
        return self.stride**self.depth


def padded_length(n, cfg):
    s = cfg.total_stride
    return ((n + s - 1) // s) * s


def num_tokens(n, cfg):
    """t_a for an input of n samples: ceil(n / stride**depth)."""
    s = cfg.total_stride
    return (n + s - 1) // s


def init_unet_params(cfg, rng, dtype=np.float64):
    """He-style uniform fan-in init for weights, zeros for biases."""
    params = {}

    def conv_w(name, shape):
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        params[name] = Tensor(
            rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True, name=name
        )

    def bias(name, n):
        params[name] = Tensor(np.zeros(n, dtype=dtype), requires_grad=True, name=name)

    ch = cfg.channels
    for i in range(cfg.depth):
        c_in = 1 if i == 0 else ch[i - 1]
        conv_w(f"enc{i}.conv.w", (ch[i], c_in, cfg.kernel))
        bias(f"enc{i}.conv.b", ch[i])
        conv_w(f"enc{i}.mix.w", (2 * ch[i], ch[i], 1))
        bias(f"enc{i}.mix.b", 2 * ch[i])
    for i in range(cfg.depth):
        c_out = 1 if i == 0 else ch[i - 1]
        conv_w(f"dec{i}.mix.w", (2 * ch[i], ch[i], 1))
        bias(f"dec{i}.mix.b", 2 * ch[i])
        conv_w(f"dec{i}.tconv.w", (ch[i], c_out, cfg.kernel))
        bias(f"dec{i}.tconv.b", c_out)
    return params


def encode(x, params, cfg):
    """Run the encoder; returns per-block activations (deepest last).

    ``x`` is a (1, T_padded) tensor whose length must be a multiple of
    stride**depth.  The last activation, shape (c, t_a), holds the audio
    tokens.
    """
    if x.data.size == 0:
        raise DataError("encode: empty waveform")
    if x.data.shape[1] % cfg.total_stride != 0:
        raise ShapeError(
            f"encode: length {x.data.shape[1]} not a multiple of {cfg.total_stride}"
        )
    acts = []
    h = x
    for i in range(cfg.depth):
        h = T.relu(T.conv1d(h, params[f"enc{i}.conv.w"], params[f"enc{i}.conv.b"],
                            stride=cfg.stride, padding=cfg.pad))
        h = T.glu(T.conv1d(h, params[f"enc{i}.mix.w"], params[f"enc{i}.mix.b"]), axis=0)
        acts.append(h)
    return acts


def decode(y, acts, params, cfg):
    """Decode refined audio tokens ``y`` (c, t_a) back to a (1, T_padded) waveform."""
    if y.data.shape != acts[-1].data.shape:
        raise ShapeError(
            f"decode: tokens {y.data.shape} vs encoder activations {acts[-1].data.shape}"
        )
    h = y
    for i in reversed(range(cfg.depth)):
        h = T.add(h, acts[i])
        h = T.glu(T.conv1d(h, params[f"dec{i}.mix.w"], params[f"dec{i}.mix.b"]), axis=0)
        h = T.conv_transpose1d(h, params[f"dec{i}.tconv.w"], params[f"dec{i}.tconv.b"],
                               stride=cfg.stride, padding=cfg.pad)
        if i > 0:
            h = T.relu(h)
    return h


def unet_forward(samples, params, cfg, bottleneck=None):
    """encode -> bottleneck -> decode for a 1-D sample array.

    ``bottleneck`` maps audio tokens (t_a, c) to refined tokens of the
    same shape; None means identity.  Returns a 1-D tensor with the same
    length as the input.
    """
    samples = np.asarray(samples)
    n = samples.shape[-1]
    if n == 0:
        raise DataError("unet_forward: empty waveform")
    pad_to = padded_length(n, cfg)
    x = np.zeros((1, pad_to), dtype=samples.dtype)
    x[0, :n] = samples
    acts = encode(Tensor(x), params, cfg)
    tokens = T.transpose(acts[-1])  # (t_a, c)
    if bottleneck is not None:
        tokens = bottleneck(tokens)
    out = decode(T.transpose(tokens), acts, params, cfg)
    return T.reshape(T.slice_cols(out, 0, n), (n,))
