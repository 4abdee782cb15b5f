"""Full separation model: U-Net encoder/decoder around a fusion bottleneck.

The model owns every trainable parameter (U-Net convs, encoding tables,
transformer or LSTM bottleneck) in a flat name -> Tensor dict, which is
also the checkpoint unit.  Audio is optionally resampled up by a fixed
factor before the network and back down after it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import conditioning, fusion, unet
from .audio import Waveform, resample
from .checkpoint import load_checkpoint, save_checkpoint
from .conditioning import load_lexicon
from .errors import ConfigError, DataError
from .fusion import TransformerConfig
from .tensor import Tensor
from .unet import UNetConfig

VALID_MODALITIES = ("audio", "video", "text")


@dataclass
class ModelConfig:
    modalities: tuple = ("audio", "video", "text")
    unet: UNetConfig = field(default_factory=UNetConfig)
    transformer: TransformerConfig | None = None
    bottleneck: str = "transformer"  # or "lstm"
    sample_rate: int = 16000
    fps: int = 25
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        if "audio" not in self.modalities:
            raise ConfigError("modalities must include 'audio'")
        bad = [m for m in self.modalities if m not in VALID_MODALITIES]
        if bad:
            raise ConfigError(f"unknown modalities {bad}")
        if self.bottleneck not in ("transformer", "lstm"):
            raise ConfigError(f"unknown bottleneck {self.bottleneck!r}")
        if self.bottleneck == "lstm" and "video" not in self.modalities:
            raise ConfigError("the lstm bottleneck requires video conditioning")
        if self.transformer is None:
            self.transformer = TransformerConfig(d_model=self.unet.bottleneck_channels)
        if self.transformer.d_model != self.unet.bottleneck_channels:
            raise ConfigError(
                f"transformer d_model {self.transformer.d_model} != "
                f"U-Net bottleneck channels {self.unet.bottleneck_channels}"
            )

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


class SeparationModel:
    """Conditioned waveform-to-waveform separator."""

    def __init__(self, config, lexicon_path=None):
        self.config = config
        rng = np.random.default_rng(config.seed)
        dtype = config.np_dtype
        c = config.unet.bottleneck_channels
        self.params = unet.init_unet_params(config.unet, rng, dtype)
        self.params.update(conditioning.init_encoding_params(c, rng, dtype))
        if config.bottleneck == "transformer":
            self.params.update(fusion.init_transformer_params(config.transformer, rng, dtype))
        else:
            self.params.update(fusion.init_lstm_params(c, rng, dtype))
        from .datagen import default_lexicon_path

        self.lexicon = load_lexicon(lexicon_path or default_lexicon_path())

    # -- parameter plumbing -------------------------------------------------

    def trainable(self, frozen=()):
        return {k: v for k, v in self.params.items() if k not in frozen}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def save(self, path):
        save_checkpoint(path, self.params)

    def load(self, path):
        loaded = load_checkpoint(path)
        missing = set(self.params) ^ set(loaded)
        if missing:
            raise ConfigError(f"checkpoint parameter mismatch: {sorted(missing)[:5]} ...")
        for k, v in loaded.items():
            if self.params[k].data.shape != v.shape:
                raise ConfigError(
                    f"checkpoint shape mismatch for {k}: "
                    f"{v.shape} vs {self.params[k].data.shape}"
                )
            self.params[k].data = v.astype(self.config.np_dtype)

    # -- forward ------------------------------------------------------------

    def _check_modalities(self, features, transcript):
        needs = set(self.config.modalities)
        if "video" in needs and features is None:
            raise DataError(
                f"model expects modalities {self.config.modalities}: video features missing"
            )
        if "text" in needs and transcript is None:
            raise DataError(
                f"model expects modalities {self.config.modalities}: transcript missing"
            )

    def _conditioning_tokens(self, features, transcript, dtype):
        video = None
        text = None
        if "video" in self.config.modalities:
            feats = np.asarray(features, dtype=dtype)
            c = self.config.unet.bottleneck_channels
            if feats.ndim != 2 or feats.shape[1] != c:
                raise ConfigError(
                    f"feature width {feats.shape[1] if feats.ndim == 2 else feats.shape}"
                    f" != model channel width {c}"
                )
            video = Tensor(feats)
        if "text" in self.config.modalities:
            seq = conditioning.phonemize(transcript, self.lexicon)
            if len(seq):
                text = conditioning.embed_phonemes(seq, self.params["text.embed"])
        return video, text

    def forward(self, mixture, features=None, transcript=None, train=False,
                rng=None, capture_attention=False):
        """Run the network on raw mixture samples (at the network rate).

        Returns (estimate tensor, AttentionMap or None).  ``mixture``
        must already be at the network sample rate (see
        :meth:`prepare_audio`).
        """
        self._check_modalities(features, transcript)
        dtype = self.config.np_dtype
        attn_out = []

        def bottleneck(tokens):
            video, text = self._conditioning_tokens(features, transcript, dtype)
            if self.config.bottleneck == "lstm":
                v = video.data if video is not None else np.zeros((1, tokens.data.shape[1]), dtype)
                return fusion.recurrent_bottleneck(tokens, v, self.params)
            enc_a, enc_v, enc_q = conditioning.apply_encodings(
                tokens, video, text, self.params, dtype
            )
            fused = fusion.concat_streams(enc_a, enc_v, enc_q)
            y, attn = fusion.transformer_encoder(
                fused.tokens, self.config.transformer, self.params, rng=rng, train=train
            )
            if capture_attention:
                attn_out.append((attn, fused))
            return fusion.take_audio_output(y, fused)

        est = unet.unet_forward(
            np.asarray(mixture, dtype=dtype), self.params, self.config.unet, bottleneck
        )
        return est, (attn_out[0] if attn_out else None)

    # -- inference helpers --------------------------------------------------

    def prepare_audio(self, samples):
        """Resample input audio up by the configured factor."""
        factor = self.config.unet.resample_factor
        if factor == 1.0:
            return np.asarray(samples, dtype=self.config.np_dtype)
        w = resample(Waveform(samples, self.config.sample_rate), factor)
        return w.samples.astype(self.config.np_dtype)

    def restore_audio(self, samples, target_len=None):
        """Resample network-rate output back down to the I/O rate."""
        factor = self.config.unet.resample_factor
        if factor != 1.0:
            net_rate = int(round(self.config.sample_rate * factor))
            samples = resample(Waveform(samples, net_rate), 1.0 / factor).samples
        if target_len is not None:
            out = np.zeros(target_len)
            n = min(target_len, len(samples))
            out[:n] = samples[:n]
            samples = out
        return samples

    def separate(self, mixture, features=None, transcript=None, capture_attention=False):
        """Full inference path: resample, forward, resample back."""
        net_in = self.prepare_audio(mixture)
        est, attn = self.forward(
            net_in, features, transcript, capture_attention=capture_attention
        )
        out = self.restore_audio(est.data.astype(np.float64), target_len=len(mixture))
        return (out, attn) if capture_attention else out
