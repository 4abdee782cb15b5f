"""Multi-modal speech separation: a waveform U-Net with a transformer
fusion bottleneck, conditioned on visual features and/or text."""

from .audio import Waveform, read_wav, resample, write_wav
from .fusion import TransformerConfig
from .metrics import sdr_projected, si_sdr, stoi
from .model import ModelConfig, SeparationModel
from .training import TrainConfig, l1_loss, train
from .unet import UNetConfig

__all__ = [
    "ModelConfig", "SeparationModel", "TrainConfig", "TransformerConfig",
    "UNetConfig", "Waveform", "l1_loss", "read_wav", "resample",
    "sdr_projected", "si_sdr", "stoi", "train", "write_wav",
]

__version__ = "0.1.0"
