"""Waveform container, WAV file I/O and sample-rate conversion.

WAV support covers the two encodings the pipeline produces and consumes:
PCM 16-bit and IEEE float-32.  Multi-channel files are averaged down to
mono on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import firwin, resample_poly

from .errors import DataError, FormatError


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


def read_wav(path):
    """Read a mono or multi-channel WAV file; channels are averaged to mono."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    data = None
    off = 12
    while off + 8 <= len(raw):
        cid, size = raw[off : off + 4], struct.unpack_from("<I", raw, off + 4)[0]
        body = raw[off + 8 : off + 8 + size]
        if cid == b"fmt ":
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        off += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise FormatError(f"{path}: missing fmt or data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format == 1 and bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise FormatError(
            f"{path}: unsupported encoding (format {audio_format}, {bits} bits)"
        )
    if channels > 1:
        x = x[: len(x) - len(x) % channels].reshape(-1, channels).mean(axis=1)
    return Waveform(x, sample_rate)


def write_wav(path, w, encoding="pcm16"):
    """Write a mono WAV file as PCM 16-bit (default) or IEEE float-32."""
    x = np.asarray(w.samples, dtype=np.float64)
    if encoding == "pcm16":
        payload = (np.clip(x, -1.0, 1.0) * 32767.0).round().astype("<i2").tobytes()
        audio_format, bits = 1, 16
    elif encoding == "float32":
        payload = x.astype("<f4").tobytes()
        audio_format, bits = 3, 32
    else:
        raise ValueError(f"unknown WAV encoding {encoding!r}")
    block = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, audio_format, 1, w.sample_rate,
        w.sample_rate * block, block, bits,
        b"data", len(payload),
    )
    with open(path, "wb") as f:
        f.write(header + payload)


def resample(w, factor, taps_per_phase=64, kaiser_beta=8.0):
    """Rational-factor resampling with a Kaiser-windowed-sinc polyphase filter.

    ``factor`` is approximated by the nearest small fraction L/M; output
    length is ceil(len * L / M).  factor 1 is an exact pass-through.
    """
    if factor <= 0:
        raise ValueError(f"resample factor must be positive, got {factor}")
    frac = Fraction(factor).limit_denominator(1000)
    up, down = frac.numerator, frac.denominator
    if up == down:
        return Waveform(w.samples.copy(), w.sample_rate)
    numtaps = taps_per_phase * max(up, down) + 1
    cutoff = 1.0 / max(up, down)  # in Nyquist units of the upsampled rate
    # resample_poly applies the gain of ``up`` to a user-provided filter
    h = firwin(numtaps, cutoff, window=("kaiser", kaiser_beta))
    y = resample_poly(w.samples, up, down, window=h)
    return Waveform(y, int(round(w.sample_rate * up / down)))
