"""Separation quality metrics: SI-SDR, filtered-projection SDR and STOI.

All log-ratio metrics are capped at +60 dB so perfect reconstructions
produce finite report values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .audio import Waveform, resample
from .errors import DataError, DegenerateInputError, ShapeError

DB_CAP = 60.0


@dataclass
class MetricReport:
    sample_id: str
    sdr_db: float
    si_sdr_db: float
    stoi: float
    perturbation: dict = field(default_factory=dict)


def _as_pair(estimate, reference):
    e = np.asarray(estimate, dtype=np.float64).reshape(-1)
    r = np.asarray(reference, dtype=np.float64).reshape(-1)
    if e.shape != r.shape:
        raise ShapeError(f"length mismatch: estimate {e.shape} vs reference {r.shape}")
    return e, r


def _ratio_db(num, den):
    if num == 0.0:
        return -DB_CAP
    if den <= num * 10 ** (-DB_CAP / 10):
        return DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def si_sdr(estimate, reference):
    """Scale-invariant SDR in dB, capped at +60."""
    e, r = _as_pair(estimate, reference)
    denom = float(r @ r)
    if denom == 0.0:
        raise DegenerateInputError("si_sdr: silent reference")
    s_t = (float(e @ r) / denom) * r
    err = e - s_t
    return _ratio_db(float(s_t @ s_t), float(err @ err))


def sdr_projected(estimate, reference, filter_taps=512):
    """SDR allowing a short time-invariant filter of the reference.

    Fits ``filter_taps`` causal taps by least squares (the projection
    subsumes plain rescaling, so this is never much below SI-SDR) and
    reports the residual energy ratio in dB.  Near-singular normal
    equations fall back to a ridge-regularized solve.
    """
    e, r = _as_pair(estimate, reference)
    if len(e) <= filter_taps:
        raise ShapeError(f"sdr_projected: length {len(e)} <= filter_taps {filter_taps}")
    if float(r @ r) == 0.0:
        raise DegenerateInputError("sdr_projected: silent reference")
    padded = np.concatenate([np.zeros(filter_taps - 1), r])
    # column k of X is the reference delayed by k samples
    X = np.lib.stride_tricks.sliding_window_view(padded, filter_taps)[:, ::-1]
    gram = X.T @ X
    rhs = X.T @ e
    try:
        h = np.linalg.solve(gram, rhs)
        if not np.all(np.isfinite(h)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        warnings.warn("sdr_projected: singular normal equations, using ridge solve")
        ridge = 1e-9 * np.trace(gram) / filter_taps
        h = np.linalg.solve(gram + ridge * np.eye(filter_taps), rhs)
    s_t = X @ h
    err = e - s_t
    return _ratio_db(float(s_t @ s_t), float(err @ err))


# ---------------------------------------------------------------------------
# STOI (classic construction)
# ---------------------------------------------------------------------------

_STOI_SR = 10000
_FRAME = 256  # 25.6 ms at 10 kHz
_HOP = 128
_NFFT = 512
_NBANDS = 15
_FIRST_CF = 150.0
_SEGMENT = 30  # frames per 384 ms segment
_BETA_CLIP = 10 ** (-15.0 / 20.0)


def _third_octave_matrix():
    freqs = np.arange(_NFFT // 2 + 1) * _STOI_SR / _NFFT
    centers = _FIRST_CF * 2.0 ** (np.arange(_NBANDS) / 3.0)
    lo = centers / 2 ** (1.0 / 6.0)
    hi = centers * 2 ** (1.0 / 6.0)
    mat = np.zeros((_NBANDS, len(freqs)))
    for j in range(_NBANDS):
        mat[j, (freqs >= lo[j]) & (freqs < hi[j])] = 1.0
    return mat


def _band_envelopes(x):
    window = np.hanning(_FRAME)
    n_frames = 1 + (len(x) - _FRAME) // _HOP
    idx = np.arange(_FRAME)[None, :] + _HOP * np.arange(n_frames)[:, None]
    spec = np.fft.rfft(x[idx] * window, n=_NFFT, axis=1)
    power = np.abs(spec) ** 2
    return np.sqrt(power @ _third_octave_matrix().T)  # (frames, bands)


def stoi(estimate, reference, sample_rate=16000):
    """Short-time objective intelligibility in [0, 1].

    Classic (non-extended) construction: 10 kHz internal rate, 25.6 ms
    Hann frames at 50% overlap, 15 one-third-octave bands from 150 Hz,
    384 ms segments with per-segment normalization and -15 dB clipping,
    averaged band/segment correlation.
    """
    e, r = _as_pair(estimate, reference)
    if sample_rate != _STOI_SR:
        e = resample(Waveform(e, sample_rate), _STOI_SR / sample_rate).samples
        r = resample(Waveform(r, sample_rate), _STOI_SR / sample_rate).samples
    min_len = _FRAME + (_SEGMENT - 1) * _HOP
    if len(e) < min_len:
        raise DataError(
            f"stoi: need >= {min_len} samples at {_STOI_SR} Hz "
            f"({min_len / _STOI_SR:.2f} s), got {len(e)}"
        )
    env_r = _band_envelopes(r)
    env_e = _band_envelopes(e)
    n_frames = env_r.shape[0]
    scores = []
    for m in range(_SEGMENT, n_frames + 1):
        x = env_r[m - _SEGMENT : m]  # (SEGMENT, bands)
        y = env_e[m - _SEGMENT : m]
        norm_x = np.linalg.norm(x, axis=0)
        norm_y = np.linalg.norm(y, axis=0)
        alpha = norm_x / np.maximum(norm_y, 1e-12)
        y_clip = np.minimum(alpha * y, x * (1.0 + _BETA_CLIP))
        xc = x - x.mean(axis=0)
        yc = y_clip - y_clip.mean(axis=0)
        denom = np.linalg.norm(xc, axis=0) * np.linalg.norm(yc, axis=0)
        corr = (xc * yc).sum(axis=0) / np.maximum(denom, 1e-12)
        scores.append(corr)
    return float(np.clip(np.mean(scores), 0.0, 1.0))
