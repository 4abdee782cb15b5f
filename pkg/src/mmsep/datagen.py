"""Synthetic-mixture construction and perturbation injectors.

Provides the corpus manifest schema, track normalization and 0 dB
mixing, length-bucketed batching, the robustness perturbations
(audio-visual offset, video-frame masking, word removal, modality
swaps), and a deterministic synthetic "speaker" generator that stands in
for real audio-visual corpora: each voice is a distinct harmonic-tone +
filtered-noise timbre, utterances are concatenated word sounds driven by
a toy transcript, and "lip features" are low-dimensional projections of
the target's amplitude envelope.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .audio import Waveform
from .errors import DataError, DegenerateInputError

DEFAULT_FPS = 25


@dataclass
class PerturbationRecord:
    offset_ms: float = 0.0
    masked_frame_fraction: float = 0.0
    masked_frames: tuple = ()
    words_removed: int = 0
    swapped_modalities: tuple = ()

    def as_dict(self):
        return {
            "offset_ms": self.offset_ms,
            "mask_fraction": self.masked_frame_fraction,
            "words_removed": self.words_removed,
            "swapped": "+".join(self.swapped_modalities),
        }


@dataclass
class MixtureSample:
    sample_id: str
    mixture: np.ndarray
    target: np.ndarray
    sample_rate: int = 16000
    features: np.ndarray | None = None  # (t_v, d) visual features
    fps: int = DEFAULT_FPS
    transcript: str | None = None
    interferer_kind: str = "speech"
    perturbation: PerturbationRecord = field(default_factory=PerturbationRecord)

    def __post_init__(self):
        if len(self.mixture) != len(self.target):
            raise DataError(
                f"{self.sample_id}: mixture length {len(self.mixture)} != "
                f"target length {len(self.target)}"
            )


@dataclass
class ManifestEntry:
    audio: str
    text: str
    duration: float
    split: str
    features: str | None = None
    speaker: str | None = None


def load_manifest(path, check_files=True):
    """Read a JSON-lines manifest, validating referenced files exist."""
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON") from exc
            missing = [k for k in ("audio", "text", "duration", "split") if k not in rec]
            if missing:
                raise DataError(f"{path}:{lineno}: missing fields {missing}")
            if rec["duration"] <= 0:
                raise DataError(f"{path}:{lineno}: non-positive duration")
            entry = ManifestEntry(
                audio=os.path.join(root, rec["audio"]),
                text=rec["text"],
                duration=float(rec["duration"]),
                split=rec["split"],
                features=os.path.join(root, rec["features"]) if rec.get("features") else None,
                speaker=rec.get("speaker"),
            )
            if check_files:
                for p in (entry.audio, entry.features):
                    if p and not os.path.exists(p):
                        raise DataError(f"{path}:{lineno}: missing file {p}")
            entries.append(entry)
    return entries


# ---------------------------------------------------------------------------
# mixing
# ---------------------------------------------------------------------------

def normalize_track(samples):
    """Scale to unit RMS; all-zero input is an error."""
    x = np.asarray(samples, dtype=np.float64)
    rms = np.sqrt(np.mean(x**2))
    if rms == 0.0:
        raise DegenerateInputError("normalize_track: all-zero input")
    return x / rms


def _fit_length(x, n, rng):
    """Crop (from a random start) or tile ``x`` to exactly ``n`` samples."""
    if len(x) >= n:
        start = 0 if len(x) == n or rng is None else int(rng.integers(0, len(x) - n + 1))
        return x[start : start + n]
    reps = int(np.ceil(n / len(x)))
    return np.tile(x, reps)[:n]


def make_mixture(target, interferer, kind="speech", sample_id="mix", rng=None, **kwargs):
    """0 dB mixture of two unit-RMS tracks: a = a_c + interferer."""
    a_c = np.asarray(target, dtype=np.float64)
    if len(a_c) < 1:
        raise DataError("make_mixture: empty target")
    noise = _fit_length(np.asarray(interferer, dtype=np.float64), len(a_c), rng)
    return MixtureSample(
        sample_id=sample_id,
        mixture=a_c + noise,
        target=a_c,
        interferer_kind=kind,
        **kwargs,
    )


def random_crop(sample, seconds=4.0, rng=None):
    """Crop audio and features to the same wall-clock window.

    Returns None (a skip signal) when the source is shorter than the
    requested crop.
    """
    n = int(round(seconds * sample.sample_rate))
    total = len(sample.mixture)
    if total < n:
        return None
    rng = rng or np.random.default_rng()
    start = int(rng.integers(0, total - n + 1))
    feats = sample.features
    if feats is not None:
        f0 = int(round(start / sample.sample_rate * sample.fps))
        n_frames = int(round(seconds * sample.fps))
        feats = feats[f0 : f0 + n_frames].copy()
    return replace(
        sample,
        mixture=sample.mixture[start : start + n].copy(),
        target=sample.target[start : start + n].copy(),
        features=feats,
    )


def length_bucket_batches(entries, batch_size, length_key=len, max_ratio=1.1):
    """Batch similar-length items together to avoid padding.

    Items are sorted by length and chunked greedily; a chunk is closed
    when adding an item would push max/min length over ``max_ratio``.
    Remainder batches may be short.  The multiset of items is preserved.
    """
    order = sorted(entries, key=length_key)
    batches = []
    current = []
    for item in order:
        if current and length_key(item) > max_ratio * length_key(current[0]):
            batches.append(current)
            current = []
        current.append(item)
        if len(current) == batch_size:
            batches.append(current)
            current = []
    if current:
        batches.append(current)
    return batches


# ---------------------------------------------------------------------------
# perturbation injectors (all pure functions of sample, params, seed)
# ---------------------------------------------------------------------------

MAX_OFFSET_MS = 400.0


def inject_av_offset(sample, offset_ms):
    """Shift the mixture audio against the conditioning timeline.

    Positive offsets delay the audio; vacated samples are zero-filled.
    The target is NOT shifted: supervision stays aligned with the
    conditioning features.
    """
    if abs(offset_ms) > MAX_OFFSET_MS:
        raise ValueError(f"offset {offset_ms} ms exceeds cap of ±{MAX_OFFSET_MS} ms")
    shift = int(round(offset_ms * sample.sample_rate / 1000.0))
    if shift == 0:
        shifted = sample.mixture.copy()
    else:
        shifted = np.zeros_like(sample.mixture)
        if shift > 0:
            shifted[shift:] = sample.mixture[:-shift]
        else:
            shifted[:shift] = sample.mixture[-shift:]
    return replace(
        sample,
        mixture=shifted,
        perturbation=replace(sample.perturbation, offset_ms=float(offset_ms)),
    )


def mask_video_frames(sample, fraction, rng):
    """Zero a uniformly chosen ``round(fraction * t_v)`` feature rows."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"mask fraction {fraction} outside [0, 1]")
    if sample.features is None:
        raise DataError(f"{sample.sample_id}: no video features to mask")
    t_v = sample.features.shape[0]
    k = int(round(fraction * t_v))
    idx = np.sort(rng.choice(t_v, size=k, replace=False)) if k else np.array([], dtype=int)
    feats = sample.features.copy()
    feats[idx] = 0.0
    return replace(
        sample,
        features=feats,
        perturbation=replace(
            sample.perturbation,
            masked_frame_fraction=float(fraction),
            masked_frames=tuple(int(i) for i in idx),
        ),
    )


def remove_words(sample, k, rng):
    """Delete ``k`` transcript words (uniform, without replacement)."""
    if sample.transcript is None:
        raise DataError(f"{sample.sample_id}: no transcript to remove words from")
    words = sample.transcript.split()
    if k > len(words):
        raise ValueError(f"cannot remove {k} of {len(words)} words")
    keep = np.ones(len(words), dtype=bool)
    if k:
        keep[rng.choice(len(words), size=k, replace=False)] = False
    return replace(
        sample,
        transcript=" ".join(w for w, m in zip(words, keep) if m),
        perturbation=replace(sample.perturbation, words_removed=int(k)),
    )


def swap_modality(sample, which, donor):
    """Replace one conditioning stream with a different sample's.

    Metrics downstream are still computed against the ORIGINAL target,
    which makes this the negative control for conditioning.
    """
    if donor.sample_id == sample.sample_id:
        raise ValueError("swap_modality: donor must be a different sample")
    if which == "video":
        if donor.features is None:
            raise DataError("swap_modality: donor has no video features")
        out = replace(sample, features=donor.features.copy())
    elif which == "text":
        if donor.transcript is None:
            raise DataError("swap_modality: donor has no transcript")
        out = replace(sample, transcript=donor.transcript)
    else:
        raise ValueError(f"swap_modality: unknown modality {which!r}")
    swapped = sample.perturbation.swapped_modalities + (which,)
    return replace(out, perturbation=replace(out.perturbation, swapped_modalities=swapped))


# ---------------------------------------------------------------------------
# synthetic voices
# ---------------------------------------------------------------------------

def _stable_seed(*parts):
    return zlib.crc32("|".join(str(p) for p in parts).encode())


def _speaker_timbre(speaker, n_harmonics=6):
    rng = np.random.default_rng(_stable_seed("speaker", speaker))
    f0 = 110.0 * 1.22**speaker + rng.uniform(-5, 5)
    weights = rng.uniform(0.2, 1.0, n_harmonics) / np.arange(1, n_harmonics + 1)
    noise_band = (rng.uniform(800, 2000), rng.uniform(2500, 5000))
    return f0, weights / np.abs(weights).sum(), noise_band


def _word_shape(word):
    rng = np.random.default_rng(_stable_seed("word", word))
    duration = rng.uniform(0.18, 0.32)
    pitch_factor = rng.uniform(0.8, 1.3)
    mod_rate = rng.uniform(3.0, 7.0)
    noise_mix = rng.uniform(0.1, 0.35)
    return duration, pitch_factor, mod_rate, noise_mix


def synth_utterance(speaker, transcript, sample_rate=16000, utterance_seed=0):
    """Deterministic toy 'speech': one sound per transcript word.

    Word identity sets duration, pitch contour and modulation; speaker
    identity sets the harmonic timbre and noise band.  The amplitude
    envelope therefore tracks the word sequence, which is what the lip
    features observe.
    """
    f0, weights, noise_band = _speaker_timbre(speaker)
    rng = np.random.default_rng(_stable_seed("utt", speaker, transcript, utterance_seed))
    pieces = []
    for word in transcript.split():
        duration, pitch_factor, mod_rate, noise_mix = _word_shape(word)
        n = int(round(duration * sample_rate))
        t = np.arange(n) / sample_rate
        env = np.sin(np.pi * t / duration) ** 2 * (
            0.6 + 0.4 * np.sin(2 * np.pi * mod_rate * t + rng.uniform(0, 2 * np.pi)) ** 2
        )
        tone = np.zeros(n)
        for h, w in enumerate(weights, start=1):
            tone += w * np.sin(2 * np.pi * h * f0 * pitch_factor * t + rng.uniform(0, 2 * np.pi))
        noise = rng.standard_normal(n)
        # crude bandpass: difference of moving averages tuned by the band
        lo_k = max(2, int(sample_rate / noise_band[1]))
        hi_k = max(lo_k + 2, int(sample_rate / noise_band[0]))
        kernel_lo = np.ones(lo_k) / lo_k
        kernel_hi = np.ones(hi_k) / hi_k
        band = np.convolve(noise, kernel_lo, mode="same") - np.convolve(
            noise, kernel_hi, mode="same"
        )
        band /= max(np.abs(band).max(), 1e-9)
        pieces.append(env * ((1 - noise_mix) * tone + noise_mix * band))
    if not pieces:
        raise DataError("synth_utterance: empty transcript")
    return Waveform(np.concatenate(pieces), sample_rate)


def amplitude_envelope(samples, sample_rate, fps=DEFAULT_FPS):
    """Per-video-frame RMS of the waveform."""
    x = np.asarray(samples, dtype=np.float64)
    hop = sample_rate // fps
    n_frames = max(1, int(round(len(x) / hop)))
    env = np.empty(n_frames)
    for i in range(n_frames):
        seg = x[i * hop : (i + 1) * hop]
        env[i] = np.sqrt(np.mean(seg**2)) if len(seg) else 0.0
    return env


_FEATURE_PROJ_SEED = 20240611


def lip_features(samples, sample_rate, feature_dim, fps=DEFAULT_FPS):
    """Project the target's envelope (and its derivative) to feature_dim.

    The projection matrix is fixed and speaker-independent, so the
    features carry timing information only, like idealized lip openness.
    """
    env = amplitude_envelope(samples, sample_rate, fps)
    denv = np.gradient(env) if len(env) > 1 else np.zeros_like(env)
    basis = np.random.default_rng(_FEATURE_PROJ_SEED).standard_normal((2, feature_dim))
    basis /= np.linalg.norm(basis, axis=1, keepdims=True)
    return np.stack([env, denv], axis=1) @ basis


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------

def default_lexicon_path():
    return os.path.join(os.path.dirname(__file__), "data", "lexicon.txt")


def generate_corpus(out_dir, n_speakers=4, seconds_per_split=60.0, seed=0,
                    feature_dim=64, sample_rate=16000, words_per_utterance=(4, 7),
                    splits=("train", "val", "test")):
    """Write a deterministic synthetic corpus and return its manifest path."""
    from .audio import write_wav
    from .conditioning import load_lexicon, write_features

    os.makedirs(out_dir, exist_ok=True)
    words = sorted(load_lexicon(default_lexicon_path()))
    rng = np.random.default_rng(seed)
    lines = []
    for split in splits:
        total = 0.0
        idx = 0
        while total < seconds_per_split:
            speaker = int(rng.integers(0, n_speakers))
            n_words = int(rng.integers(words_per_utterance[0], words_per_utterance[1] + 1))
            transcript = " ".join(rng.choice(words, size=n_words, replace=True))
            w = synth_utterance(speaker, transcript, sample_rate,
                                utterance_seed=int(rng.integers(0, 2**31)))
            base = f"{split}_{idx:04d}"
            wav_rel = f"{base}.wav"
            feat_rel = f"{base}.vffe"
            write_wav(os.path.join(out_dir, wav_rel), w, encoding="float32")
            write_features(
                os.path.join(out_dir, feat_rel),
                lip_features(w.samples, sample_rate, feature_dim),
            )
            lines.append({
                "audio": wav_rel,
                "features": feat_rel,
                "text": transcript,
                "duration": w.duration,
                "split": split,
                "speaker": f"spk{speaker}",
            })
            total += w.duration
            idx += 1
    manifest = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest, "w") as f:
        for rec in lines:
            f.write(json.dumps(rec) + "\n")
    return manifest


def noise_track(seconds, sample_rate=16000, seed=0):
    """Colored-noise interferer for the denoising curriculum."""
    rng = np.random.default_rng(_stable_seed("noise", seed))
    n = int(round(seconds * sample_rate))
    white = rng.standard_normal(n + 64)
    kernel = np.exp(-np.arange(32) / 8.0)
    return Waveform(np.convolve(white, kernel / kernel.sum(), mode="same")[:n], sample_rate)
