"""Conditioning streams: visual features, phoneme sequences and encodings.

Covers the frozen visual CNN backbone (one feature vector per video
frame), the precomputed-feature binary format, lexicon-based
phonemization with a character fallback, learnable phoneme embeddings,
and the positional + modality encodings added to each token stream
before fusion.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, FormatError, ShapeError
from .tensor import Tensor

# ---------------------------------------------------------------------------
# phoneme inventory and lexicon
# ---------------------------------------------------------------------------

ARPABET = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER",
    "EY", "F", "G", "HH", "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW",
    "OY", "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
]
WORD_BOUNDARY = "<wb>"
CHAR_FALLBACK = [f"<{c}>" for c in "abcdefghijklmnopqrstuvwxyz"]
UNKNOWN = "<unk>"

INVENTORY = ARPABET + [WORD_BOUNDARY] + CHAR_FALLBACK + [UNKNOWN]
PHONEME_TO_ID = {p: i for i, p in enumerate(INVENTORY)}
INVENTORY_SIZE = len(INVENTORY)  # 67
WB_ID = PHONEME_TO_ID[WORD_BOUNDARY]
UNK_ID = PHONEME_TO_ID[UNKNOWN]


@dataclass
class PhonemeSequence:
    ids: list
    word_offsets: list = field(default_factory=list)

    def __len__(self):
        return len(self.ids)


def load_lexicon(path):
    """Parse a ``WORD PH1 PH2 ...`` per-line lexicon file (case-insensitive)."""
    lexicon = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            word, phones = parts[0].lower(), [p.upper() for p in parts[1:]]
            bad = [p for p in phones if p not in PHONEME_TO_ID]
            if bad:
                raise FormatError(f"{path}:{lineno}: unknown phoneme(s) {bad}")
            lexicon[word] = phones
    return lexicon


def phonemize(text, lexicon):
    """Map text to phoneme ids with a word-boundary token between words.

    Out-of-lexicon words fall back to per-character tokens; characters
    outside a-z map to the unknown token.  Empty text gives an empty
    sequence.
    """
    ids = []
    offsets = []
    for i, word in enumerate(text.lower().split()):
        if i > 0:
            ids.append(WB_ID)
        offsets.append(len(ids))
        if word in lexicon:
            ids.extend(PHONEME_TO_ID[p] for p in lexicon[word])
        else:
            for ch in word:
                ids.append(PHONEME_TO_ID.get(f"<{ch}>", UNK_ID))
    return PhonemeSequence(ids, offsets)


def embed_phonemes(seq, table):
    """Look up phoneme embeddings; gradients flow into the table."""
    return T.embedding_lookup(table, seq.ids)


# ---------------------------------------------------------------------------
# positional and modality encodings
# ---------------------------------------------------------------------------

def sinusoidal_pe(length, c):
    """Standard sin/cos positional encoding, shape (length, c); c must be even."""
    if c % 2 != 0:
        raise ShapeError(f"sinusoidal_pe: channel width {c} must be even")
    pos = np.arange(length)[:, None]
    freq = np.exp(-np.log(10000.0) * np.arange(0, c, 2) / c)[None, :]
    pe = np.zeros((length, c))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


def learned_pe(length, table):
    """First ``length`` rows of a learnable position table."""
    if length > table.data.shape[0]:
        raise IndexError(
            f"position {length - 1} beyond learned table capacity {table.data.shape[0]}"
        )
    return T.embedding_lookup(table, np.arange(length))


def init_encoding_params(c, rng, dtype=np.float64, text_positions=512, me_sigma=0.02):
    """Modality vectors, phoneme embedding table and learned text positions."""
    params = {}
    for name, shape in [
        ("me.audio", (c,)), ("me.video", (c,)), ("me.text", (c,)),
        ("text.embed", (INVENTORY_SIZE, c)), ("text.pos", (text_positions, c)),
    ]:
        params[name] = Tensor(
            rng.normal(0.0, me_sigma, shape).astype(dtype), requires_grad=True, name=name
        )
    return params


def _add_encodings(tokens, pe, me):
    """tokens + PE + ME, all (t, c); ME is broadcast over tokens."""
    out = T.add(tokens, pe if isinstance(pe, Tensor) else Tensor(pe))
    return T.add_bias(out, me, axis=1)


def apply_encodings(audio, video, text, params, dtype=np.float64):
    """Produce order- and modality-aware streams; any input may be None.

    Audio and video get sinusoidal positions, text a learned position
    table.  Returns a (audio, video, text) tuple of encoded tensors.
    """
    widths = {s.data.shape[1] for s in (audio, video, text) if s is not None}
    if len(widths) != 1:
        raise ShapeError(f"apply_encodings: channel widths differ: {sorted(widths)}")
    (c,) = widths
    out = []
    for stream, kind in ((audio, "audio"), (video, "video"), (text, "text")):
        if stream is None:
            out.append(None)
            continue
        t = stream.data.shape[0]
        if kind == "text":
            pe = learned_pe(t, params["text.pos"])
        else:
            pe = Tensor(sinusoidal_pe(t, c).astype(dtype))
        out.append(_add_encodings(stream, pe, params[f"me.{kind}"]))
    return tuple(out)


# ---------------------------------------------------------------------------
# precomputed visual feature files
# ---------------------------------------------------------------------------

FEATURE_MAGIC = b"VFFE"
FEATURE_VERSION = 1


def write_features(path, feats):
    """Write a (t_v, c) float matrix in the feature binary format."""
    feats = np.asarray(feats, dtype="<f4")
    if feats.ndim != 2:
        raise ShapeError(f"write_features: expected a 2-D matrix, got {feats.shape}")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", FEATURE_VERSION, feats.shape[0], feats.shape[1]))
        f.write(np.ascontiguousarray(feats).tobytes())


def load_precomputed_features(path, expected_c=None):
    """Read a feature file back as a (t_v, c) float64 matrix."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {FEATURE_MAGIC!r}")
    version, t_v, c = struct.unpack_from("<III", raw, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported feature version {version}")
    payload = raw[16:]
    if len(payload) != 4 * t_v * c:
        raise FormatError(
            f"{path}: payload {len(payload)} bytes, header implies {4 * t_v * c}"
        )
    if expected_c is not None and c != expected_c:
        raise ConfigError(f"{path}: feature width {c} != model channel width {expected_c}")
    return np.frombuffer(payload, dtype="<f4").reshape(t_v, c).astype(np.float64)


# ---------------------------------------------------------------------------
# visual CNN backbone (frozen; forward-only)
# ---------------------------------------------------------------------------

@dataclass
class VisualBackboneConfig:
    input_size: int = 112
    in_channels: int = 3
    stem_channels: int = 64
    stem_temporal_kernel: int = 5
    stage_channels: tuple = (128, 256, 512)
    blocks_per_stage: int = 3
    final_conv: bool = True  # extra stride-2 conv before the fc collapse
    out_dim: int = 768
    seed: int = 0


def _conv2d(x, w, stride=1, pad=0):
    # x: (C, H, W), w: (Co, C, k, k) -> (Co, H', W')
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    k = w.shape[2]
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (C, H', W', k, k)
    _, ho, wo = win.shape[0], win.shape[1], win.shape[2]
    col = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, -1)
    return (col @ w.reshape(w.shape[0], -1).T).T.reshape(w.shape[0], ho, wo)


def init_visual_backbone(cfg):
    """Deterministic frozen weights for the backbone (never trained)."""
    rng = np.random.default_rng(cfg.seed)
    weights = {}

    def w(name, shape):
        fan_in = int(np.prod(shape[1:]))
        weights[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)

    kt = cfg.stem_temporal_kernel
    w("stem", (cfg.stem_channels, cfg.in_channels, kt, 5, 5))
    prev = cfg.stem_channels
    for si, ch in enumerate(cfg.stage_channels):
        for bi in range(cfg.blocks_per_stage):
            w(f"s{si}b{bi}", (ch, prev if bi == 0 else ch, 3, 3))
        prev = ch
    if cfg.final_conv:
        w("final", (prev, prev, 3, 3))
    size = cfg.input_size
    for _ in range(1 + len(cfg.stage_channels) + int(cfg.final_conv)):
        size = (size - 1) // 2 + 1  # stride-2 conv with same-ish padding
    w("fc", (prev, prev, size, size))
    w("proj", (cfg.out_dim, prev))
    return weights


def visual_backbone(frames, weights, cfg):
    """Map a clip (3, T_v, H, W) to one feature vector per frame.

    The 3D stem mixes a short temporal window; all later stages are 2D
    and process frames independently.  Normalization layers are frozen
    per-channel affines (identity here), matching a frozen-backbone
    deployment.  Forward-only: no gradients are recorded.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[0] != cfg.in_channels:
        raise ShapeError(f"visual_backbone: expected (C, T, H, W), got {frames.shape}")
    t_v, h, wdt = frames.shape[1], frames.shape[2], frames.shape[3]
    if t_v < 1:
        raise DataError("visual_backbone: need at least one frame")
    if h != cfg.input_size or wdt != cfg.input_size:
        raise ShapeError(
            f"visual_backbone: spatial size {h}x{wdt} != configured {cfg.input_size}"
        )
    kt = cfg.stem_temporal_kernel
    tp = kt // 2
    padded = np.pad(frames, ((0, 0), (tp, tp), (0, 0), (0, 0)))
    stem_w = weights["stem"].reshape(cfg.stem_channels, -1, 5, 5)
    feats = []
    for t in range(t_v):
        # temporal window as extra input channels for the stem conv
        window = padded[:, t : t + kt].reshape(-1, h, wdt)
        x = np.maximum(_conv2d(window, stem_w, stride=2, pad=2), 0.0)
        for si in range(len(cfg.stage_channels)):
            for bi in range(cfg.blocks_per_stage):
                y = _conv2d(x, weights[f"s{si}b{bi}"], stride=2 if bi == 0 else 1, pad=1)
                if bi > 0:
                    y = y + x  # shortcut everywhere except the strided entry
                x = np.maximum(y, 0.0)
        if cfg.final_conv:
            x = np.maximum(_conv2d(x, weights["final"], stride=2, pad=1), 0.0)
        x = np.maximum(_conv2d(x, weights["fc"]), 0.0).reshape(-1)
        feats.append(weights["proj"] @ x)
    return np.stack(feats)
