import numpy as np
import pytest

from mmsep.audio import Waveform, read_wav, resample, write_wav
from mmsep.checkpoint import load_checkpoint, save_checkpoint
from mmsep.errors import FormatError
from mmsep.metrics import si_sdr
from mmsep.tensor import Tensor


def _bandlimited_noise(n, sr, max_freq, seed=0):
    rng = np.random.default_rng(seed)
    spec = np.zeros(n // 2 + 1, dtype=complex)
    k_max = int(max_freq * n / sr)
    spec[1:k_max] = rng.standard_normal(k_max - 1) + 1j * rng.standard_normal(k_max - 1)
    x = np.fft.irfft(spec, n)
    return x / np.abs(x).max()


class TestWavIO:
    def test_pcm16_roundtrip(self, tmp_path):
        x = np.sin(np.linspace(0, 20, 1600))
        path = tmp_path / "a.wav"
        write_wav(path, Waveform(x, 16000))
        back = read_wav(path)
        assert back.sample_rate == 16000
        assert np.abs(back.samples - x).max() < 1e-4

    def test_float32_roundtrip_exact(self, tmp_path):
        x = np.random.default_rng(0).standard_normal(500).astype(np.float32)
        path = tmp_path / "a.wav"
        write_wav(path, Waveform(x, 16000), encoding="float32")
        np.testing.assert_array_equal(read_wav(path).samples, x.astype(np.float64))

    def test_stereo_averaged_to_mono(self, tmp_path):
        import struct

        left = np.full(100, 0.5, dtype="<f4")
        right = np.full(100, -0.5, dtype="<f4")
        inter = np.empty(200, dtype="<f4")
        inter[0::2] = left
        inter[1::2] = right
        payload = inter.tobytes()
        header = struct.pack(
            "<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(payload), b"WAVE", b"fmt ", 16,
            3, 2, 16000, 16000 * 8, 8, 32, b"data", len(payload),
        )
        path = tmp_path / "stereo.wav"
        path.write_bytes(header + payload)
        w = read_wav(path)
        np.testing.assert_allclose(w.samples, np.zeros(100))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"not a wav file at all")
        with pytest.raises(FormatError):
            read_wav(path)


class TestResample:
    def test_factor_one_identity(self):
        x = np.random.default_rng(1).standard_normal(1000)
        out = resample(Waveform(x, 16000), 1.0)
        np.testing.assert_array_equal(out.samples, x)

    def test_sine_upsampled_3p2x(self):
        sr = 16000
        t = np.arange(sr) / sr
        w = resample(Waveform(np.sin(2 * np.pi * 1000 * t), sr), 3.2)
        assert w.sample_rate == 51200
        t2 = np.arange(len(w.samples)) / 51200
        ref = np.sin(2 * np.pi * 1000 * t2)
        trim = 2048
        assert np.abs(w.samples[trim:-trim] - ref[trim:-trim]).max() < 1e-3

    def test_roundtrip_si_sdr_over_40db(self):
        sr = 16000
        x = _bandlimited_noise(4 * sr, sr, 6000, seed=2)
        up = resample(Waveform(x, sr), 3.2)
        down = resample(up, 1 / 3.2)
        n = min(len(down.samples), len(x))
        trim = 2048
        assert si_sdr(down.samples[trim : n - trim], x[trim : n - trim]) >= 40.0


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        params = {
            "layer.w": Tensor(rng.standard_normal((3, 4, 5)).astype(np.float32)),
            "layer.b": Tensor(rng.standard_normal(7).astype(np.float32)),
        }
        path = tmp_path / "ck.vfck"
        save_checkpoint(path, params)
        loaded = load_checkpoint(path)
        assert list(loaded) == ["layer.w", "layer.b"]
        for k in params:
            np.testing.assert_array_equal(loaded[k], params[k].data.astype(np.float32))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "ck.vfck"
        path.write_bytes(b"XXXX" + b"\0" * 16)
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "ck.vfck"
        save_checkpoint(path, {"w": Tensor(np.ones((4, 4), dtype=np.float32))})
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(FormatError):
            load_checkpoint(path)
