import numpy as np
import pytest

from mmsep import fusion as F
from mmsep import tensor as T
from mmsep.errors import ConfigError, ShapeError
from mmsep.tensor import Tensor

CFG = F.TransformerConfig(layers=2, heads=2, d_model=8, ffn_width=16)


def _params(seed=0):
    return F.init_transformer_params(CFG, np.random.default_rng(seed))


class TestConcatStreams:
    def test_audio_only_degenerate(self):
        a = Tensor(np.random.default_rng(0).standard_normal((4, 8)))
        fused = F.concat_streams(a, None, None)
        np.testing.assert_array_equal(fused.tokens.data, a.data)
        assert (fused.t_a, fused.t_v, fused.t_q) == (4, 0, 0)

    def test_boundaries(self):
        rng = np.random.default_rng(1)
        a, v, q = (Tensor(rng.standard_normal((n, 8))) for n in (3, 2, 4))
        fused = F.concat_streams(a, v, q)
        assert fused.tokens.data.shape == (9, 8)
        assert fused.boundaries == (3, 5)

    def test_slice_roundtrip(self):
        rng = np.random.default_rng(2)
        a, v, q = (Tensor(rng.standard_normal((n, 8))) for n in (3, 2, 4))
        fused = F.concat_streams(a, v, q)
        z = fused.tokens.data
        np.testing.assert_array_equal(z[:3], a.data)
        np.testing.assert_array_equal(z[3:5], v.data)
        np.testing.assert_array_equal(z[5:], q.data)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            F.concat_streams(Tensor(np.zeros((2, 8))), Tensor(np.zeros((2, 4))), None)


class TestTransformerEncoder:
    def test_single_token_attention_is_one(self):
        params = _params()
        z = Tensor(np.random.default_rng(3).standard_normal((1, 8)))
        _, attn = F.transformer_encoder(z, CFG, params)
        for layer in attn.layers:
            np.testing.assert_allclose(layer, np.ones((2, 1, 1)))

    def test_permutation_equivariance_without_encodings(self):
        params = _params(seed=4)
        rng = np.random.default_rng(5)
        z = rng.standard_normal((7, 8))
        perm = rng.permutation(7)
        y1, _ = F.transformer_encoder(Tensor(z), CFG, params)
        y2, _ = F.transformer_encoder(Tensor(z[perm]), CFG, params)
        assert np.abs(y2.data - y1.data[perm]).max() < 1e-5

    def test_attention_rows_sum_to_one(self):
        params = _params(seed=6)
        z = Tensor(np.random.default_rng(7).standard_normal((9, 8)) * 3)
        _, attn = F.transformer_encoder(z, CFG, params)
        for layer in attn.layers:
            np.testing.assert_allclose(layer.sum(axis=-1), 1.0, atol=1e-6)
            assert layer.min() >= 0

    def test_no_structural_zeros(self):
        params = _params(seed=8)
        z = Tensor(np.random.default_rng(9).standard_normal((6, 8)))
        _, attn = F.transformer_encoder(z, CFG, params)
        assert attn.layers[0].min() > 0  # unmasked: every entry may be nonzero

    def test_width_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            F.transformer_encoder(Tensor(np.zeros((3, 4))), CFG, _params())

    def test_gradcheck(self, gradcheck):
        cfg = F.TransformerConfig(layers=1, heads=2, d_model=4, ffn_width=8)
        params = F.init_transformer_params(cfg, np.random.default_rng(10))
        z = Tensor(np.random.default_rng(11).standard_normal((3, 4)))
        probe = [params["tf0.attn.wq.w"], params["tf0.ffn.w1.w"], params["tf0.ln1.g"]]

        def f():
            for p in params.values():
                p.grad = None
            y, _ = F.transformer_encoder(z, cfg, params)
            return T.sum_(T.tanh(y))

        assert gradcheck(f, probe, n_samples=6) < 1e-5


class TestTakeAudioOutput:
    def test_slices_first_rows(self):
        rng = np.random.default_rng(12)
        a, v, q = (Tensor(rng.standard_normal((n, 8))) for n in (3, 2, 4))
        fused = F.concat_streams(a, v, q)
        out = F.take_audio_output(fused.tokens, fused)
        np.testing.assert_array_equal(out.data, fused.tokens.data[:3])

    def test_identity_when_audio_only(self):
        a = Tensor(np.random.default_rng(13).standard_normal((5, 8)))
        fused = F.concat_streams(a, None, None)
        assert F.take_audio_output(fused.tokens, fused) is fused.tokens

    def test_discarded_rows_get_zero_gradient(self):
        rng = np.random.default_rng(14)
        a = Tensor(rng.standard_normal((3, 8)), requires_grad=True)
        v = Tensor(rng.standard_normal((2, 8)), requires_grad=True)
        fused = F.concat_streams(a, v, None)
        T.backward(T.sum_(F.take_audio_output(fused.tokens, fused)))
        np.testing.assert_array_equal(v.grad, np.zeros((2, 8)))
        np.testing.assert_array_equal(a.grad, np.ones((3, 8)))

    def test_no_audio_is_contract_error(self):
        fused = F.FusedSequence(Tensor(np.zeros((2, 8))), 0, 2, 0)
        with pytest.raises(ShapeError):
            F.take_audio_output(fused.tokens, fused)

    def test_boundary_integrity_identity_encoder(self):
        # an identity "encoder" is just passing fused tokens straight through
        rng = np.random.default_rng(15)
        a, v, q = (Tensor(rng.standard_normal((n, 8))) for n in (4, 3, 2))
        fused = F.concat_streams(a, v, q)
        np.testing.assert_array_equal(
            F.take_audio_output(fused.tokens, fused).data, a.data
        )


class TestRecurrentBottleneck:
    def _params(self, c=6, seed=16):
        return F.init_lstm_params(c, np.random.default_rng(seed))

    def test_zero_inputs_zero_biases_zero_output(self):
        params = self._params()
        out = F.recurrent_bottleneck(
            Tensor(np.zeros((5, 6))), np.zeros((3, 6)), params
        )
        np.testing.assert_allclose(out.data, np.zeros((5, 6)), atol=1e-15)

    def test_output_length(self):
        params = self._params()
        rng = np.random.default_rng(17)
        out = F.recurrent_bottleneck(
            Tensor(rng.standard_normal((7, 6))), rng.standard_normal((3, 6)), params
        )
        assert out.data.shape == (7, 6)

    def test_gradcheck(self, gradcheck):
        params = self._params(c=4, seed=18)
        rng = np.random.default_rng(19)
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        v = rng.standard_normal((2, 4))
        probe = [a, params["lstm0.wx"], params["lstm1.wh"], params["lstm.proj.w"]]

        def f():
            for p in probe:
                p.grad = None
            return T.sum_(T.tanh(F.recurrent_bottleneck(a, v, params)))

        assert gradcheck(f, probe, n_samples=6) < 1e-4


class TestAttentionExtraction:
    def test_block_shapes(self):
        params = _params(seed=20)
        rng = np.random.default_rng(21)
        a, v, q = (Tensor(rng.standard_normal((n, 8))) for n in (4, 3, 2))
        fused = F.concat_streams(a, v, q)
        _, attn = F.transformer_encoder(fused.tokens, CFG, params)
        blocks = F.extract_attention_rows(attn, fused)
        assert blocks["audio_video"].shape == (4, 3)
        assert blocks["audio_text"].shape == (4, 2)
        assert blocks["audio_video"].min() >= 0
        assert blocks["audio_text"].min() >= 0

    def test_audio_only_blocks_empty(self):
        params = _params(seed=22)
        a = Tensor(np.random.default_rng(23).standard_normal((4, 8)))
        fused = F.concat_streams(a, None, None)
        _, attn = F.transformer_encoder(fused.tokens, CFG, params)
        blocks = F.extract_attention_rows(attn, fused)
        assert blocks["audio_video"].shape == (4, 0)
        assert blocks["audio_text"].shape == (4, 0)

    def test_csv_export(self, tmp_path):
        params = _params(seed=24)
        rng = np.random.default_rng(25)
        a, v, q = (Tensor(rng.standard_normal((n, 8))) for n in (3, 2, 2))
        fused = F.concat_streams(a, v, q)
        _, attn = F.transformer_encoder(fused.tokens, CFG, params)
        paths = F.export_attention_csv(F.extract_attention_rows(attn, fused), tmp_path)
        assert len(paths) == 2
        header = open(paths[0]).readline().strip().split(",")
        assert header[0] == "audio_token"
