import numpy as np
import pytest

from mmsep import conditioning as C
from mmsep import tensor as T
from mmsep.datagen import default_lexicon_path
from mmsep.errors import ConfigError, FormatError, ShapeError
from mmsep.tensor import Tensor


@pytest.fixture(scope="module")
def lexicon():
    return C.load_lexicon(default_lexicon_path())


class TestPhonemize:
    def test_single_word(self):
        seq = C.phonemize("a", {"a": ["AH"]})
        assert seq.ids == [C.PHONEME_TO_ID["AH"]]

    def test_word_boundary_and_offsets(self):
        seq = C.phonemize("a a", {"a": ["AH"]})
        ah, wb = C.PHONEME_TO_ID["AH"], C.WB_ID
        assert seq.ids == [ah, wb, ah]
        assert seq.word_offsets == [0, 2]

    def test_unknown_word_character_fallback(self):
        seq = C.phonemize("zzq", {})
        assert seq.ids == [C.PHONEME_TO_ID[s] for s in ("<z>", "<z>", "<q>")]

    def test_empty_text(self):
        assert C.phonemize("", {"a": ["AH"]}).ids == []

    def test_inventory_size(self):
        assert C.INVENTORY_SIZE == 67  # 39 phonemes + boundary + 26 chars + unk

    def test_word_removal_never_lengthens(self, lexicon):
        words = "red green blue water metal glass".split()
        base = len(C.phonemize(" ".join(words), lexicon))
        for drop in range(len(words)):
            shorter = " ".join(w for i, w in enumerate(words) if i != drop)
            assert len(C.phonemize(shorter, lexicon)) < base

    def test_demo_lexicon_loads(self, lexicon):
        assert "water" in lexicon and lexicon["red"] == ["R", "EH", "D"]


class TestPositionalEncodings:
    def test_row_zero_alternates_zero_one(self):
        pe = C.sinusoidal_pe(4, 6)
        np.testing.assert_allclose(pe[0], [0, 1, 0, 1, 0, 1])

    def test_entries_bounded(self):
        pe = C.sinusoidal_pe(300, 32)
        assert np.abs(pe).max() <= 1.0

    def test_distinct_positions_distinct_rows(self):
        pe = C.sinusoidal_pe(4096, 16)
        # consecutive-row distinctness plus spot checks across the range
        diffs = np.abs(np.diff(pe, axis=0)).max(axis=1)
        assert diffs.min() > 0
        rng = np.random.default_rng(0)
        for _ in range(200):
            i, j = rng.integers(0, 4096, 2)
            if i != j:
                assert np.abs(pe[i] - pe[j]).max() > 0

    def test_odd_width_rejected(self):
        with pytest.raises(ShapeError):
            C.sinusoidal_pe(4, 5)

    def test_learned_pe_capacity(self):
        table = Tensor(np.zeros((8, 4)))
        C.learned_pe(8, table)
        with pytest.raises(IndexError):
            C.learned_pe(9, table)


class TestApplyEncodings:
    def _params(self, c=8):
        return C.init_encoding_params(c, np.random.default_rng(0))

    def test_zero_tokens_give_pe_plus_me(self):
        params = self._params()
        a = Tensor(np.zeros((5, 8)))
        out, _, _ = C.apply_encodings(a, None, None, params)
        expected = C.sinusoidal_pe(5, 8) + params["me.audio"].data
        np.testing.assert_allclose(out.data, expected)

    def test_subtracting_encodings_recovers_input(self):
        params = self._params()
        rng = np.random.default_rng(1)
        a = Tensor(rng.standard_normal((4, 8)))
        v = Tensor(rng.standard_normal((3, 8)))
        ea, ev, _ = C.apply_encodings(a, v, None, params)
        np.testing.assert_allclose(
            ea.data - C.sinusoidal_pe(4, 8) - params["me.audio"].data, a.data, atol=1e-12
        )
        np.testing.assert_allclose(
            ev.data - C.sinusoidal_pe(3, 8) - params["me.video"].data, v.data, atol=1e-12
        )

    def test_me_gradient_is_token_count(self):
        params = self._params()
        a = Tensor(np.random.default_rng(2).standard_normal((6, 8)), requires_grad=True)
        out, _, _ = C.apply_encodings(a, None, None, params)
        T.backward(T.sum_(out))
        np.testing.assert_allclose(params["me.audio"].grad, np.full(8, 6.0))

    def test_width_mismatch_rejected(self):
        params = self._params()
        with pytest.raises(ShapeError):
            C.apply_encodings(Tensor(np.zeros((2, 8))), Tensor(np.zeros((2, 4))), None, params)


class TestFeatureFiles:
    def test_roundtrip_bit_exact(self, tmp_path):
        feats = np.random.default_rng(3).standard_normal((7, 5)).astype(np.float32)
        path = tmp_path / "f.vffe"
        C.write_features(path, feats)
        np.testing.assert_array_equal(C.load_precomputed_features(path), feats.astype(np.float64))

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "f.vffe"
        C.write_features(path, np.zeros((4, 4), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError, match="payload"):
            C.load_precomputed_features(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "f.vffe"
        path.write_bytes(b"NOPE" + b"\0" * 12)
        with pytest.raises(FormatError, match="magic"):
            C.load_precomputed_features(path)

    def test_width_mismatch_names_both_values(self, tmp_path):
        path = tmp_path / "f.vffe"
        C.write_features(path, np.zeros((4, 16), dtype=np.float32))
        with pytest.raises(ConfigError, match="16.*64"):
            C.load_precomputed_features(path, expected_c=64)


class TestVisualBackbone:
    def test_paper_scale_one_vector_per_frame(self):
        cfg = C.VisualBackboneConfig(out_dim=32)
        weights = C.init_visual_backbone(cfg)
        frames = np.random.default_rng(4).uniform(0, 1, (3, 5, 112, 112))
        feats = C.visual_backbone(frames, weights, cfg)
        assert feats.shape == (5, 32)

    def test_desk_scale_halved_stages(self):
        cfg = C.VisualBackboneConfig(
            input_size=32, stem_channels=8, stage_channels=(12, 16),
            blocks_per_stage=2, final_conv=False, out_dim=16,
        )
        weights = C.init_visual_backbone(cfg)
        feats = C.visual_backbone(
            np.random.default_rng(5).uniform(0, 1, (3, 4, 32, 32)), weights, cfg
        )
        assert feats.shape == (4, 16)

    def test_zero_clip_deterministic_constant(self):
        cfg = C.VisualBackboneConfig(
            input_size=32, stem_channels=4, stage_channels=(6,),
            blocks_per_stage=2, final_conv=False, out_dim=8,
        )
        weights = C.init_visual_backbone(cfg)
        feats = C.visual_backbone(np.zeros((3, 3, 32, 32)), weights, cfg)
        assert np.allclose(feats, feats[0])
        feats2 = C.visual_backbone(np.zeros((3, 3, 32, 32)), weights, cfg)
        np.testing.assert_array_equal(feats, feats2)

    def test_wrong_spatial_size_rejected(self):
        cfg = C.VisualBackboneConfig(out_dim=8)
        weights = C.init_visual_backbone(cfg)
        with pytest.raises(ShapeError):
            C.visual_backbone(np.zeros((3, 2, 64, 64)), weights, cfg)

    def test_frame_permutation_with_unit_temporal_stem(self):
        cfg = C.VisualBackboneConfig(
            input_size=32, stem_channels=4, stem_temporal_kernel=1,
            stage_channels=(6,), blocks_per_stage=2, final_conv=False, out_dim=8,
        )
        weights = C.init_visual_backbone(cfg)
        frames = np.random.default_rng(6).uniform(0, 1, (3, 6, 32, 32))
        perm = np.array([3, 0, 5, 1, 4, 2])
        base = C.visual_backbone(frames, weights, cfg)
        permuted = C.visual_backbone(frames[:, perm], weights, cfg)
        np.testing.assert_allclose(permuted, base[perm], atol=1e-10)
