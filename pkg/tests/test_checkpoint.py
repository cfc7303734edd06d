import numpy as np
import pytest

from gloss2text import checkpoint as ck
from gloss2text.corpus import SPECIAL_TOKENS, Vocabulary
from gloss2text.errors import DataError
from gloss2text.model import ModelConfig, TransformerModel


def make_vocab(tokens):
    id_to_token = list(SPECIAL_TOKENS) + list(tokens)
    return Vocabulary({t: i for i, t in enumerate(id_to_token)}, id_to_token,
                      {t: i + 1 for i, t in enumerate(id_to_token)})


def tiny_model(tie=False, seed=3):
    cfg = ModelConfig(src_vocab_size=7, tgt_vocab_size=9, num_layers=1, d_model=8,
                      num_heads=2, ffn_dim=12, dropout=0.1, tie_decoder_embeddings=tie)
    return TransformerModel(cfg, seed=seed)


class TestCheckpointRoundtrip:
    def test_parameters_bit_exact(self, tmp_path):
        model = tiny_model()
        sv, tv = make_vocab(["A", "B", "C"]), make_vocab(list("abcde"))
        path = tmp_path / "m.ckpt"
        ck.save_checkpoint(path, model, sv, tv, extra={"step": 11, "dev_bleu4": 1.25})
        loaded, lsv, ltv, extra = ck.load_checkpoint(path)
        assert loaded.config == model.config
        assert extra == {"step": 11, "dev_bleu4": 1.25}
        assert lsv == sv and ltv == tv
        assert lsv.frequencies == sv.frequencies
        assert set(loaded.params) == set(model.params)
        for name, tensor in model.params.items():
            np.testing.assert_array_equal(loaded.params[name].data, tensor.data)

    def test_tied_model_has_no_output_projection_blob(self, tmp_path):
        model = tiny_model(tie=True)
        sv, tv = make_vocab(["A"]), make_vocab(list("abcde"))
        path = tmp_path / "m.ckpt"
        ck.save_checkpoint(path, model, sv, tv)
        loaded, _, _, _ = ck.load_checkpoint(path)
        assert "out_proj" not in loaded.params
        assert loaded.param_count() == model.param_count()

    def test_byte_stable_across_saves(self, tmp_path):
        model = tiny_model()
        sv, tv = make_vocab(["Ä", "ß"]), make_vocab(["ü"])
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        ck.save_checkpoint(p1, model, sv, tv, extra={"step": 1})
        ck.save_checkpoint(p2, model, sv, tv, extra={"step": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_inference_identical_after_reload(self, tmp_path):
        model = tiny_model()
        sv, tv = make_vocab(["A", "B"]), make_vocab(list("ab"))
        path = tmp_path / "m.ckpt"
        ck.save_checkpoint(path, model, sv, tv)
        loaded, _, _, _ = ck.load_checkpoint(path)
        src = np.array([4, 5])
        a = model.encode_source(src).data
        b = loaded.encode_source(src).data
        np.testing.assert_array_equal(a, b)

    def test_reject_non_checkpoint(self, tmp_path):
        bad = tmp_path / "x.ckpt"
        bad.write_bytes(b"not a checkpoint\n")
        with pytest.raises(DataError):
            ck.load_checkpoint(bad)

    def test_reject_truncated(self, tmp_path):
        model = tiny_model()
        sv, tv = make_vocab(["A"]), make_vocab(["a"])
        path = tmp_path / "m.ckpt"
        ck.save_checkpoint(path, model, sv, tv)
        data = path.read_bytes()
        (tmp_path / "t.ckpt").write_bytes(data[: len(data) // 2])
        with pytest.raises(DataError):
            ck.load_checkpoint(tmp_path / "t.ckpt")
