import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from disco.data import EOS_ID, MASK_ID, PAD_ID
from disco.errors import DimensionError, FormatError, LengthError, ValidationError
from disco.masks import autoregressive_mask, cloze_mask, empty_mask, sample_disco_mask
from disco.model import Model, ModelConfig, default_length_bins, load_checkpoint, save_checkpoint
from disco.numerics import RngStream, no_grad

from conftest import tiny_config

SRC = np.array([[5, 6, 7, 8], [9, 10, PAD_ID, PAD_ID]])
TGT = np.array([[6, 7, 8, 9, 10], [11, 5, 6, 7, 8]])


def logits_of(model, tgt, mask, src=SRC, **kwargs):
    with no_grad():
        return model.disco_forward(model.encode(src), tgt, mask, **kwargs).data


class TestConfig:
    def test_defaults_are_desk_scale(self):
        cfg = ModelConfig()
        assert (cfg.model_dim, cfg.num_heads, cfg.head_dim) == (64, 4, 16)
        assert cfg.dtype == np.float64

    def test_presets(self):
        assert ModelConfig.base_scale().model_dim == 512
        assert ModelConfig.desk_scale(precision=32).dtype == np.float32

    @pytest.mark.parametrize("overrides", [
        dict(model_dim=10, num_heads=4),
        dict(max_length_bins=100, max_positions=64),
        dict(decoder="rnn"),
        dict(decoder="disco", contextless_kv=True),
        dict(precision=16),
        dict(dropout=1.0),
    ])
    def test_invalid(self, overrides):
        with pytest.raises(ValidationError):
            ModelConfig(**overrides)

    def test_round_trip_dict(self):
        cfg = tiny_config(decoder="ar", contextless_kv=True)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValidationError):
            ModelConfig.from_dict({"depth": 3})

    def test_default_length_bins(self):
        assert default_length_bins(12) == 32
        assert default_length_bins(4) == 16
        assert default_length_bins(20) == 48


class TestShapes:
    def test_encoder_and_length_head(self, tiny_model):
        with no_grad():
            enc = tiny_model.encode(SRC)
            lp = tiny_model.predict_length(enc).data
        assert enc.states.shape == (2, 5, 8)
        assert enc.padding[1].tolist() == [False, False, False, True, True]
        assert lp.shape == (2, 10)
        assert_allclose(np.exp(lp).sum(axis=-1), 1.0)

    def test_single_sentence_source(self, tiny_model):
        with no_grad():
            assert tiny_model.encode([5, 6]).states.shape == (1, 3, 8)

    def test_disco_forward_shape(self, tiny_model):
        assert logits_of(tiny_model, TGT, cloze_mask(5)).shape == (2, 5, 12)

    def test_batched_masks(self, tiny_model):
        masks = np.stack([cloze_mask(5).observed, empty_mask(5).observed])
        both = logits_of(tiny_model, TGT, masks)
        assert_allclose(both[1], logits_of(tiny_model, TGT, empty_mask(5))[1])

    def test_length_limits(self, tiny_model):
        with pytest.raises(LengthError):
            tiny_model.encode(np.full(11, 5))
        with no_grad():
            enc = tiny_model.encode(SRC)
        with pytest.raises(LengthError):
            tiny_model.disco_forward(enc, np.full((2, 11), 5), empty_mask(11))
        with pytest.raises(DimensionError):
            tiny_model.disco_forward(enc, TGT, empty_mask(4))

    def test_decoder_kind_checks(self, tiny_model):
        with no_grad():
            enc = tiny_model.encode(SRC)
        with pytest.raises(ValidationError):
            tiny_model.cmlm_forward(enc, TGT)
        with pytest.raises(ValidationError):
            tiny_model.vanilla_ar_forward(enc, TGT)
        with pytest.raises(ValidationError):
            Model(tiny_config(decoder="cmlm")).disco_forward(enc, TGT, empty_mask(5))


class TestNoLeakage:
    def test_unobserved_tokens_do_not_change_row(self, tiny_model):
        gen = np.random.default_rng(4)
        for _ in range(10):
            mask = sample_disco_mask(5, gen)
            base = logits_of(tiny_model, TGT, mask)
            for row in range(5):
                perturbed = TGT.copy()
                hidden = ~mask.observed[row]
                perturbed[:, hidden] = gen.integers(5, 12, size=(2, int(hidden.sum())))
                assert_allclose(logits_of(tiny_model, perturbed, mask)[:, row], base[:, row], rtol=0, atol=1e-12)

    def test_two_position_cycle(self, tiny_model):
        observed = np.zeros((2, 2), dtype=bool)
        observed[0, 1] = observed[1, 0] = True
        tgt = np.array([[5, 6]])
        base = logits_of(tiny_model, tgt, observed, src=SRC[:1])
        # row 0 must not see its own token through row 1
        changed = logits_of(tiny_model, np.array([[7, 6]]), observed, src=SRC[:1])
        assert_array_equal(changed[0, 0], base[0, 0])
        assert not np.allclose(changed[0, 1], base[0, 1])

    def test_empty_mask_ignores_every_token(self, tiny_model):
        assert_array_equal(logits_of(tiny_model, TGT, empty_mask(5)),
                           logits_of(tiny_model, np.flip(TGT, axis=1).copy(), empty_mask(5)))

    def test_observed_tokens_matter(self, tiny_model):
        changed = TGT.copy()
        changed[:, 0] = 11
        assert not np.allclose(logits_of(tiny_model, changed, cloze_mask(5))[:, 1],
                               logits_of(tiny_model, TGT, cloze_mask(5))[:, 1])

    def test_position_override_matches_default(self, tiny_model):
        assert_allclose(logits_of(tiny_model, TGT, cloze_mask(5), positions=np.arange(5)),
                        logits_of(tiny_model, TGT, cloze_mask(5)))


class TestOtherDecoders:
    def test_causal_ar_ignores_future(self):
        model = Model(tiny_config(decoder="ar"), seed=2)
        with no_grad():
            enc = model.encode(SRC)
            base = model.vanilla_ar_forward(enc, TGT).data
            changed = TGT.copy()
            changed[:, 3] = 5
            out = model.vanilla_ar_forward(enc, changed).data
        assert_array_equal(out[:, :4], base[:, :4])
        assert not np.allclose(out[:, 4], base[:, 4])

    def test_contextless_ar_is_disco_with_causal_mask(self):
        model = Model(tiny_config(decoder="ar", contextless_kv=True), seed=2)
        with no_grad():
            enc = model.encode(SRC)
            ar = model.vanilla_ar_forward(enc, TGT).data
            disco = model.disco_forward(enc, TGT, autoregressive_mask(5)).data
        assert_array_equal(ar, disco)

    def test_cmlm_reads_mask_tokens(self):
        model = Model(tiny_config(decoder="cmlm"), seed=2)
        masked = TGT.copy()
        masked[:, 1] = MASK_ID
        with no_grad():
            enc = model.encode(SRC)
            out = model.cmlm_forward(enc, masked).data
            other = model.cmlm_forward(enc, TGT).data
        assert out.shape == (2, 5, 12)
        assert not np.allclose(out, other)

    def test_ar_and_cmlm_have_no_kv_norm(self):
        assert "dec.0.ln_kv.gain" not in Model(tiny_config(decoder="cmlm")).params
        assert "dec.0.ln_kv.gain" in Model(tiny_config()).params


class TestState:
    def test_same_seed_same_parameters(self):
        a, b = Model(tiny_config(), seed=1), Model(tiny_config(), seed=1)
        for name in a.params:
            assert_array_equal(a.params[name].data, b.params[name].data)
        assert not np.allclose(Model(tiny_config(), seed=2).params["tgt_embed"].data, a.params["tgt_embed"].data)

    def test_precision_32(self):
        model = Model(tiny_config(precision=32))
        assert all(p.dtype == np.float32 for p in model.parameters())
        assert logits_of(model, TGT, cloze_mask(5)).dtype == np.float32

    def test_state_dict_round_trip(self, tiny_model):
        other = Model(tiny_config(), seed=99).load_state_dict(tiny_model.state_dict())
        assert_array_equal(logits_of(other, TGT, cloze_mask(5)), logits_of(tiny_model, TGT, cloze_mask(5)))

    def test_state_dict_mismatch(self, tiny_model):
        state = tiny_model.state_dict()
        state.pop("out.bias")
        with pytest.raises(ValidationError):
            tiny_model.load_state_dict(state)
        state = tiny_model.state_dict()
        state["out.bias"] = np.zeros(3)
        with pytest.raises(DimensionError):
            tiny_model.load_state_dict(state)

    def test_dropout_only_in_training(self):
        model = Model(tiny_config(dropout=0.3), seed=1)
        gen = RngStream(0).generator
        eval_a = logits_of(model, TGT, cloze_mask(5), generator=gen())
        eval_b = logits_of(model, TGT, cloze_mask(5), generator=gen())
        assert_array_equal(eval_a, eval_b)
        model.train()
        trained = logits_of(model, TGT, cloze_mask(5), generator=RngStream(0).generator())
        assert not np.allclose(trained, eval_a)
        with pytest.raises(ValidationError):
            model.train(dropout_rate=1.5)


class TestCheckpoints:
    def test_bit_exact_round_trip(self, tmp_path):
        model = Model(tiny_config(decoder="ar", contextless_kv=True), seed=8)
        path = save_checkpoint(model, tmp_path / "sub" / "m.npz", {"step": 3})
        loaded, extra = load_checkpoint(path)
        assert extra == {"step": 3}
        assert loaded.config == model.config
        for name, p in model.params.items():
            assert_array_equal(loaded.params[name].data, p.data)

    def test_rejects_foreign_files(self, tmp_path):
        bad = tmp_path / "bad.npz"
        bad.write_bytes(b"not an archive")
        with pytest.raises(FormatError):
            load_checkpoint(bad)
        other = tmp_path / "other.npz"
        np.savez(other, weights=np.zeros(3))
        with pytest.raises(FormatError):
            load_checkpoint(other)


def test_eos_is_a_regular_target_token(tiny_model):
    tgt = np.array([[EOS_ID, 6, 7]])
    assert logits_of(tiny_model, tgt, cloze_mask(3), src=SRC[:1]).shape == (1, 3, 12)
