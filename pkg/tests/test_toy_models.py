import numpy as np
import pytest

from disco.data import EOS_ID, PAD_ID
from disco.errors import ValidationError
from disco.masks import cloze_mask, empty_mask, from_order_mask
from disco.toy_models import CopyTableModel, LexiconTableModel, MarkovTableModel, TwoModeTableModel

V = 9
A, B, C = 5, 6, 7


def probs(model, src, tokens, mask):
    return np.exp(model.disco_forward(model.encode(src), tokens, mask))[0]


def test_lexicon_rows_are_distributions():
    lexicon = {5: np.eye(V)[A] * 0.6 + np.eye(V)[B] * 0.4, PAD_ID: np.eye(V)[C]}
    model = LexiconTableModel(lexicon, V, [0.5, 0.5])
    out = probs(model, [5], [EOS_ID, EOS_ID], empty_mask(2))
    np.testing.assert_allclose(out.sum(axis=-1), 1.0)
    assert out[0, A] == pytest.approx(0.6, rel=1e-4)
    assert out[1].argmax() == C


def test_lexicon_agreement_uses_only_visible_neighbours():
    agreement = np.ones((V, V))
    agreement[A, B] = 0.1
    lexicon = {5: np.eye(V)[A], 6: np.eye(V)[B] * 0.5 + np.eye(V)[C] * 0.5}
    model = LexiconTableModel(lexicon, V, [0.5, 0.5], agreement)
    hidden = probs(model, [5, 6], [A, B], empty_mask(2))
    seen = probs(model, [5, 6], [A, B], from_order_mask([1, 2]))
    assert hidden[1, B] == pytest.approx(0.5, rel=1e-4)
    assert seen[1, C] == pytest.approx(1 / 1.1, rel=1e-4)


def test_lexicon_missing_entry():
    model = LexiconTableModel({5: np.eye(V)[A]}, V, [1.0])
    with pytest.raises(ValidationError):
        model.disco_forward(model.encode([6]), [A], empty_mask(1))


def test_length_head_normalized():
    model = LexiconTableModel({5: np.eye(V)[A]}, V, [1.0, 3.0])
    lp = model.predict_length(model.encode([5]))
    np.testing.assert_allclose(np.exp(lp[0]), [0.25, 0.75], rtol=1e-4)


class TestTwoMode:
    def test_alone_each_word_leans(self):
        model = TwoModeTableModel()
        out = probs(model, [model.HONG], [EOS_ID, EOS_ID], empty_mask(2))
        assert out[0].argmax() == model.HONG
        assert out[1].argmax() == model.YORK
        assert out[0, model.HONG] == pytest.approx(0.51, rel=1e-4)

    def test_partner_pins_the_phrase(self):
        model = TwoModeTableModel()
        out = probs(model, [model.HONG], [model.NEW, model.KONG], cloze_mask(2))
        assert out[0].argmax() == model.HONG
        assert out[1].argmax() == model.YORK
        assert out[1, model.YORK] == pytest.approx(0.9, rel=1e-4)

    def test_vocabulary(self):
        vocab = TwoModeTableModel().vocabulary()
        assert vocab.decode([TwoModeTableModel.NEW, TwoModeTableModel.YORK]) == ["New", "York"]


class TestAutoregressive:
    def test_markov_sequence_log_prob(self):
        transitions = {0: np.eye(V)[A] * 0.8 + np.eye(V)[EOS_ID] * 0.2, A: np.eye(V)[EOS_ID]}
        model = MarkovTableModel(transitions, 0, V)
        assert model.sequence_log_prob([A]) == pytest.approx(np.log(0.8), abs=1e-4)
        assert model.sequence_log_prob([]) == pytest.approx(np.log(0.2), abs=1e-4)

    def test_unknown_state_ends(self):
        model = MarkovTableModel({0: np.eye(V)[B]}, 0, V)
        rows = np.exp(model.vanilla_ar_forward(model.encode([5]), [B, EOS_ID]))[0]
        assert rows[1].argmax() == EOS_ID

    def test_copy_rows(self):
        model = CopyTableModel(V, confidence=0.8)
        rows = np.exp(model.vanilla_ar_forward(model.encode([A, C]), [A, C, EOS_ID]))[0]
        assert rows.argmax(axis=-1).tolist() == [A, C, EOS_ID]
        assert rows[0, A] == pytest.approx(0.8, rel=1e-4)
        assert model.config.decoder == "ar"
