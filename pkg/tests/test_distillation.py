import logging

import numpy as np
import pytest

from disco.data import EOS_ID, PAD_ID
from disco.distillation import DEFAULT_ALPHAS, distill_corpus, tune_length_penalty
from disco.toy_models import ARTableModel, CopyTableModel, MarkovTableModel

V = 12
A, B, C = 5, 6, 7


class ReverseTableModel(ARTableModel):
    def next_distribution(self, src, prefix):
        src = [int(x) for x in src if x != PAD_ID][::-1]
        probs = np.full(self.config.vocab_size_tgt, 0.01)
        probs[src[len(prefix)] if len(prefix) < len(src) else EOS_ID] = 1.0
        return probs


class SilentTableModel(ARTableModel):
    def next_distribution(self, src, prefix):
        return np.eye(self.config.vocab_size_tgt)[EOS_ID]


def test_alpha_grid():
    assert DEFAULT_ALPHAS[0] == 0.0 and DEFAULT_ALPHAS[-1] == 2.0
    assert len(DEFAULT_ALPHAS) == 11


def test_length_penalty_selects_longer_output():
    # [B] has probability .36 and [A, C] .18; the longer one wins once alpha reaches 1.4
    transitions = {
        0: np.eye(V)[A] * 0.5 + np.eye(V)[B] * 0.4 + np.eye(V)[EOS_ID] * 0.1,
        A: np.eye(V)[C] * 0.36 + np.eye(V)[B] * 0.34 + np.eye(V)[EOS_ID] * 0.3,
        B: np.eye(V)[A] * 0.1 + np.eye(V)[EOS_ID] * 0.9,
        C: np.eye(V)[EOS_ID],
    }
    teacher = MarkovTableModel(transitions, 0, V)
    alpha, table = tune_length_penalty(teacher, [(np.array([5]), np.array([A, C]))], beam=2)
    assert alpha == pytest.approx(1.4)
    assert table["alpha"].tolist() == list(DEFAULT_ALPHAS)
    assert table.loc[table["alpha"] < 1.3, "bleu"].eq(0.0).all()
    assert table.loc[table["alpha"] > 1.3, "bleu"].eq(100.0).all()


def test_ties_go_to_smallest_alpha(copy_corpus):
    alpha, table = tune_length_penalty(CopyTableModel(V), copy_corpus.pairs("dev"), alphas=(0.4, 0.0, 1.0), beam=1)
    assert alpha == 0.0
    assert table["alpha"].tolist() == [0.0, 0.4, 1.0]
    assert table["bleu"].nunique() == 1


def test_distilled_targets_come_from_teacher(copy_corpus):
    distilled = distill_corpus(ReverseTableModel(V), copy_corpus, beam=1)
    for (src, _), (dsrc, dtgt) in zip(copy_corpus.pairs("train"), distilled.pairs("train")):
        np.testing.assert_array_equal(src, dsrc)
        np.testing.assert_array_equal(dtgt, src[::-1])
    for (_, tgt), (_, dtgt) in zip(copy_corpus.pairs("dev"), distilled.pairs("dev")):
        np.testing.assert_array_equal(tgt, dtgt)
    assert distilled.tgt_vocab == copy_corpus.tgt_vocab


def test_empty_teacher_output_keeps_reference(copy_corpus, caplog):
    with caplog.at_level(logging.WARNING):
        distilled = distill_corpus(SilentTableModel(V), copy_corpus, beam=1)
    for (_, tgt), (_, dtgt) in zip(copy_corpus.pairs("train"), distilled.pairs("train")):
        np.testing.assert_array_equal(tgt, dtgt)
    assert "kept 40 original targets" in caplog.text
