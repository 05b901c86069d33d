import math

import numpy as np
import pandas as pd
import pytest

from disco.data import PAD_ID
from disco.errors import DimensionError, ValidationError
from disco.evaluation import bleu, evaluate, exact_match, iterations_vs_length, latency_benchmark
from disco.inference import DecodeConfig
from disco.toy_models import LexiconTableModel

V = 9
A, B, C, D = 5, 6, 7, 8


class TestBleu:
    def test_identical_corpus(self):
        assert bleu(["a b c d e"], ["a b c d e"]) == pytest.approx(100.0)

    def test_brevity_penalty(self):
        score = bleu(["a b c d"], ["a b c d e f g h"])
        assert score == pytest.approx(100.0 * math.exp(1.0 - 8 / 4))

    def test_add_one_smoothing_of_higher_orders(self):
        # precisions 4/5, 2/4, 1/3 and 0/2 (smoothed to 1/3)
        expected = 100.0 * (0.8 * 0.5 * (1 / 3) * (1 / 3)) ** 0.25
        assert bleu(["a b c d e"], ["a b c x e"]) == pytest.approx(expected)
        assert bleu(["a b c d e"], ["a b c x e"], smooth=False) == 0.0

    def test_no_unigram_overlap(self):
        assert bleu(["x y"], ["a b"]) == 0.0

    def test_token_lists(self):
        assert bleu([["5", "6", "7"]], [[5, 6, 7]]) == pytest.approx(100.0)

    def test_corpus_level_not_sentence_average(self):
        whole = bleu(["a b c d", "e f"], ["a b c d", "e g"])
        first, second = bleu(["a b c d"], ["a b c d"]), bleu(["e f"], ["e g"])
        assert whole != pytest.approx((first + second) / 2)

    def test_errors(self):
        with pytest.raises(ValidationError):
            bleu([], [])
        with pytest.raises(DimensionError):
            bleu(["a"], ["a", "b"])


class TestExactMatch:
    def test_wilson_interval(self):
        em = exact_match([[1, 2], [3], [4], [5]], [[1, 2], [3], [4], [6]])
        assert em.rate == 0.75 and em.hits == 3 and em.total == 4
        assert em.low == pytest.approx(0.3006, abs=1e-3)
        assert em.high == pytest.approx(0.9544, abs=1e-3)

    def test_all_hits(self):
        em = exact_match([np.array([1, 2])] * 10, [[1, 2]] * 10)
        assert em.rate == 1.0
        assert em.low < 1.0 <= em.high + 1e-12

    def test_errors(self):
        with pytest.raises(DimensionError):
            exact_match([[1]], [])
        with pytest.raises(ValidationError):
            exact_match([], [])


class TestIterationsVsLength:
    def test_table_and_rank_correlation(self):
        frame = pd.DataFrame({"length": [1, 2, 2, 3, 4], "iterations": [1, 2, 2, 2, 3]})
        table, rho = iterations_vs_length(frame)
        assert table["length"].tolist() == [1, 2, 3, 4]
        assert table["sentences"].tolist() == [1, 2, 1, 1]
        assert rho > 0.8

    def test_monotone(self):
        _, rho = iterations_vs_length(pd.DataFrame({"length": [1, 2, 3, 4], "iterations": [2, 3, 5, 6]}))
        assert rho == pytest.approx(1.0)

    def test_single_token_sentences_converge_at_second_pass(self):
        model = LexiconTableModel({5: np.eye(V)[A], 6: np.eye(V)[B]}, V, [1.0])
        pairs = [(np.array([5]), np.array([A])), (np.array([6]), np.array([B]))]
        _, hypotheses, _ = evaluate(model, pairs, DecodeConfig("easy-first", length_beam=1))
        table, _ = iterations_vs_length(hypotheses)
        assert table["length"].tolist() == [1]
        assert table["mean_iterations"].tolist() == [2.0]

    def test_constant_iterations(self):
        _, rho = iterations_vs_length(pd.DataFrame({"length": [1, 2, 3], "iterations": [2, 2, 2]}))
        assert math.isnan(rho)

    def test_empty(self):
        with pytest.raises(ValidationError):
            iterations_vs_length([])


def lexicon_model():
    agreement = np.ones((V, V))
    agreement[C, D] = 0.2
    lexicon = {
        5: np.eye(V)[A] * 0.6 + np.eye(V)[B] * 0.4,
        6: np.eye(V)[C] * 0.9 + np.eye(V)[D] * 0.1,
        7: np.eye(V)[D] * 0.55 + np.eye(V)[A] * 0.45,
        PAD_ID: np.eye(V)[B] * 0.7 + np.eye(V)[D] * 0.3,
    }
    return LexiconTableModel(lexicon, V, [0.05, 0.05, 0.5, 0.4], agreement)


PAIRS = [(np.array([5, 6, 7]), np.array([A, C, A])), (np.array([5, 6]), np.array([A, C, B]))]


class TestEvaluate:
    def test_report(self):
        report, hypotheses, traces = evaluate(lexicon_model(), PAIRS, DecodeConfig("easy-first", length_beam=1),
                                              digest="abc")
        assert report.exact_match == 1.0
        assert report.bleu == pytest.approx(100.0)
        # steps 3 and 2
        assert report.avg_steps == pytest.approx(2.5)
        assert report.length_histogram == {3: 2.5}
        assert report.config_digest == "abc"
        assert [h.steps for h in hypotheses] == [3, 2]
        assert len(traces) == 2 and traces[1].sentence == 1
        row = report.to_row()
        assert "length_histogram" not in row and row["sentences"] == 2
        assert report.to_json()["length_histogram"] == {"3": 2.5}

    def test_misses_lower_exact_match(self):
        pairs = [PAIRS[0], (PAIRS[1][0], np.array([A, C, D]))]
        report, _, traces = evaluate(lexicon_model(), pairs, DecodeConfig("easy-first", length_beam=1),
                                     with_traces=False)
        assert report.exact_match == 0.5
        assert traces is None

    def test_nothing_to_evaluate(self):
        with pytest.raises(ValidationError):
            evaluate(lexicon_model(), [], DecodeConfig())


class TestLatencyBenchmark:
    def systems(self):
        model = lexicon_model()
        return {
            "easy-first": (model, DecodeConfig("easy-first", length_beam=1)),
            "mask-predict": (model, DecodeConfig("mask-predict", length_beam=1, max_iter=3)),
        }

    def test_speedup_column(self):
        table, traces = latency_benchmark(self.systems(), PAIRS, baseline="easy-first")
        assert table["system"].tolist() == ["easy-first", "mask-predict"]
        assert table.loc[0, "speedup"] == 1.0
        assert (table["speedup"] > 0).all()
        assert set(traces) == {"easy-first", "mask-predict"}
        assert table.loc[1, "avg_steps"] == pytest.approx(3.0)

    def test_unknown_baseline(self):
        with pytest.raises(ValidationError):
            latency_benchmark(self.systems(), PAIRS, baseline="ar-beam")
