import numpy as np
import pytest
from numpy.testing import assert_array_equal

from disco.data import (EOS_ID, PAD_ID, UNK_ID, Batch, CorpusBundle, TaskSpec, Vocabulary, as_batch,
                        batch_by_tokens, describe_corpus, generate_corpus, load_corpus,
                        measure_target_entropy, read_parallel_text, sample_target, save_corpus)
from disco.errors import FormatError, LengthError, TokenIndexError, ValidationError
from disco.numerics import RngStream


class TestVocabulary:
    def test_specials_come_first(self):
        vocab = Vocabulary(["a", "b"])
        assert vocab.tokens[:5] == ["<pad>", "</s>", "<unk>", "<len>", "<mask>"]
        assert vocab.encode(["b", "zzz"]).tolist() == [6, UNK_ID]

    def test_build_orders_by_frequency_then_token(self):
        vocab = Vocabulary.build([["b", "a", "c"], ["c", "a"], ["c"]])
        assert vocab.tokens[5:] == ["c", "a", "b"]

    def test_decode_strips_at_eos(self):
        vocab = Vocabulary(["a", "b"])
        assert vocab.decode([5, PAD_ID, 6, EOS_ID, 5]) == ["a", "b"]
        assert vocab.decode([5, EOS_ID], strip=False) == ["a", "</s>"]
        with pytest.raises(TokenIndexError):
            vocab.decode([42])

    def test_save_load(self, tmp_path):
        vocab = Vocabulary(["x", "y", "z"])
        vocab.save(tmp_path / "vocab")
        assert Vocabulary.load(tmp_path / "vocab") == vocab

    def test_load_rejects_bad_lines(self, tmp_path):
        path = tmp_path / "vocab"
        path.write_text("a\nb c\n", encoding="utf-8")
        with pytest.raises(FormatError, match=":2:"):
            Vocabulary.load(path)

    def test_duplicates_rejected(self):
        with pytest.raises(ValidationError):
            Vocabulary(["a", "a"])


class TestTasks:
    @pytest.mark.parametrize("task, expected", [
        ("copy", ["3", "1", "2"]),
        ("reverse", ["2", "1", "3"]),
        ("sorted-digits", ["1", "2", "3"]),
    ])
    def test_deterministic_tasks(self, task, expected):
        spec = TaskSpec(task, vocab_size=5)
        assert sample_target(spec, ["3", "1", "2"], np.random.default_rng(0)) == expected

    def test_lexicon_translations_come_from_table(self):
        spec = TaskSpec("ambiguous-lexicon", ambiguity={"a": ["x", "y"], "b": ["z"]}, swap_prob=0.0)
        gen = np.random.default_rng(0)
        seen = {tuple(sample_target(spec, ["a", "b"], gen)) for _ in range(50)}
        assert seen == {("x", "z"), ("y", "z")}

    def test_lexicon_translation_frequencies(self):
        spec = TaskSpec("ambiguous-lexicon", ambiguity={"a": ["x", "y"]}, swap_prob=0.0)
        gen = np.random.default_rng(5)
        draws = [sample_target(spec, ["a"], gen)[0] for _ in range(10_000)]
        assert draws.count("x") / len(draws) == pytest.approx(0.5, abs=0.02)
        assert draws.count("y") / len(draws) == pytest.approx(0.5, abs=0.02)

    def test_lexicon_swaps_neighbours(self):
        spec = TaskSpec("ambiguous-lexicon", ambiguity={"a": ["x"], "b": ["z"]}, swap_prob=1.0)
        assert sample_target(spec, ["a", "b", "a"], np.random.default_rng(0)) == ["z", "x", "x"]

    def test_default_lexicon_has_ambiguous_words(self):
        spec = TaskSpec("ambiguous-lexicon", vocab_size=16)
        sizes = {len(v) for v in spec.ambiguity.values()}
        assert sizes == {1, 2}

    @pytest.mark.parametrize("kwargs", [dict(task="sort"), dict(min_length=0), dict(min_length=5, max_length=3),
                                        dict(swap_prob=1.5), dict(task="ambiguous-lexicon", ambiguity={"a": []})])
    def test_invalid_specs(self, kwargs):
        with pytest.raises(ValidationError):
            TaskSpec(**kwargs)

    def test_entropy_separates_tasks(self):
        assert measure_target_entropy(TaskSpec("reverse", vocab_size=8), num_sources=5, samples=20) == 0.0
        lexicon = TaskSpec("ambiguous-lexicon", vocab_size=8, seed=4)
        assert measure_target_entropy(lexicon, num_sources=5, samples=50) > 0.1


class TestCorpus:
    def test_generation_is_seed_deterministic(self):
        spec = TaskSpec("reverse", vocab_size=6, min_length=2, max_length=4, seed=3)
        a = generate_corpus(spec, {"train": 10})
        b = generate_corpus(spec, {"train": 10})
        for (sa, ta), (sb, tb) in zip(a.pairs("train"), b.pairs("train")):
            assert_array_equal(sa, sb)
            assert_array_equal(ta, tb)
            assert_array_equal(ta, sa[::-1])

    def test_lengths_within_range(self, copy_corpus):
        lengths = [len(s) for s, _ in copy_corpus.pairs("train")]
        assert min(lengths) >= 1 and max(lengths) <= 5

    def test_bundle_validation(self, copy_corpus):
        src, tgt = copy_corpus.pairs("train")[0]
        vocab = copy_corpus.src_vocab
        with pytest.raises(LengthError):
            CorpusBundle(vocab, vocab, {"train": [(np.full(11, 5), tgt)]}, max_positions=10)
        with pytest.raises(TokenIndexError):
            CorpusBundle(vocab, vocab, {"train": [(src, np.array([99]))]})
        with pytest.raises(ValidationError):
            CorpusBundle(vocab, vocab, {"valid": [(src, tgt)]})

    def test_with_targets(self, copy_corpus):
        targets = [np.array([5]) for _ in copy_corpus.pairs("dev")]
        updated = copy_corpus.with_targets("dev", targets)
        assert all(t.tolist() == [5] for _, t in updated.pairs("dev"))
        with pytest.raises(ValidationError):
            copy_corpus.with_targets("dev", targets[:-1])

    def test_describe(self, copy_corpus):
        table = describe_corpus(copy_corpus)
        assert table["split"].tolist() == ["train", "dev", "test"]
        assert table["pairs"].tolist() == [40, 6, 6]

    def test_save_load_round_trip(self, tmp_path, lexicon_corpus):
        save_corpus(lexicon_corpus, tmp_path)
        loaded = load_corpus(tmp_path, max_positions=16)
        assert loaded.tgt_vocab == lexicon_corpus.tgt_vocab
        for (sa, ta), (sb, tb) in zip(lexicon_corpus.pairs("test"), loaded.pairs("test")):
            assert_array_equal(sa, sb)
            assert_array_equal(ta, tb)

    def test_load_builds_vocab_without_files(self, tmp_path):
        (tmp_path / "train.src").write_text("a b\nb\n", encoding="utf-8")
        (tmp_path / "train.tgt").write_text("x\ny y\n", encoding="utf-8")
        (tmp_path / "test.src").write_text("c\n", encoding="utf-8")
        (tmp_path / "test.tgt").write_text("x\n", encoding="utf-8")
        corpus = load_corpus(tmp_path)
        assert corpus.src_vocab.tokens[5:] == ["b", "a"]
        assert corpus.pairs("test")[0][0].tolist() == [UNK_ID]

    def test_load_errors(self, tmp_path):
        with pytest.raises(FormatError):
            load_corpus(tmp_path)
        (tmp_path / "a.src").write_text("a\nb\n", encoding="utf-8")
        (tmp_path / "a.tgt").write_text("a\n\n", encoding="utf-8")
        with pytest.raises(FormatError, match="a.tgt:2"):
            read_parallel_text(tmp_path / "a.src", tmp_path / "a.tgt")
        (tmp_path / "a.tgt").write_text("a\n", encoding="utf-8")
        with pytest.raises(FormatError):
            read_parallel_text(tmp_path / "a.src", tmp_path / "a.tgt")


class TestBatching:
    def pairs(self, lengths):
        return [(np.full(n, 5), np.full(n, 6)) for n in lengths]

    def test_budget_respected(self):
        pairs = self.pairs([1, 2, 3, 4, 5, 6, 7, 8, 3, 3, 2])
        batches = batch_by_tokens(pairs, 10, RngStream(0))
        assert all(b.num_tokens <= 10 for b in batches)
        covered = sorted(i for b in batches for i in b.indices.tolist())
        assert covered == list(range(len(pairs)))

    def test_single_sentence(self):
        batches = batch_by_tokens(self.pairs([4]), 4)
        assert len(batches) == 1 and batches[0].size == 1

    def test_over_budget_sentence(self):
        with pytest.raises(LengthError):
            batch_by_tokens(self.pairs([2, 9]), 8)

    def test_deterministic_given_seed_and_epoch(self):
        pairs = self.pairs(np.random.default_rng(0).integers(1, 9, size=30))
        first = [b.indices.tolist() for b in batch_by_tokens(pairs, 16, RngStream(5), epoch=1)]
        again = [b.indices.tolist() for b in batch_by_tokens(pairs, 16, RngStream(5), epoch=1)]
        other = [b.indices.tolist() for b in batch_by_tokens(pairs, 16, RngStream(5), epoch=2)]
        assert first == again
        assert first != other

    def test_padding_and_pairs(self):
        batch = Batch.from_pairs([(np.array([5, 6]), np.array([7])), (np.array([5]), np.array([7, 8, 9]))])
        assert batch.src.tolist() == [[5, 6], [5, PAD_ID]]
        assert batch.tgt_valid().tolist() == [[True, False, False], [True, True, True]]
        assert [t.tolist() for _, t in batch.pairs()] == [[7], [7, 8, 9]]

    def test_as_batch_forms(self):
        assert as_batch([5, 6], [7]).size == 1
        assert as_batch([[5], [6, 7]], [[7], [8]]).size == 2
        with pytest.raises(ValidationError):
            as_batch([5, 6])
