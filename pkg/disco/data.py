"""
data.py
=======
Synthetic parallel corpora, vocabularies, token batching and text IO.

This module:
1. Defines the special-token table shared by source and target vocabularies
2. Generates the copy, reverse, sorted-digits and ambiguous-lexicon tasks
3. Groups sentence pairs into length-bucketed batches under a token budget
4. Reads and writes aligned parallel text files and vocabulary files

File formats are documented in docs/CODEBOOK.md.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import FormatError, LengthError, TokenIndexError, ValidationError
from .numerics import RngStream

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIGURATION
# =============================================================================

SPECIAL_TOKENS = ("<pad>", "</s>", "<unk>", "<len>", "<mask>")
PAD_ID, EOS_ID, UNK_ID, LENGTH_ID, MASK_ID = range(len(SPECIAL_TOKENS))

SPLITS = ("train", "dev", "test")
TASKS = ("copy", "reverse", "sorted-digits", "ambiguous-lexicon")
SWAP_PROB = 0.3

Pair = Tuple[np.ndarray, np.ndarray]


# =============================================================================
# VOCABULARY
# =============================================================================

class Vocabulary:
    """Token <-> id table; ids below ``len(SPECIAL_TOKENS)`` are the specials."""

    def __init__(self, words=()):
        self.tokens = list(SPECIAL_TOKENS) + [w for w in words if w not in SPECIAL_TOKENS]
        self.index = {token: i for i, token in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValidationError("vocabulary contains duplicate tokens")

    @classmethod
    def build(cls, sentences, min_freq=1):
        """Most frequent first, ties alphabetical; words below ``min_freq`` are dropped."""
        counts = Counter(word for sentence in sentences for word in sentence)
        words = sorted((w for w, c in counts.items() if c >= min_freq and w not in SPECIAL_TOKENS),
                       key=lambda w: (-counts[w], w))
        return cls(words)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, word):
        return word in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, words):
        return np.array([self.index.get(w, UNK_ID) for w in words], dtype=np.int64)

    def decode(self, ids, strip=True):
        """Ids to words. With ``strip``, stops at EOS and drops PAD."""
        words = []
        for i in np.asarray(ids).reshape(-1):
            i = int(i)
            if strip and i == EOS_ID:
                break
            if strip and i == PAD_ID:
                continue
            if not 0 <= i < len(self.tokens):
                raise TokenIndexError(f"id {i} outside vocabulary of size {len(self.tokens)}")
            words.append(self.tokens[i])
        return words

    def save(self, path):
        """One token per line; line k (0-based) holds id ``len(SPECIAL_TOKENS) + k``."""
        body = self.tokens[len(SPECIAL_TOKENS):]
        Path(path).write_text("".join(f"{t}\n" for t in body), encoding="utf-8")

    @classmethod
    def load(cls, path):
        words = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            token = line.strip()
            if not token or len(token.split()) != 1:
                raise FormatError("vocabulary lines must hold exactly one token", path, lineno)
            words.append(token)
        return cls(words)


# =============================================================================
# CORPUS
# =============================================================================

@dataclass
class CorpusBundle:
    """Vocabularies plus id-encoded sentence pairs for each split."""

    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    splits: Dict[str, List[Pair]]
    max_positions: int = 64

    def __post_init__(self):
        for split, pairs in self.splits.items():
            if split not in SPLITS:
                raise ValidationError(f"unknown split '{split}'")
            for k, (src, tgt) in enumerate(pairs):
                for side, ids, vocab in (("source", src, self.src_vocab), ("target", tgt, self.tgt_vocab)):
                    if len(ids) == 0:
                        raise ValidationError(f"{split}[{k}]: empty {side} sentence")
                    if len(ids) > self.max_positions:
                        raise LengthError(f"{split}[{k}]: {side} length {len(ids)} > {self.max_positions}")
                    if ids.min() < 0 or ids.max() >= len(vocab):
                        raise TokenIndexError(f"{split}[{k}]: {side} id outside vocabulary")

    def pairs(self, split):
        return self.splits.get(split, [])

    def with_targets(self, split, targets):
        """Copy of the bundle with ``split`` targets replaced (sentence count must match)."""
        pairs = self.pairs(split)
        if len(targets) != len(pairs):
            raise ValidationError(f"{len(targets)} targets for {len(pairs)} sentences")
        splits = dict(self.splits)
        splits[split] = [(src, np.asarray(tgt, dtype=np.int64)) for (src, _), tgt in zip(pairs, targets)]
        return CorpusBundle(self.src_vocab, self.tgt_vocab, splits, self.max_positions)

    def to_frame(self, split):
        rows = [{
            "source": " ".join(self.src_vocab.decode(src)),
            "target": " ".join(self.tgt_vocab.decode(tgt)),
            "source_length": len(src),
            "target_length": len(tgt),
        } for src, tgt in self.pairs(split)]
        return pd.DataFrame(rows, columns=["source", "target", "source_length", "target_length"])


def describe_corpus(bundle):
    """Per-split sizes and length statistics."""
    rows = []
    for split in SPLITS:
        frame = bundle.to_frame(split)
        if frame.empty:
            continue
        rows.append({
            "split": split,
            "pairs": len(frame),
            "distinct_sources": frame["source"].nunique(),
            "source_length_mean": frame["source_length"].mean(),
            "source_length_sd": frame["source_length"].std(ddof=1) if len(frame) > 1 else 0.0,
            "target_length_mean": frame["target_length"].mean(),
            "target_length_max": frame["target_length"].max(),
            "src_vocab": len(bundle.src_vocab),
            "tgt_vocab": len(bundle.tgt_vocab),
        })
    return pd.DataFrame(rows)


# =============================================================================
# SYNTHETIC TASKS
# =============================================================================

def default_lexicon(vocab_size, seed):
    """Every other source word (chosen by seed) gets two translations."""
    gen = RngStream(seed).substream("lexicon").generator()
    ambiguous = gen.random(vocab_size) < 0.5
    table = {}
    for i in range(vocab_size):
        table[f"s{i}"] = [f"t{2 * i}", f"t{2 * i + 1}"] if ambiguous[i] else [f"t{2 * i}"]
    return table


@dataclass
class TaskSpec:
    task: str = "copy"
    vocab_size: int = 32
    min_length: int = 3
    max_length: int = 12
    ambiguity: Optional[Dict[str, List[str]]] = None
    seed: int = 1
    swap_prob: float = SWAP_PROB

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValidationError(f"unknown task '{self.task}', expected one of {TASKS}")
        if self.vocab_size < 1:
            raise ValidationError("vocab_size must be positive")
        if not 1 <= self.min_length <= self.max_length:
            raise ValidationError(f"bad length range [{self.min_length}, {self.max_length}]")
        if not 0.0 <= self.swap_prob <= 1.0:
            raise ValidationError("swap_prob must be a probability")
        if self.task == "ambiguous-lexicon":
            if self.ambiguity is None:
                self.ambiguity = default_lexicon(self.vocab_size, self.seed)
            if not self.ambiguity or any(len(v) == 0 for v in self.ambiguity.values()):
                raise ValidationError("every lexicon source word needs at least one translation")

    def source_words(self):
        if self.task == "ambiguous-lexicon":
            return list(self.ambiguity)
        if self.task == "sorted-digits":
            return [str(i) for i in range(self.vocab_size)]
        return [f"w{i}" for i in range(self.vocab_size)]

    def target_words(self):
        if self.task == "ambiguous-lexicon":
            return sorted({t for options in self.ambiguity.values() for t in options})
        return self.source_words()


def sample_target(spec, source, generator):
    """One draw of the task's translation process for ``source`` (a word list)."""
    if spec.task == "copy":
        return list(source)
    if spec.task == "reverse":
        return list(source[::-1])
    if spec.task == "sorted-digits":
        return sorted(source, key=int)
    target = [spec.ambiguity[w][generator.integers(len(spec.ambiguity[w]))] for w in source]
    i = 0
    while i < len(target) - 1:
        if generator.random() < spec.swap_prob:
            target[i], target[i + 1] = target[i + 1], target[i]
            i += 2
        else:
            i += 1
    return target


def _sample_source(spec, words, generator):
    length = int(generator.integers(spec.min_length, spec.max_length + 1))
    return [words[k] for k in generator.integers(0, len(words), size=length)]


def generate_corpus(spec, sizes, max_positions=64):
    """Seed-deterministic corpus; ``sizes`` maps split name to pair count."""
    for split, size in sizes.items():
        if size < 1:
            raise ValidationError(f"split '{split}' needs at least one pair")
    words = spec.source_words()
    src_vocab = Vocabulary(words)
    tgt_vocab = Vocabulary(spec.target_words())
    root = RngStream(spec.seed)
    splits = {}
    for split, size in sizes.items():
        gen = root.substream("corpus", split).generator()
        pairs = []
        for _ in range(size):
            source = _sample_source(spec, words, gen)
            target = sample_target(spec, source, gen)
            pairs.append((src_vocab.encode(source), tgt_vocab.encode(target)))
        splits[split] = pairs
    logger.info("generated %s corpus: %s", spec.task, {s: len(p) for s, p in splits.items()})
    return CorpusBundle(src_vocab, tgt_vocab, splits, max_positions)


def measure_target_entropy(spec, num_sources=50, samples=200, seed=0):
    """Mean plug-in entropy (nats) of the target distribution for fixed sources."""
    gen = RngStream(seed).substream("entropy", spec.task).generator()
    words = spec.source_words()
    entropies = []
    for _ in range(num_sources):
        source = _sample_source(spec, words, gen)
        counts = Counter(tuple(sample_target(spec, source, gen)) for _ in range(samples))
        p = np.array(list(counts.values()), dtype=np.float64) / samples
        entropies.append(float(-(p * np.log(p)).sum()))
    return float(np.mean(entropies))


# =============================================================================
# BATCHING
# =============================================================================

@dataclass
class Batch:
    """PAD-padded id matrices for a group of sentence pairs."""

    src: np.ndarray
    tgt: np.ndarray
    src_lengths: np.ndarray
    tgt_lengths: np.ndarray
    indices: np.ndarray = field(default=None)

    @classmethod
    def from_pairs(cls, pairs, indices=None):
        if not pairs:
            raise ValidationError("cannot batch zero pairs")
        src_lengths = np.array([len(s) for s, _ in pairs], dtype=np.int64)
        tgt_lengths = np.array([len(t) for _, t in pairs], dtype=np.int64)
        src = np.full((len(pairs), src_lengths.max()), PAD_ID, dtype=np.int64)
        tgt = np.full((len(pairs), tgt_lengths.max()), PAD_ID, dtype=np.int64)
        for b, (s, t) in enumerate(pairs):
            src[b, :len(s)] = s
            tgt[b, :len(t)] = t
        if indices is None:
            indices = np.arange(len(pairs))
        return cls(src, tgt, src_lengths, tgt_lengths, np.asarray(indices, dtype=np.int64))

    @property
    def size(self):
        return self.src.shape[0]

    @property
    def num_tokens(self):
        return self.size * max(self.src.shape[1], self.tgt.shape[1])

    def tgt_valid(self):
        return np.arange(self.tgt.shape[1])[None, :] < self.tgt_lengths[:, None]

    def pairs(self):
        return [(self.src[b, :self.src_lengths[b]], self.tgt[b, :self.tgt_lengths[b]])
                for b in range(self.size)]


def as_batch(src, tgt=None):
    """Accept a Batch, one (src, tgt) sentence pair, or two lists of sentences."""
    if isinstance(src, Batch):
        return src
    if tgt is None:
        raise ValidationError("targets are required unless a Batch is given")
    if len(src) and np.ndim(src[0]) == 0:
        return Batch.from_pairs([(np.asarray(src, dtype=np.int64), np.asarray(tgt, dtype=np.int64))])
    return Batch.from_pairs([(np.asarray(s, dtype=np.int64), np.asarray(t, dtype=np.int64))
                             for s, t in zip(src, tgt)])


def batch_by_tokens(pairs, tokens_per_batch, rng=None, epoch=0, shuffle=True):
    """Length-bucketed batches whose padded size B * max_len stays within budget."""
    if not pairs:
        return []
    lengths = np.array([max(len(s), len(t)) for s, t in pairs], dtype=np.int64)
    too_long = np.flatnonzero(lengths > tokens_per_batch)
    if too_long.size:
        raise LengthError(f"pair {too_long[0]} has {lengths[too_long[0]]} tokens, "
                          f"over the batch budget {tokens_per_batch}")

    order = np.arange(len(pairs))
    gen = None
    if shuffle:
        gen = (rng or RngStream(0)).substream("batches", epoch).generator()
        order = gen.permutation(len(pairs))
    order = order[np.argsort(lengths[order], kind="stable")]

    groups, current, current_max = [], [], 0
    for idx in order:
        longest = max(current_max, lengths[idx])
        if current and (len(current) + 1) * longest > tokens_per_batch:
            groups.append(current)
            current, longest = [], lengths[idx]
        current.append(int(idx))
        current_max = longest
    if current:
        groups.append(current)
    if gen is not None:
        groups = [groups[k] for k in gen.permutation(len(groups))]
    return [Batch.from_pairs([pairs[i] for i in group], indices=group) for group in groups]


# =============================================================================
# PARALLEL TEXT IO
# =============================================================================

def read_parallel_text(src_path, tgt_path):
    """Whitespace-tokenized sentence pairs from two aligned UTF-8 files."""
    src_lines = Path(src_path).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(tgt_path).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise FormatError(f"{len(src_lines)} source lines but {len(tgt_lines)} target lines",
                          tgt_path, min(len(src_lines), len(tgt_lines)) + 1)
    pairs = []
    for lineno, (s, t) in enumerate(zip(src_lines, tgt_lines), 1):
        source, target = s.split(), t.split()
        if not source:
            raise FormatError("empty sentence", src_path, lineno)
        if not target:
            raise FormatError("empty sentence", tgt_path, lineno)
        pairs.append((source, target))
    return pairs


def write_parallel_text(src_path, tgt_path, pairs):
    """Write (source words, target words) pairs, one sentence per line."""
    Path(src_path).write_text("".join(" ".join(s) + "\n" for s, _ in pairs), encoding="utf-8")
    Path(tgt_path).write_text("".join(" ".join(t) + "\n" for _, t in pairs), encoding="utf-8")


def save_corpus(bundle, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bundle.src_vocab.save(directory / "vocab.src")
    bundle.tgt_vocab.save(directory / "vocab.tgt")
    for split in SPLITS:
        pairs = bundle.pairs(split)
        if not pairs:
            continue
        words = [(bundle.src_vocab.decode(s), bundle.tgt_vocab.decode(t)) for s, t in pairs]
        write_parallel_text(directory / f"{split}.src", directory / f"{split}.tgt", words)
    logger.info("wrote corpus to %s", directory)


def load_corpus(directory, max_positions=64):
    """Read a corpus directory; vocabularies come from the vocab files when
    present, otherwise they are built from the train split (frequency >= 1).
    Unseen words map to UNK."""
    directory = Path(directory)
    text = {}
    for split in SPLITS:
        src_path, tgt_path = directory / f"{split}.src", directory / f"{split}.tgt"
        if src_path.exists() and tgt_path.exists():
            text[split] = read_parallel_text(src_path, tgt_path)
    if "train" not in text:
        raise FormatError("corpus directory has no train split", directory)
    if (directory / "vocab.src").exists() and (directory / "vocab.tgt").exists():
        src_vocab = Vocabulary.load(directory / "vocab.src")
        tgt_vocab = Vocabulary.load(directory / "vocab.tgt")
    else:
        src_vocab = Vocabulary.build(s for s, _ in text["train"])
        tgt_vocab = Vocabulary.build(t for _, t in text["train"])
    splits = {split: [(src_vocab.encode(s), tgt_vocab.encode(t)) for s, t in pairs]
              for split, pairs in text.items()}
    return CorpusBundle(src_vocab, tgt_vocab, splits, max_positions)
