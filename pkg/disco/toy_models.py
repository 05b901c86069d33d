"""
toy_models.py
=============
Hand-written probability tables that speak the same interface as ``Model``.

They have no parameters, so decoding traces can be worked out by hand:

- ``LexiconTableModel``: position-aligned lexicon with neighbour agreement
- ``TwoModeTableModel``: two-word phrases with two valid readings
  ("Hong Kong" / "New York"); either word alone is ambiguous
- ``MarkovTableModel``: first-order autoregressive transition table
- ``CopyTableModel``: autoregressive model that copies its source

Every table model decides row n only from the tokens the mask lets row n
see, so none of them can leak.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EOS_ID, PAD_ID, SPECIAL_TOKENS
from .errors import ValidationError

FIRST_WORD_ID = len(SPECIAL_TOKENS)
FLOOR = 1e-6


@dataclass
class ToyConfig:
    vocab_size_tgt: int
    max_length_bins: int
    max_positions: int = 32
    decoder: str = "disco"
    contextless_kv: bool = False


def _log(probs):
    probs = np.maximum(np.asarray(probs, dtype=np.float64), FLOOR)
    return np.log(probs / probs.sum(axis=-1, keepdims=True))


class TableModel:
    """Non-autoregressive base: subclasses define ``distribution``."""

    def __init__(self, vocab_size, length_probs, max_positions=32):
        length_probs = np.asarray(length_probs, dtype=np.float64)
        self.config = ToyConfig(vocab_size, len(length_probs), max_positions)
        self.length_probs = length_probs / length_probs.sum()
        self.training = False

    def encode(self, src):
        return np.atleast_2d(np.asarray(src, dtype=np.int64))

    def predict_length(self, enc):
        return np.repeat(_log(self.length_probs)[None, :], enc.shape[0], axis=0)

    def distribution(self, src, n, length, visible):
        """Probabilities over the target vocabulary for position n; ``visible`` maps position -> token."""
        raise NotImplementedError

    def disco_forward(self, enc, tokens, mask, positions=None, generator=None):
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        batch, n = tokens.shape
        observed = getattr(mask, "observed", mask)
        observed = np.broadcast_to(np.asarray(observed, dtype=bool), (batch, n, n))
        out = np.zeros((batch, n, self.config.vocab_size_tgt))
        for b in range(batch):
            src = enc[min(b, enc.shape[0] - 1)]
            for row in range(n):
                visible = {int(m): int(tokens[b, m]) for m in np.flatnonzero(observed[b, row])}
                out[b, row] = _log(self.distribution(src, row, n, visible))
        return out


class LexiconTableModel(TableModel):
    """P(y_n) proportional to lexicon[src_n] times agreement with visible neighbours.

    ``lexicon`` maps a source id to a probability vector over target ids.
    ``agreement[a, c]`` weighs target ``c`` directly after target ``a``.
    Positions past the source end use ``lexicon[PAD_ID]`` when given.
    """

    def __init__(self, lexicon, vocab_size, length_probs, agreement=None, max_positions=32):
        super().__init__(vocab_size, length_probs, max_positions)
        self.lexicon = {int(k): np.asarray(v, dtype=np.float64) for k, v in lexicon.items()}
        self.agreement = None if agreement is None else np.asarray(agreement, dtype=np.float64)

    def distribution(self, src, n, length, visible):
        word = int(src[n]) if n < len(src) else PAD_ID
        if word not in self.lexicon:
            raise ValidationError(f"no lexicon entry for source id {word}")
        probs = self.lexicon[word].copy()
        if self.agreement is not None:
            if n - 1 in visible:
                probs = probs * self.agreement[visible[n - 1], :]
            if n + 1 in visible:
                probs = probs * self.agreement[:, visible[n + 1]]
        return probs / probs.sum()


class TwoModeTableModel(TableModel):
    """Two-position phrases "Hong Kong" and "New York".

    Alone, each position slightly prefers the first-mode word for position 0
    and the second-mode word for position 1, producing "Hong York". A visible
    partner word pins the phrase with probability ``pinned``.
    """

    WORDS = ("Hong", "Kong", "New", "York")
    HONG, KONG, NEW, YORK = range(FIRST_WORD_ID, FIRST_WORD_ID + 4)

    def __init__(self, lean=0.51, pinned=0.9):
        super().__init__(FIRST_WORD_ID + len(self.WORDS), [0.0, 1.0])
        self.lean = lean
        self.pinned = pinned

    def vocabulary(self):
        from .data import Vocabulary
        return Vocabulary(self.WORDS)

    def distribution(self, src, n, length, visible):
        probs = np.zeros(self.config.vocab_size_tgt)
        hong_kong, new_york = (self.HONG, self.NEW) if n == 0 else (self.KONG, self.YORK)
        partner = visible.get(1 - n)
        if partner is None:
            leaning, other = (hong_kong, new_york) if n == 0 else (new_york, hong_kong)
            probs[leaning], probs[other] = self.lean, 1.0 - self.lean
        elif partner in (self.HONG, self.KONG):
            probs[hong_kong], probs[new_york] = self.pinned, 1.0 - self.pinned
        else:
            probs[new_york], probs[hong_kong] = self.pinned, 1.0 - self.pinned
        return probs


class ARTableModel:
    """Autoregressive base: row n scores token n from the tokens before it."""

    def __init__(self, vocab_size, max_positions=32):
        self.config = ToyConfig(vocab_size, 1, max_positions, decoder="ar")
        self.training = False

    def encode(self, src):
        return np.atleast_2d(np.asarray(src, dtype=np.int64))

    def next_distribution(self, src, prefix):
        raise NotImplementedError

    def vanilla_ar_forward(self, enc, tokens, generator=None):
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        batch, n = tokens.shape
        out = np.zeros((batch, n, self.config.vocab_size_tgt))
        for b in range(batch):
            src = enc[min(b, enc.shape[0] - 1)]
            for row in range(n):
                out[b, row] = _log(self.next_distribution(src, tuple(int(x) for x in tokens[b, :row])))
        return out


class MarkovTableModel(ARTableModel):
    """``transitions[state]`` is a probability vector over target ids (EOS ends).

    State is the previous token, or ``start`` for the first position.
    """

    def __init__(self, transitions, start, vocab_size, max_positions=32):
        super().__init__(vocab_size, max_positions)
        self.transitions = {int(k): np.asarray(v, dtype=np.float64) for k, v in transitions.items()}
        self.start = int(start)

    def next_distribution(self, src, prefix):
        state = prefix[-1] if prefix else self.start
        if state not in self.transitions:
            return np.eye(self.config.vocab_size_tgt)[EOS_ID]
        return self.transitions[state]

    def sequence_log_prob(self, tokens):
        """Log-probability of ``tokens`` followed by EOS."""
        total, prefix = 0.0, ()
        for token in list(tokens) + [EOS_ID]:
            total += float(_log(self.next_distribution(None, prefix))[token])
            prefix = prefix + (int(token),)
        return total


class CopyTableModel(ARTableModel):
    """Emits the source token at each position, then EOS, with probability ``confidence``."""

    def __init__(self, vocab_size, confidence=0.9, max_positions=32):
        super().__init__(vocab_size, max_positions)
        self.confidence = confidence

    def next_distribution(self, src, prefix):
        src = [int(x) for x in src if x != PAD_ID]
        probs = np.full(self.config.vocab_size_tgt, (1.0 - self.confidence) / (self.config.vocab_size_tgt - 1))
        target = src[len(prefix)] if len(prefix) < len(src) else EOS_ID
        probs[target] = self.confidence
        return probs
