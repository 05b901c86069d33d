"""
diagnostics.py
==============
Randomized property checks run against a live model.

1. ``leakage_check``: perturbing target tokens that row n does not observe
   (including Y_n itself) must leave row n's logits unchanged
2. ``one_shot_equivalence``: one masked pass equals N separate passes in
   which each row is fed only the tokens it observes
3. ``model_grad_check``: central differences on the full training loss
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import EOS_ID, SPECIAL_TOKENS, Batch
from .errors import ValidationError
from .masks import cloze_mask, cmlm_mask, from_order_mask, permutation_ranks, sample_disco_mask
from .model import VisibilityMask
from .numerics import RngStream, Tensor, grad_check, no_grad

logger = logging.getLogger(__name__)

MASK_KINDS = ("cycle", "cloze", "disco-random", "permutation")
MAX_TRIAL_LENGTH = 12


@dataclass
class LeakageReport:
    trials: int
    max_deviation: float
    worst_kind: str

    def passed(self, tolerance=1e-9):
        return self.max_deviation <= tolerance


def _random_ids(gen, vocab_size, size):
    low = min(len(SPECIAL_TOKENS), vocab_size - 1)
    return gen.integers(low, vocab_size, size=size)


def _trial_mask(kind, n, gen):
    if kind == "cloze":
        return cloze_mask(n)
    if kind == "permutation":
        return from_order_mask(permutation_ranks(n, gen))
    observed = sample_disco_mask(n, gen).observed.copy()
    if kind == "cycle" and n >= 2:
        observed[0, 1] = observed[1, 0] = True
    return VisibilityMask(observed)


def _row(model, enc, tokens, mask, n, positions=None):
    with no_grad():
        logits = model.disco_forward(enc, tokens[None, :], mask, positions=positions)
    return np.asarray(logits.data if isinstance(logits, Tensor) else logits)[0, n]


def leakage_check(model, trials=100, rng=None):
    """Largest change of an unobserved-perturbed logit row over random trials."""
    rng = rng or RngStream(0)
    cfg = model.config
    limit = min(MAX_TRIAL_LENGTH, cfg.max_positions)
    worst, worst_kind = 0.0, ""
    for trial in range(trials):
        gen = rng.substream("leak", trial).generator()
        kind = MASK_KINDS[trial % len(MASK_KINDS)]
        n = int(gen.integers(2 if kind == "cycle" else 1, limit + 1)) if limit >= 2 else 1
        src = _random_ids(gen, cfg.vocab_size_src, int(gen.integers(1, limit + 1)))
        mask = _trial_mask(kind, n, gen)
        tokens = _random_ids(gen, cfg.vocab_size_tgt, n)
        row = int(gen.integers(0, n))
        perturbed = tokens.copy()
        hidden = ~mask.observed[row]
        perturbed[hidden] = _random_ids(gen, cfg.vocab_size_tgt, int(hidden.sum()))
        with no_grad():
            enc = model.encode(src[None, :])
        deviation = float(np.max(np.abs(_row(model, enc, tokens, mask, row) - _row(model, enc, perturbed, mask, row))))
        if deviation >= worst:
            worst, worst_kind = deviation, kind
    logger.info("leakage check: %d trials, max deviation %.3e (%s)", trials, worst, worst_kind)
    return LeakageReport(trials, worst, worst_kind)


def row_oracle_logits(model, enc, tokens, mask):
    """Row n from a pass fed only the observed tokens of row n plus a query slot at n."""
    tokens = np.asarray(tokens, dtype=np.int64)
    rows = []
    for n in range(len(tokens)):
        seen = mask.row(n)
        width = len(seen) + 1
        observed = np.zeros((width, width), dtype=bool)
        observed[-1, :-1] = True
        fed = np.append(tokens[seen], EOS_ID)
        rows.append(_row(model, enc, fed, VisibilityMask(observed), width - 1,
                         positions=np.append(seen, n)))
    return np.stack(rows)


def one_shot_equivalence(model, trials=20, rng=None):
    """Largest gap between the masked one-shot pass and the per-row oracle."""
    rng = rng or RngStream(0)
    cfg = model.config
    limit = min(MAX_TRIAL_LENGTH, cfg.max_positions)
    worst = 0.0
    for trial in range(trials):
        gen = rng.substream("one-shot", trial).generator()
        n = int(gen.integers(1, limit + 1))
        src = _random_ids(gen, cfg.vocab_size_src, int(gen.integers(1, limit + 1)))
        tokens = _random_ids(gen, cfg.vocab_size_tgt, n)
        mask = sample_disco_mask(n, gen)
        with no_grad():
            enc = model.encode(src[None, :])
            full = np.asarray(model.disco_forward(enc, tokens[None, :], mask).data)[0]
        worst = max(worst, float(np.max(np.abs(full - row_oracle_logits(model, enc, tokens, mask)))))
    return worst


def model_grad_check(model, coordinates=200, rng=None, sentences=2):
    """Worst relative error of the training-loss gradient on random coordinates.

    Masks are drawn once so the loss is a fixed function of the parameters.
    """
    from .trainer import ar_loss, cmlm_loss, disco_loss

    if model.training:
        raise ValidationError("gradient checks need the model in eval mode (no dropout)")
    if model.config.precision != 64:
        logger.warning("finite differences at 32-bit precision are not meaningful")
    rng = rng or RngStream(0)
    gen = rng.substream("grad-check").generator()
    cfg = model.config
    # ar targets gain an EOS slot
    limit = min(6, cfg.max_positions - int(cfg.decoder == "ar"), cfg.max_length_bins)
    pairs = [(_random_ids(gen, cfg.vocab_size_src, int(gen.integers(1, limit + 1))),
              _random_ids(gen, cfg.vocab_size_tgt, int(gen.integers(1, limit + 1))))
             for _ in range(sentences)]
    batch = Batch.from_pairs(pairs)
    if cfg.decoder == "disco":
        masks = [sample_disco_mask(int(n), gen) for n in batch.tgt_lengths]
        loss = lambda: disco_loss(model, batch, masks=masks)  # noqa: E731
    elif cfg.decoder == "cmlm":
        masked = [cmlm_mask(int(n), gen)[1] for n in batch.tgt_lengths]
        loss = lambda: cmlm_loss(model, batch, masked=masked)  # noqa: E731
    else:
        loss = lambda: ar_loss(model, batch)  # noqa: E731
    error = grad_check(loss, model.parameters(), coordinates=coordinates, generator=gen)
    logger.info("gradient check on %d coordinates: max relative error %.3e", coordinates, error)
    return error
