"""
distillation.py
===============
Sequence-level knowledge distillation from an autoregressive teacher.

1. ``tune_length_penalty`` sweeps alpha over 0.0, 0.2, ..., 2.0 and keeps the
   value with the best dev BLEU (ties to the smaller alpha)
2. ``distill_corpus`` replaces every training target with the teacher's
   beam-search output
"""

from __future__ import annotations

import logging

import numpy as np
import pandas as pd
from sklearn.model_selection import ParameterGrid
from tqdm import tqdm

from .evaluation import bleu
from .inference import ar_beam_search

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = tuple(round(0.2 * i, 1) for i in range(11))


def tune_length_penalty(teacher, dev_pairs, alphas=DEFAULT_ALPHAS, beam=5, progress=False):
    """Returns ``(best_alpha, table)`` with one BLEU row per alpha."""
    references = [[str(int(x)) for x in tgt] for _, tgt in dev_pairs]
    rows = []
    for params in tqdm(list(ParameterGrid({"alpha": list(alphas)})), desc="alpha", disable=not progress):
        outputs = [ar_beam_search(teacher, src, beam, params["alpha"]).tokens for src, _ in dev_pairs]
        candidates = [[str(int(x)) for x in out] for out in outputs]
        rows.append({"alpha": params["alpha"], "bleu": bleu(candidates, references)})
    table = pd.DataFrame(rows).sort_values("alpha").reset_index(drop=True)
    best = float(table.loc[table["bleu"].idxmax(), "alpha"])
    logger.info("length penalty %.1f selected (dev BLEU %.2f)", best, table["bleu"].max())
    return best, table


def distill_corpus(teacher, corpus, beam=5, length_penalty=1.0, splits=("train",), progress=False):
    """Copy of ``corpus`` whose ``splits`` targets are the teacher's beam outputs.

    An empty teacher output keeps the original target.
    """
    distilled = corpus
    for split in splits:
        pairs = corpus.pairs(split)
        targets, kept = [], 0
        for src, tgt in tqdm(pairs, desc=f"distill[{split}]", disable=not progress):
            output = ar_beam_search(teacher, src, beam, length_penalty).tokens
            if output.size == 0 or output.size > corpus.max_positions:
                targets.append(tgt)
                kept += 1
            else:
                targets.append(output)
        if kept:
            logger.warning("%s: kept %d original targets where the teacher output was unusable", split, kept)
        changed = sum(int(not np.array_equal(a, b)) for a, (_, b) in zip(targets, pairs))
        logger.info("%s: teacher changed %d of %d targets", split, changed, len(pairs))
        distilled = distilled.with_targets(split, targets)
    return distilled
