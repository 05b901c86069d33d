#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
08_batch_size_sweep.py
======================
Robustness of the DisCo and CMLM objectives to the token budget per batch.

This script:
1. Trains DisCo (random masks) and CMLM on the reverse task at several
   tokens-per-batch budgets with the same number of updates
2. Decodes the test set with easy-first and mask-predict respectively
3. Reports exact match and BLEU per (objective, budget)
"""

import logging
import os
import sys
import warnings

import pandas as pd
from sklearn.model_selection import ParameterGrid

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from disco.config import config_digest, load_config
from disco.data import load_corpus
from disco.evaluation import evaluate
from disco.model import Model
from disco.trainer import train

warnings.filterwarnings('ignore')
logging.basicConfig(level=logging.WARNING, format="%(asctime)s | %(levelname)s | %(name)s | %(message)s")

# =============================================================================
# CONFIGURATION
# =============================================================================

CONFIG = '../configs/desk.yaml'
DATA_DIR = '../results/data/'
RUNS_DIR = '../results/runs/batch_sweep/'
TABLES_DIR = '../results/tables/'
TASK = 'reverse'
TEST_SENTENCES = 200
MAX_STEPS = 2000
GRID = {
    'objective': ['disco-random', 'cmlm'],
    'tokens_per_batch': [256, 512, 1024, 2048],
}
SETUP = {
    'disco-random': ('disco', 'easy-first'),
    'cmlm': ('cmlm', 'mask-predict'),
}


def main():
    print("=" * 60)
    print(f"BATCH SIZE SWEEP ({TASK}, {MAX_STEPS} updates each)")
    print("=" * 60)

    os.makedirs(TABLES_DIR, exist_ok=True)
    corpus = load_corpus(os.path.join(DATA_DIR, TASK))
    pairs = corpus.pairs('test')[:TEST_SENTENCES]
    rows = []
    for params in ParameterGrid(GRID):
        decoder, algorithm = SETUP[params['objective']]
        cfg = load_config(CONFIG, [
            f"data.task={TASK}", f"model.decoder={decoder}", f"train.objective={params['objective']}",
            f"train.tokens_per_batch={params['tokens_per_batch']}", f"train.max_steps={MAX_STEPS}",
            f"decode.algorithm={algorithm}", "train.progress=false",
        ])
        out = os.path.join(RUNS_DIR, f"{params['objective']}_{params['tokens_per_batch']}")
        model = Model(cfg.model_for(len(corpus.src_vocab), len(corpus.tgt_vocab)), seed=cfg.seed)
        result = train(model, corpus, cfg.train, out, cfg.decode, config_digest(cfg))
        report, _, _ = evaluate(result.model, pairs, cfg.decode, corpus.tgt_vocab, with_traces=False)
        rows.append({**params, 'decoder': decoder, 'algorithm': algorithm,
                     'epochs': int(result.history['epoch'].max()), **report.to_row()})
        print(f"  {params['objective']:<13} {params['tokens_per_batch']:>5} tokens: "
              f"EM {report.exact_match:.3f} | BLEU {report.bleu:6.2f}")

    table = pd.DataFrame(rows)
    table.to_csv(os.path.join(TABLES_DIR, 'batch_size_sweep.csv'), index=False)

    print("\n" + "=" * 60)
    print("EXACT MATCH BY BUDGET")
    print("=" * 60)
    wide = table.pivot(index='tokens_per_batch', columns='objective', values='exact_match')
    print(wide.to_string(float_format=lambda v: f"{v:.3f}"))

    print("\n✓ Batch size sweep complete!")


if __name__ == "__main__":
    main()
