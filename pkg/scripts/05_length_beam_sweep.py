#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
05_length_beam_sweep.py
=======================
Sensitivity of non-autoregressive decoding to the length beam and the
iteration cap.

This script:
1. Sweeps length beam K and max iterations T over a parameter grid
2. Decodes the reverse test set with easy-first (DisCo) and mask-predict (CMLM)
3. Reports the K and T that maximize BLEU for each algorithm
"""

import dataclasses
import os
import sys
import warnings

import pandas as pd
from sklearn.model_selection import ParameterGrid

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from disco.config import load_config
from disco.data import load_corpus
from disco.evaluation import evaluate
from disco.model import load_checkpoint

warnings.filterwarnings('ignore')

# =============================================================================
# CONFIGURATION
# =============================================================================

CONFIG = '../configs/desk.yaml'
DATA_DIR = '../results/data/'
RUNS_DIR = '../results/runs/'
TABLES_DIR = '../results/tables/'
TASK = 'reverse'
TEST_SENTENCES = 200
GRID = {'length_beam': [1, 2, 3, 5, 7], 'max_iter': [1, 2, 4, 10]}
SYSTEMS = [('disco', 'easy-first'), ('cmlm', 'mask-predict')]


def main():
    print("=" * 60)
    print(f"LENGTH BEAM SWEEP ({TASK})")
    print("=" * 60)

    os.makedirs(TABLES_DIR, exist_ok=True)
    base = load_config(CONFIG).decode
    corpus = load_corpus(os.path.join(DATA_DIR, TASK))
    pairs = corpus.pairs('test')[:TEST_SENTENCES]

    rows = []
    for run, algorithm in SYSTEMS:
        model, _ = load_checkpoint(os.path.join(RUNS_DIR, TASK, run, 'model.npz'))
        model.eval()
        print(f"\n{run} / {algorithm}:")
        for params in ParameterGrid(GRID):
            config = dataclasses.replace(base, algorithm=algorithm, **params)
            report, _, _ = evaluate(model, pairs, config, corpus.tgt_vocab, with_traces=False)
            rows.append({'system': run, **params, **report.to_row()})
            print(f"  K={params['length_beam']} T={params['max_iter']:>2}: "
                  f"BLEU {report.bleu:6.2f} | steps {report.avg_steps:.2f}")

    table = pd.DataFrame(rows)
    table.to_csv(os.path.join(TABLES_DIR, 'length_beam_sweep.csv'), index=False)

    print("\n" + "=" * 60)
    print("BEST SETTINGS")
    print("=" * 60)
    for system, group in table.groupby('system'):
        best = group.loc[group['bleu'].idxmax()]
        print(f"  {system:<6} K={int(best['length_beam'])} T={int(best['max_iter'])} BLEU {best['bleu']:.2f}")

    print("\n✓ Length beam sweep complete!")


if __name__ == "__main__":
    main()
