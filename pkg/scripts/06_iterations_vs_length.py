#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
06_iterations_vs_length.py
==========================
How many refinement passes easy-first needs as sentences get longer.

This script:
1. Decodes every dev sentence with easy-first and a generous iteration cap
2. Tabulates mean iterations per generated length
3. Tests the monotone association with Spearman's rho
4. Contrasts with mask-predict, whose pass count is fixed by its schedule
"""

import dataclasses
import os
import sys
import warnings

import pandas as pd

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from disco.config import load_config
from disco.data import load_corpus
from disco.evaluation import evaluate, iterations_vs_length
from disco.model import load_checkpoint

warnings.filterwarnings('ignore')

# =============================================================================
# CONFIGURATION
# =============================================================================

CONFIG = '../configs/desk.yaml'
DATA_DIR = '../results/data/'
RUNS_DIR = '../results/runs/'
TABLES_DIR = '../results/tables/'
TASKS = ['copy', 'reverse', 'ambiguous-lexicon']
MAX_ITER = 20
SYSTEMS = [('disco', 'easy-first'), ('cmlm', 'mask-predict')]


def main():
    print("=" * 60)
    print("ITERATIONS VS LENGTH")
    print("=" * 60)

    os.makedirs(TABLES_DIR, exist_ok=True)
    base = load_config(CONFIG).decode
    tables, summary = [], []
    pooled = {algorithm: [] for _, algorithm in SYSTEMS}
    for task in TASKS:
        corpus = load_corpus(os.path.join(DATA_DIR, task))
        pairs = corpus.pairs('dev')
        print(f"\n{task}:")
        for run, algorithm in SYSTEMS:
            model, _ = load_checkpoint(os.path.join(RUNS_DIR, task, run, 'model.npz'))
            config = dataclasses.replace(base, algorithm=algorithm, max_iter=MAX_ITER)
            _, hypotheses, _ = evaluate(model.eval(), pairs, config, corpus.tgt_vocab, with_traces=False)
            pooled[algorithm].extend(hypotheses)
            table, rho = iterations_vs_length(hypotheses)
            table.insert(0, 'algorithm', algorithm)
            table.insert(0, 'task', task)
            tables.append(table)
            summary.append({'task': task, 'algorithm': algorithm, 'spearman_rho': rho,
                            'mean_iterations': sum(h.steps for h in hypotheses) / len(hypotheses)})
            print(f"  {algorithm:<13} rho = {rho:.3f}")
            for _, row in table.iterrows():
                print(f"    length {int(row['length']):>2}: {row['mean_iterations']:.2f} "
                      f"iterations (n={int(row['sentences'])})")

    print("\n" + "=" * 60)
    print("POOLED OVER TASKS")
    print("=" * 60)
    for algorithm, hypotheses in pooled.items():
        _, rho = iterations_vs_length(hypotheses)
        summary.append({'task': 'all', 'algorithm': algorithm, 'spearman_rho': rho,
                        'mean_iterations': sum(h.steps for h in hypotheses) / len(hypotheses)})
        print(f"  {algorithm:<13} rho = {rho:.3f}")

    pd.concat(tables, ignore_index=True).to_csv(os.path.join(TABLES_DIR, 'iterations_vs_length.csv'), index=False)
    pd.DataFrame(summary).to_csv(os.path.join(TABLES_DIR, 'iterations_summary.csv'), index=False)

    print("\n✓ Iteration analysis complete!")


if __name__ == "__main__":
    main()
