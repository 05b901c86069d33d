#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
07_latency_benchmark.py
=======================
Wall-clock decoding speed relative to autoregressive beam search.

This script:
1. Decodes the copy test set one sentence at a time on a single thread
2. Times beam search, mask-predict at several T and easy-first at several T
3. Reports seconds per sentence, average decoder passes and speedup over
   the autoregressive baseline
4. Recounts the passes from the written traces
"""

import dataclasses
import os
import sys
import warnings

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from disco.config import load_config
from disco.data import load_corpus
from disco.evaluation import latency_benchmark
from disco.inference import recount_steps, write_traces
from disco.model import load_checkpoint

warnings.filterwarnings('ignore')

# =============================================================================
# CONFIGURATION
# =============================================================================

CONFIG = '../configs/desk.yaml'
DATA_DIR = '../results/data/'
RUNS_DIR = '../results/runs/'
TABLES_DIR = '../results/tables/'
TRACES_DIR = '../results/traces/bench/'
TASK = 'copy'
TEST_SENTENCES = 100
BASELINE = 'ar-beam-5'

# (system name, run, decode overrides)
SYSTEMS = [
    (BASELINE, 'ar-teacher', {'algorithm': 'ar-beam', 'beam': 5}),
    ('ar-greedy', 'ar-teacher', {'algorithm': 'ar-beam', 'beam': 1}),
    ('mask-predict-4', 'cmlm', {'algorithm': 'mask-predict', 'max_iter': 4}),
    ('mask-predict-10', 'cmlm', {'algorithm': 'mask-predict', 'max_iter': 10}),
    ('easy-first-4', 'disco', {'algorithm': 'easy-first', 'max_iter': 4}),
    ('easy-first-10', 'disco', {'algorithm': 'easy-first', 'max_iter': 10}),
]


def main():
    print("=" * 60)
    print(f"LATENCY BENCHMARK ({TASK}, one sentence at a time, one thread)")
    print("=" * 60)

    os.makedirs(TABLES_DIR, exist_ok=True)
    cfg = load_config(CONFIG)
    corpus = load_corpus(os.path.join(DATA_DIR, TASK))
    pairs = corpus.pairs('test')[:TEST_SENTENCES]

    systems = {}
    for name, run, changes in SYSTEMS:
        model, _ = load_checkpoint(os.path.join(RUNS_DIR, TASK, run, 'model.npz'))
        systems[name] = (model.eval(), dataclasses.replace(cfg.decode, **changes))

    table, traces = latency_benchmark(systems, pairs, baseline=BASELINE)
    recounted = {}
    for name, system_traces in traces.items():
        path = write_traces(system_traces, os.path.join(TRACES_DIR, f"{name}.jsonl"))
        recounted[name] = recount_steps(path)
    table['recounted_steps'] = table['system'].map(recounted)
    table.to_csv(os.path.join(TABLES_DIR, 'latency_benchmark.csv'), index=False)

    print(f"\n{'System':<17}{'BLEU':>7}{'Steps':>8}{'ms/sent':>10}{'Speedup':>9}")
    print("-" * 51)
    for _, row in table.iterrows():
        print(f"{row['system']:<17}{row['bleu']:>7.2f}{row['avg_steps']:>8.2f}"
              f"{1000 * row['seconds_per_sentence']:>10.1f}{row['speedup']:>8.2f}x")

    mismatched = table[(table['recounted_steps'] - table['avg_steps']).abs() > 1e-9]
    if mismatched.empty:
        print("\n✓ Trace step counts match the reported averages")
    else:
        print(f"\n✗ Trace step counts differ for: {', '.join(mismatched['system'])}")

    print("\n✓ Latency benchmark complete!")


if __name__ == "__main__":
    main()
