#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
04_distillation_effect.py
=========================
Effect of sequence-level distillation on DisCo.

This script:
1. Tunes the teacher's length penalty on the dev split
2. Rewrites the training targets with the teacher's beam outputs
3. Trains DisCo on the distilled corpus
4. Compares raw-data and distilled-data DisCo on the same test sentences
5. Counts how many distinct targets each repeated source has before and after
"""

import logging
import os
import sys
import warnings

import pandas as pd

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from disco.config import config_digest, load_config, save_config
from disco.data import load_corpus, save_corpus
from disco.distillation import distill_corpus, tune_length_penalty
from disco.evaluation import evaluate
from disco.model import Model, load_checkpoint
from disco.trainer import train

warnings.filterwarnings('ignore')
logging.basicConfig(level=logging.INFO, format="%(asctime)s | %(levelname)s | %(name)s | %(message)s")

# =============================================================================
# CONFIGURATION
# =============================================================================

CONFIG = '../configs/desk.yaml'
DATA_DIR = '../results/data/'
RUNS_DIR = '../results/runs/'
TABLES_DIR = '../results/tables/'
TASKS = ['copy', 'reverse', 'ambiguous-lexicon']
DEV_SENTENCES = 100
TEST_SENTENCES = 200


def target_spread(corpus, split='train'):
    """Mean number of distinct targets per source that occurs more than once."""
    frame = corpus.to_frame(split)
    counts = frame.groupby('source').agg(n=('target', 'size'), distinct=('target', 'nunique'))
    repeated = counts[counts['n'] > 1]
    return float(repeated['distinct'].mean()) if len(repeated) else 1.0


def distill_task(task):
    print("\n" + "=" * 60)
    print(f"TASK: {task.upper()}")
    print("=" * 60)

    cfg = load_config(CONFIG, [f"data.task={task}", 'model.decoder=disco', 'train.objective=disco-random'])
    corpus = load_corpus(os.path.join(DATA_DIR, task), cfg.model.max_positions)
    teacher, _ = load_checkpoint(os.path.join(RUNS_DIR, task, 'ar-teacher', 'model.npz'))
    teacher.eval()

    # 1. Length penalty
    alpha, sweep = tune_length_penalty(teacher, corpus.pairs('dev')[:DEV_SENTENCES], beam=cfg.decode.beam)
    sweep.insert(0, 'task', task)
    print(f"  Selected length penalty: {alpha:.1f}")

    # 2. Distilled corpus
    distilled = distill_corpus(teacher, corpus, cfg.decode.beam, alpha)
    save_corpus(distilled, os.path.join(DATA_DIR, f"{task}-distilled"))
    before, after = target_spread(corpus), target_spread(distilled)
    print(f"  Distinct targets per repeated source: {before:.2f} raw -> {after:.2f} distilled")

    # 3. Student on distilled targets
    out = os.path.join(RUNS_DIR, task, 'disco-distilled')
    os.makedirs(out, exist_ok=True)
    save_config(cfg, os.path.join(out, 'config.yaml'))
    model = Model(cfg.model_for(len(corpus.src_vocab), len(corpus.tgt_vocab)), seed=cfg.seed)
    student = train(model, distilled, cfg.train, out, cfg.decode, config_digest(cfg)).model

    # 4. Raw vs distilled on the original references
    raw, _ = load_checkpoint(os.path.join(RUNS_DIR, task, 'disco', 'model.npz'))
    pairs = corpus.pairs('test')[:TEST_SENTENCES]
    rows = []
    for name, model in [('raw', raw.eval()), ('distilled', student)]:
        report, _, _ = evaluate(model, pairs, cfg.decode, corpus.tgt_vocab, with_traces=False)
        rows.append({'task': task, 'training_data': name, 'length_penalty': alpha,
                     'target_spread': before if name == 'raw' else after, **report.to_row()})
        print(f"  {name:<10} BLEU {report.bleu:6.2f} | EM {report.exact_match:.3f} | steps {report.avg_steps:.2f}")
    return rows, sweep


def main():
    print("=" * 60)
    print("DISTILLATION EFFECT")
    print("=" * 60)

    os.makedirs(TABLES_DIR, exist_ok=True)
    rows, sweeps = [], []
    for task in TASKS:
        task_rows, sweep = distill_task(task)
        rows.extend(task_rows)
        sweeps.append(sweep)
    table = pd.DataFrame(rows)
    table.to_csv(os.path.join(TABLES_DIR, 'distillation_effect.csv'), index=False)
    pd.concat(sweeps, ignore_index=True).to_csv(os.path.join(TABLES_DIR, 'length_penalty_sweep.csv'), index=False)

    print("\n" + "=" * 60)
    print("BLEU GAIN FROM DISTILLATION")
    print("=" * 60)
    wide = table.pivot(index='task', columns='training_data', values='bleu')
    for task, row in wide.iterrows():
        print(f"  {task:<18} {row['raw']:6.2f} -> {row['distilled']:6.2f} ({row['distilled'] - row['raw']:+.2f})")

    print("\n✓ Distillation analysis complete!")


if __name__ == "__main__":
    main()
