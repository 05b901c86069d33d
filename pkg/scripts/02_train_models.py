#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
02_train_models.py
==================
Train every model compared by the later scripts.

This script:
1. Trains an autoregressive teacher per task (used for distillation)
2. Trains DisCo (random masks) and CMLM baselines on the raw corpora
3. Trains the easy-first DisCo variant on the reverse task
4. Trains the autoregressive decoder with contextless keys and values
5. Summarizes final dev exact match and the averaged checkpoint steps
"""

import logging
import os
import sys

import pandas as pd

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from disco.config import config_digest, load_config, save_config
from disco.data import load_corpus
from disco.model import Model
from disco.trainer import train

# =============================================================================
# CONFIGURATION
# =============================================================================

CONFIG = '../configs/desk.yaml'
DATA_DIR = '../results/data/'
RUNS_DIR = '../results/runs/'
TABLES_DIR = '../results/tables/'
TASKS = ['copy', 'reverse', 'ambiguous-lexicon']

# (name, tasks, overrides)
RUNS = [
    ('ar-teacher', TASKS, ['model.decoder=ar', 'train.objective=autoregressive']),
    ('disco', TASKS, ['model.decoder=disco', 'train.objective=disco-random']),
    ('cmlm', TASKS, ['model.decoder=cmlm', 'train.objective=cmlm']),
    ('disco-easy-first', ['reverse'], ['model.decoder=disco', 'train.objective=easy-first']),
    ('ar-contextless', ['copy'], ['model.decoder=ar', 'model.contextless_kv=true',
                                  'train.objective=autoregressive']),
]

logging.basicConfig(level=logging.INFO, format="%(asctime)s | %(levelname)s | %(name)s | %(message)s")


def run_dir(task, name):
    return os.path.join(RUNS_DIR, task, name)


def train_one(task, name, overrides):
    """Train one (task, system) pair and return its summary row."""
    cfg = load_config(CONFIG, [f"data.task={task}"] + overrides)
    corpus = load_corpus(os.path.join(DATA_DIR, task), cfg.model.max_positions)
    out = run_dir(task, name)
    os.makedirs(out, exist_ok=True)
    save_config(cfg, os.path.join(out, 'config.yaml'))
    corpus.src_vocab.save(os.path.join(out, 'vocab.src'))
    corpus.tgt_vocab.save(os.path.join(out, 'vocab.tgt'))

    model = Model(cfg.model_for(len(corpus.src_vocab), len(corpus.tgt_vocab)), seed=cfg.seed)
    print(f"\n  {task} / {name}: {model.num_parameters():,} parameters")
    result = train(model, corpus, cfg.train, out, cfg.decode, config_digest(cfg))
    print(f"  Final dev exact match: {result.final_dev_metric:.3f}")
    print(f"  Averaged checkpoints from steps: {result.averaged_steps}")
    return {
        'task': task,
        'system': name,
        'decoder': cfg.model.decoder,
        'objective': cfg.train.objective,
        'steps': int(result.history['step'].max()),
        'final_train_loss': float(result.history['train_loss'].iloc[-1]),
        'dev_exact_match': result.final_dev_metric,
    }


def main():
    print("=" * 60)
    print("MODEL TRAINING")
    print("=" * 60)

    os.makedirs(TABLES_DIR, exist_ok=True)
    rows = []
    for name, tasks, overrides in RUNS:
        print("\n" + "=" * 60)
        print(f"SYSTEM: {name.upper()}")
        print("=" * 60)
        for task in tasks:
            rows.append(train_one(task, name, overrides))

    table = pd.DataFrame(rows)
    table.to_csv(os.path.join(TABLES_DIR, 'training_summary.csv'), index=False)
    print("\n" + "=" * 60)
    print("SUMMARY")
    print("=" * 60)
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))

    print("\n✓ Training complete!")


if __name__ == "__main__":
    main()
