#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
09_validate_results.py
======================
Validate models and pipeline results against the acceptance thresholds.

This script:
1. Runs the live property checks (no leakage, one-shot equivalence,
   gradients, mask schedule, hand-traced decoding)
2. Reloads the tables written by scripts 03-07 and checks the behavioral
   claims (fixed points, toy-task accuracy, distillation, ablations,
   iterations vs length)
3. Trains and decodes the tiny configuration twice and compares the outputs
4. Reports validation status (exit code 0 when everything passes)
"""

import os
import sys
import tempfile
import warnings

import numpy as np
import pandas as pd

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from disco.cli import TINY_MODEL
from disco.config import load_config
from disco.data import generate_corpus
from disco.diagnostics import leakage_check, model_grad_check, one_shot_equivalence
from disco.evaluation import evaluate
from disco.inference import DecodeTrace, decode_all_but_itself, mask_schedule, parallel_easy_first
from disco.model import Model, ModelConfig
from disco.numerics import RngStream
from disco.toy_models import TwoModeTableModel
from disco.trainer import train

warnings.filterwarnings('ignore')

TABLES_DIR = '../results/tables/'
TRACES_DIR = '../results/traces/'
TINY_CONFIG = '../configs/tiny.yaml'

# Expected values (from docs/EXPECTED_RESULTS.md)
EXPECTED = {
    'leakage': {'trials': 1000, 'max_deviation': 0.0},
    'one_shot': {'trials': 100, 'max_gap': 0.0},
    'grad_check': {'coordinates': 200, 'max_relative_error': 0.0},
    'schedule': {'max_n': 64, 'max_t': 64},
    'two_mode': {
        'easy-first': {'output': ('Hong', 'Kong'), 'steps': 3},
        'all-but-itself': {'mixed': {('Hong', 'York'), ('New', 'Kong')}},
    },
    'toy_end_to_end': {'tasks': ['copy', 'reverse'], 'exact_match': 0.95, 'max_avg_steps': 10.0},
    'distillation_task': 'ambiguous-lexicon',
    'ablation_task': 'copy',
    'max_iter': 10,
}

# Tolerance levels
TOLERANCE = {
    'logit': 1e-9,
    'one_shot': 1e-6,
    'gradient': 1e-4,
    'em_points': 0.02,
    'steps': 1e-9,
}

LEAK_MODELS = [
    ModelConfig(num_layers_enc=2, num_layers_dec=2, model_dim=16, hidden_dim=32, num_heads=2,
                vocab_size_src=16, vocab_size_tgt=16, max_positions=16, max_length_bins=16, dropout=0.0),
    ModelConfig(num_layers_enc=1, num_layers_dec=3, model_dim=8, hidden_dim=16, num_heads=1,
                vocab_size_src=12, vocab_size_tgt=20, max_positions=16, max_length_bins=16, dropout=0.0),
    ModelConfig(num_layers_enc=1, num_layers_dec=2, model_dim=16, hidden_dim=16, num_heads=4,
                vocab_size_src=16, vocab_size_tgt=16, max_positions=16, max_length_bins=16, dropout=0.0,
                decoder='ar', contextless_kv=True),
]


def check_tolerance(observed, expected, tolerance):
    """Check if observed value is within tolerance of expected."""
    if pd.isna(observed) or pd.isna(expected):
        return False, np.nan
    diff = abs(observed - expected)
    return diff <= tolerance, diff


def report(passed, message):
    print(f"{'✓ PASS' if passed else '✗ FAIL'}: {message}")
    return passed


def load_table(name):
    return pd.read_csv(os.path.join(TABLES_DIR, name))


# =============================================================================
# LIVE PROPERTY CHECKS
# =============================================================================

def validate_no_leakage():
    print("\n" + "=" * 60)
    print("VALIDATING NO LEAKAGE")
    print("=" * 60)

    trials = EXPECTED['leakage']['trials']
    share = -(-trials // len(LEAK_MODELS))
    worst = 0.0
    for k, config in enumerate(LEAK_MODELS):
        result = leakage_check(Model(config, seed=k), share, RngStream(100 + k))
        kind = f"{config.decoder}{' contextless' if config.contextless_kv else ''}"
        print(f"  {kind:<15} {share} trials: max deviation {result.max_deviation:.2e} ({result.worst_kind})")
        worst = max(worst, result.max_deviation)
    passed, _ = check_tolerance(worst, EXPECTED['leakage']['max_deviation'], TOLERANCE['logit'])
    return report(passed, f"max logit deviation {worst:.2e} <= {TOLERANCE['logit']:.0e}")


def validate_one_shot():
    print("\n" + "=" * 60)
    print("VALIDATING ONE-SHOT EQUIVALENCE")
    print("=" * 60)

    model = Model(ModelConfig.desk_scale(vocab_size_src=32, vocab_size_tgt=32, dropout=0.0), seed=7)
    gap = one_shot_equivalence(model, EXPECTED['one_shot']['trials'], RngStream(7))
    passed, _ = check_tolerance(gap, EXPECTED['one_shot']['max_gap'], TOLERANCE['one_shot'])
    return report(passed, f"max gap to per-row passes {gap:.2e} <= {TOLERANCE['one_shot']:.0e}")


def validate_gradients():
    print("\n" + "=" * 60)
    print("VALIDATING GRADIENTS")
    print("=" * 60)

    all_passed = True
    for decoder in ('disco', 'cmlm', 'ar'):
        model = Model(ModelConfig(**TINY_MODEL, decoder=decoder), seed=11)
        error = model_grad_check(model, EXPECTED['grad_check']['coordinates'], RngStream(11))
        passed, _ = check_tolerance(error, EXPECTED['grad_check']['max_relative_error'], TOLERANCE['gradient'])
        print(f"  {decoder:<6} ({model.num_parameters()} parameters): max relative error {error:.2e}")
        all_passed &= passed
    return report(all_passed, f"central differences within {TOLERANCE['gradient']:.0e}")


def validate_schedule():
    print("\n" + "=" * 60)
    print("VALIDATING MASK SCHEDULE")
    print("=" * 60)

    limit_n, limit_t = EXPECTED['schedule']['max_n'], EXPECTED['schedule']['max_t']
    mismatches = 0
    for n in range(1, limit_n + 1):
        for total in range(1, limit_t + 1):
            for t in range(1, total + 1):
                mismatches += mask_schedule(n, total, t) != (n * (total - t + 1)) // total
    return report(mismatches == 0, f"{mismatches} mismatches over all N, T <= {limit_n}")


def validate_two_mode():
    print("\n" + "=" * 60)
    print("VALIDATING HAND-TRACED DECODING")
    print("=" * 60)

    model = TwoModeTableModel()
    vocab = model.vocabulary()
    easy = parallel_easy_first(model, [model.HONG], 2, max_iter=5)
    expected = EXPECTED['two_mode']['easy-first']
    easy_ok = tuple(vocab.decode(easy.tokens)) == expected['output'] and easy.steps == expected['steps']
    print(f"  easy-first: {' '.join(vocab.decode(easy.tokens))} after {easy.steps} steps")

    trace = DecodeTrace(0, 'all-but-itself')
    decode_all_but_itself(model, [model.HONG], 2, max_iter=5, trace=trace)
    outputs = {tuple(vocab.decode([int(x) for x in row['tokens'].split()])) for row in trace.rows}
    mixed = outputs & EXPECTED['two_mode']['all-but-itself']['mixed']
    print(f"  all-but-itself outputs: {sorted(' '.join(o) for o in outputs)}")

    passed = report(easy_ok, "easy-first settles on one reading")
    return report(bool(mixed), "all-but-itself produces a mode-mixed output") and passed


# =============================================================================
# PIPELINE RESULTS
# =============================================================================

def validate_fixed_points(strategies):
    print("\n" + "=" * 60)
    print("VALIDATING FIXED POINTS")
    print("=" * 60)

    rows = strategies[(strategies['system'] == 'disco') & (strategies['algorithm'] == 'easy-first')]
    all_passed = True
    for _, row in rows.iterrows():
        passed = int(row['fixed_points']) == int(row['converged'])
        all_passed &= report(passed, f"{row['task']}: {int(row['fixed_points'])}/{int(row['converged'])} "
                                     f"converged outputs unchanged by one more pass")
    return all_passed


def expected_mask_predict_steps(path, total):
    """Passes implied by the schedule for the longest length candidate of each sentence."""
    frame = pd.read_json(path, lines=True)
    longest = frame[frame['t'] == 1].groupby('sentence')['length'].max()
    steps = [1 + sum(mask_schedule(int(n), total, t) > 0 for t in range(2, total + 1)) for n in longest]
    return float(np.mean(steps))


def validate_toy_end_to_end(strategies):
    print("\n" + "=" * 60)
    print("VALIDATING TOY-TASK END TO END")
    print("=" * 60)

    spec = EXPECTED['toy_end_to_end']
    all_passed = True
    for task in spec['tasks']:
        rows = strategies[(strategies['task'] == task) & (strategies['system'] == 'disco')].set_index('algorithm')
        easy, masked = rows.loc['easy-first'], rows.loc['mask-predict']
        all_passed &= report(easy['exact_match'] >= spec['exact_match'],
                             f"{task}: easy-first exact match {easy['exact_match']:.3f} >= {spec['exact_match']}")
        all_passed &= report(easy['avg_steps'] < spec['max_avg_steps'],
                             f"{task}: easy-first average steps {easy['avg_steps']:.2f} < {spec['max_avg_steps']:.0f}")
        close, diff = check_tolerance(masked['exact_match'], easy['exact_match'], TOLERANCE['em_points'])
        all_passed &= report(close, f"{task}: mask-predict exact match within {diff:.3f} of easy-first")
        implied = expected_mask_predict_steps(
            os.path.join(TRACES_DIR, task, 'disco_mask-predict.jsonl'), EXPECTED['max_iter'])
        exact, _ = check_tolerance(masked['avg_steps'], implied, TOLERANCE['steps'])
        all_passed &= report(exact, f"{task}: mask-predict steps {masked['avg_steps']:.2f} "
                                    f"match the schedule ({implied:.2f})")
    return all_passed


def validate_distillation():
    print("\n" + "=" * 60)
    print("VALIDATING DISTILLATION DIRECTION")
    print("=" * 60)

    table = load_table('distillation_effect.csv')
    rows = table[table['task'] == EXPECTED['distillation_task']].set_index('training_data')
    raw, distilled = rows.loc['raw', 'exact_match'], rows.loc['distilled', 'exact_match']
    return report(distilled > raw, f"distilled exact match {distilled:.3f} > raw {raw:.3f} "
                                   f"(margin {distilled - raw:+.3f})")


def validate_ablation(strategies):
    print("\n" + "=" * 60)
    print("VALIDATING ORDER ABLATION")
    print("=" * 60)

    rows = strategies[(strategies['task'] == EXPECTED['ablation_task'])
                      & (strategies['system'] == 'disco')].set_index('algorithm')
    fixed, easy = rows.loc['left-to-right', 'avg_steps'], rows.loc['easy-first', 'avg_steps']
    return report(fixed > easy, f"left-to-right {fixed:.2f} steps > easy-first {easy:.2f} steps")


def validate_iterations_vs_length():
    print("\n" + "=" * 60)
    print("VALIDATING ITERATIONS VS LENGTH")
    print("=" * 60)

    table = load_table('iterations_summary.csv')
    rho = table.loc[(table['task'] == 'all') & (table['algorithm'] == 'easy-first'), 'spearman_rho'].iloc[0]
    return report(rho > 0, f"Spearman rho between length and iterations {rho:.3f} > 0")


def validate_reproducibility():
    print("\n" + "=" * 60)
    print("VALIDATING REPRODUCIBILITY")
    print("=" * 60)

    outputs = []
    for attempt in range(2):
        cfg = load_config(TINY_CONFIG)
        corpus = generate_corpus(cfg.data.task_spec(), cfg.data.sizes(), cfg.model.max_positions)
        with tempfile.TemporaryDirectory() as run_dir:
            model = Model(cfg.model_for(len(corpus.src_vocab), len(corpus.tgt_vocab)), seed=cfg.seed)
            result = train(model, corpus, cfg.train, run_dir, cfg.decode)
            with open(os.path.join(run_dir, 'metrics.csv'), encoding='utf-8') as handle:
                metrics = handle.read()
        evaluation, hypotheses, _ = evaluate(result.model, corpus.pairs('test'), cfg.decode, with_traces=False)
        row = evaluation.to_row()
        row.pop('seconds_per_sentence')
        outputs.append((metrics, row, [h.tokens.tolist() for h in hypotheses]))
        print(f"  run {attempt + 1}: final loss {result.step_losses[-1]:.6f}, BLEU {row['bleu']:.2f}")
    return report(outputs[0] == outputs[1], "identical metrics, reports and hypotheses across two seeded runs")


if __name__ == "__main__":
    print("=" * 60)
    print("VALIDATING MODELS AND RESULTS")
    print("=" * 60)

    results = {}
    results['no_leakage'] = validate_no_leakage()
    results['one_shot_equivalence'] = validate_one_shot()
    results['gradients'] = validate_gradients()
    results['mask_schedule'] = validate_schedule()
    results['hand_traced_decoding'] = validate_two_mode()

    print("\nLoading pipeline tables...")
    try:
        strategies = load_table('decoding_strategies.csv')
        print("✓ Tables loaded successfully")
    except FileNotFoundError as e:
        print(f"✗ ERROR: Could not load result tables: {e}")
        print("  Please run the pipeline first (run_all.py)")
        sys.exit(1)

    results['fixed_points'] = validate_fixed_points(strategies)
    results['toy_end_to_end'] = validate_toy_end_to_end(strategies)
    results['distillation'] = validate_distillation()
    results['order_ablation'] = validate_ablation(strategies)
    results['iterations_vs_length'] = validate_iterations_vs_length()
    results['reproducibility'] = validate_reproducibility()

    print("\n" + "=" * 60)
    print("VALIDATION SUMMARY")
    print("=" * 60)

    all_passed = all(results.values())
    for test_name, passed in results.items():
        status = "✓ PASS" if passed else "✗ FAIL"
        print(f"{test_name.replace('_', ' ').title()}: {status}")

    print("\n" + "=" * 60)
    if all_passed:
        print("✓ ALL VALIDATIONS PASSED")
        print("=" * 60)
        sys.exit(0)
    else:
        print("✗ SOME VALIDATIONS FAILED")
        print("=" * 60)
        print("\nNote: the behavioral checks depend on training reaching the")
        print("desk-scale targets; rerun 02_train_models.py with more steps if")
        print("only the end-to-end thresholds fail.")
        sys.exit(1)
