#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
run_all.py
==========
Run the experiment pipeline end to end.

Stages, in order:
1. Synthetic corpora
2. Model training (teachers, DisCo, CMLM, ablation variants)
3. Decoding strategy comparison
4. Distillation effect
5. Length beam sweep
6. Iterations vs length
7. Latency benchmark
8. Batch size sweep
9. Validation against the acceptance thresholds

Usage:
    python run_all.py                 # every stage
    python run_all.py --from 3        # resume at stage 3 (models already trained)
    python run_all.py --stop-on-failure
"""

import argparse
import os
import subprocess
import sys
import time
from datetime import datetime

STAGES = [
    '01_generate_data.py',
    '02_train_models.py',
    '03_decoding_strategies.py',
    '04_distillation_effect.py',
    '05_length_beam_sweep.py',
    '06_iterations_vs_length.py',
    '07_latency_benchmark.py',
    '08_batch_size_sweep.py',
    '09_validate_results.py',
]

SCRIPT_DIR = os.path.dirname(os.path.abspath(__file__))
PROJECT_ROOT = os.path.dirname(SCRIPT_DIR)


def run_stage(script_name):
    """Run one stage from the scripts directory; returns (ok, seconds)."""
    script_path = os.path.join(SCRIPT_DIR, script_name)
    if not os.path.exists(script_path):
        print(f"✗ ERROR: Script not found: {script_path}")
        return False, 0.0

    print(f"\n{'=' * 70}")
    print(f"Running: {script_name}")
    print(f"{'=' * 70}")

    start = time.perf_counter()
    try:
        # relative results/ paths resolve against the scripts directory
        subprocess.run([sys.executable, script_path], cwd=SCRIPT_DIR, check=True)
    except subprocess.CalledProcessError as e:
        print(f"\n✗ ERROR: {script_name} exited with code {e.returncode}")
        return False, time.perf_counter() - start
    elapsed = time.perf_counter() - start
    print(f"\n✓ {script_name} finished in {elapsed / 60:.1f} min")
    return True, elapsed


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description="Run the DisCo experiment pipeline.")
    parser.add_argument('--from', dest='first', type=int, default=1, choices=range(1, len(STAGES) + 1),
                        metavar='N', help="first stage to run (1-9)")
    parser.add_argument('--stop-on-failure', action='store_true',
                        help="abort instead of continuing after a failed stage")
    return parser.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    stages = STAGES[args.first - 1:]

    print("=" * 70)
    print("DISCO NON-AUTOREGRESSIVE DECODING - EXPERIMENT PIPELINE")
    print("=" * 70)
    print(f"Start time: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print(f"Python version: {sys.version.split()[0]}")
    print(f"Project root: {PROJECT_ROOT}")
    print("=" * 70)

    results, durations = {}, {}
    for i, script in enumerate(stages, args.first):
        print(f"\n[{i}/{len(STAGES)}] {script}")
        ok, seconds = run_stage(script)
        results[script], durations[script] = ok, seconds
        if not ok:
            if args.stop_on_failure:
                print(f"\n⚠ Stopping after failed stage {script}.")
                break
            print(f"\n⚠ WARNING: {script} failed. Continuing with remaining stages...")

    print("\n" + "=" * 70)
    print("PIPELINE SUMMARY")
    print("=" * 70)
    print(f"End time: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n")
    for script, ok in results.items():
        status = "✓ PASS" if ok else "✗ FAIL"
        print(f"{status} - {script} ({durations[script] / 60:.1f} min)")

    failed = [script for script, ok in results.items() if not ok]
    print()
    print("=" * 70)
    if not failed:
        print("✓ ALL STAGES COMPLETED SUCCESSFULLY")
        print("=" * 70)
        print("\nOutputs:")
        print("  - Corpora: results/data/")
        print("  - Models, manifests, training curves: results/runs/")
        print("  - Tables: results/tables/")
        print("  - Decode traces: results/traces/")
        return 0
    print("✗ PIPELINE COMPLETED WITH ERRORS")
    print("=" * 70)
    print(f"\nFailed stages ({len(failed)}):")
    for script in failed:
        print(f"  - {script}")
    return 1


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\n⚠ Pipeline interrupted by user.")
        sys.exit(130)
