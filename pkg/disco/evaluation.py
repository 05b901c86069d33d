"""
evaluation.py
=============
Scoring and reporting: corpus BLEU, exact match, step counts, latency.

This module:
1. Computes corpus-level BLEU (4-gram, brevity penalty, add-one smoothing
   for zero higher-order precisions) from sacrebleu's n-gram statistics
2. Computes exact match with a Wilson 95% confidence interval
3. Decodes a test set sentence by sentence into an ``EvalReport``
4. Benchmarks decode configurations single-threaded, one sentence at a time
5. Tabulates refinement iterations against generated length
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
from sacrebleu.metrics import BLEU
from scipy.stats import spearmanr
from statsmodels.stats.proportion import proportion_confint
from threadpoolctl import threadpool_limits
from tqdm import tqdm

from .errors import DimensionError, ValidationError
from .inference import DecodeTrace, decode, step_counter

logger = logging.getLogger(__name__)

MAX_ORDER = 4
_STATS = BLEU(tokenize="none", smooth_method="none", max_ngram_order=MAX_ORDER)


# =============================================================================
# METRICS
# =============================================================================

def _as_line(sentence):
    if isinstance(sentence, str):
        return sentence
    return " ".join(str(w) for w in sentence)


def bleu(candidates, references, smooth=True):
    """Corpus BLEU in [0, 100] over whitespace tokens (strings or token lists)."""
    candidates = [_as_line(c) for c in candidates]
    references = [_as_line(r) for r in references]
    if not candidates:
        raise ValidationError("BLEU of an empty corpus is undefined")
    if len(candidates) != len(references):
        raise DimensionError(f"{len(candidates)} candidates for {len(references)} references")
    stats = _STATS.corpus_score(candidates, [references])
    if stats.sys_len == 0:
        return 0.0
    log_precision = 0.0
    for n, (correct, total) in enumerate(zip(stats.counts, stats.totals), start=1):
        if correct == 0:
            if n == 1 or not smooth:
                return 0.0
            correct, total = 1, total + 1
        log_precision += math.log(correct / total) / MAX_ORDER
    ratio = stats.sys_len / stats.ref_len if stats.ref_len else 1.0
    brevity = 1.0 if ratio > 1.0 else math.exp(1.0 - 1.0 / ratio)
    return 100.0 * brevity * math.exp(log_precision)


@dataclass
class ExactMatch:
    rate: float
    low: float
    high: float
    hits: int
    total: int


def exact_match(candidates, references):
    """Share of candidates identical to their reference, with a Wilson 95% CI."""
    if len(candidates) != len(references):
        raise DimensionError(f"{len(candidates)} candidates for {len(references)} references")
    if not candidates:
        raise ValidationError("exact match of an empty corpus is undefined")
    hits = sum(int(list(np.asarray(c).tolist()) == list(np.asarray(r).tolist()))
               for c, r in zip(candidates, references))
    low, high = proportion_confint(hits, len(candidates), alpha=0.05, method="wilson")
    return ExactMatch(hits / len(candidates), float(low), float(high), hits, len(candidates))


# =============================================================================
# REPORTS
# =============================================================================

@dataclass
class EvalReport:
    algorithm: str
    sentences: int
    bleu: float
    exact_match: float
    exact_match_low: float
    exact_match_high: float
    avg_steps: float
    seconds_per_sentence: float
    length_histogram: Dict[int, float] = field(default_factory=dict)
    config_digest: Optional[str] = None

    def to_row(self):
        row = asdict(self)
        row.pop("length_histogram")
        return row

    def to_json(self):
        data = asdict(self)
        data["length_histogram"] = {str(k): v for k, v in self.length_histogram.items()}
        return data


def iterations_vs_length(records):
    """Mean refinement iterations per generated length, plus Spearman's rho.

    ``records`` is a list of Hypothesis objects or a frame with ``length``
    and ``iterations`` columns. Returns ``(table, rho)``; rho is NaN when
    either variable is constant.
    """
    if isinstance(records, pd.DataFrame):
        frame = records[["length", "iterations"]].copy()
    else:
        frame = pd.DataFrame({"length": [h.length for h in records],
                              "iterations": [h.steps for h in records]})
    if frame.empty:
        raise ValidationError("no decodes to tabulate")
    table = (frame.groupby("length")["iterations"]
             .agg(sentences="size", mean_iterations="mean")
             .reset_index())
    if frame["length"].nunique() < 2 or frame["iterations"].nunique() < 2:
        rho = float("nan")
    else:
        rho = float(spearmanr(frame["length"], frame["iterations"]).correlation)
    return table, rho


def evaluate(model, pairs, decode_config, tgt_vocab=None, digest=None, with_traces=True, progress=False):
    """Decode every source one at a time; returns ``(report, hypotheses, traces)``."""
    if not pairs:
        raise ValidationError("nothing to evaluate")
    hypotheses, traces = [], []
    start = time.perf_counter()
    for i, (src, _) in enumerate(tqdm(pairs, desc=f"decode[{decode_config.algorithm}]", disable=not progress)):
        trace = DecodeTrace(i, decode_config.algorithm) if with_traces else None
        hypotheses.append(decode(model, src, decode_config, trace))
        if with_traces:
            traces.append(trace)
    elapsed = time.perf_counter() - start

    def words(ids):
        return tgt_vocab.decode(ids) if tgt_vocab is not None else [str(int(x)) for x in ids]

    candidates = [words(h.tokens) for h in hypotheses]
    references = [words(tgt) for _, tgt in pairs]
    em = exact_match([h.tokens for h in hypotheses], [tgt for _, tgt in pairs])
    table, _ = iterations_vs_length(hypotheses)
    report = EvalReport(
        algorithm=decode_config.algorithm,
        sentences=len(pairs),
        bleu=bleu(candidates, references),
        exact_match=em.rate,
        exact_match_low=em.low,
        exact_match_high=em.high,
        avg_steps=step_counter(hypotheses),
        seconds_per_sentence=elapsed / len(pairs),
        length_histogram=dict(zip(table["length"].astype(int), table["mean_iterations"].astype(float))),
        config_digest=digest,
    )
    logger.info("%s: BLEU %.2f | exact match %.3f | steps %.2f",
                report.algorithm, report.bleu, report.exact_match, report.avg_steps)
    return report, hypotheses, traces if with_traces else None


def latency_benchmark(systems, pairs, baseline=None, digest=None, progress=False):
    """Wall-clock decoding of each (model, DecodeConfig) in ``systems``.

    One sentence at a time on one thread. ``speedup`` is baseline seconds
    over system seconds. Returns ``(table, traces_by_system)``.
    """
    if baseline is not None and baseline not in systems:
        raise ValidationError(f"baseline '{baseline}' is not among the benchmarked systems")
    rows, all_traces = [], {}
    with threadpool_limits(limits=1):
        for name, (model, config) in systems.items():
            report, _, traces = evaluate(model, pairs, config, digest=digest, progress=progress)
            all_traces[name] = traces
            rows.append({"system": name, **report.to_row(),
                         "seconds_total": report.seconds_per_sentence * report.sentences})
    table = pd.DataFrame(rows)
    if baseline is not None:
        reference = table.loc[table["system"] == baseline, "seconds_total"].iloc[0]
        table["speedup"] = reference / table["seconds_total"]
        table.loc[table["system"] == baseline, "speedup"] = 1.0
    return table, all_traces
