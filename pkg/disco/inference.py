"""
inference.py
============
Decoding algorithms for the non-autoregressive and autoregressive models.

This module:
1. Picks the K most likely target lengths (length beam)
2. Runs mask-predict with the linear mask-decay schedule
3. Runs parallel easy-first refinement and its fixed-order and
   all-but-itself ablations through one shared refinement loop
4. Runs beam search with a length penalty for autoregressive models
5. Records per-iteration decode traces that can be recounted from disk

All K length candidates of an iteration are decoded together and count as
one sequential step. Confidence ties go to the lower position index and
beam-selection ties to the shorter length.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import log_softmax

from .data import EOS_ID, LENGTH_ID, MASK_ID, PAD_ID
from .errors import ValidationError
from .masks import cloze_mask, empty_mask, from_order_mask, ranks_from_confidences
from .model import VisibilityMask
from .numerics import Tensor, no_grad

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIGURATION
# =============================================================================

NAT_ALGORITHMS = ("easy-first", "mask-predict", "left-to-right", "right-to-left", "all-but-itself")
ALGORITHMS = NAT_ALGORITHMS + ("ar-beam",)
NEVER_PREDICTED = (PAD_ID, EOS_ID, LENGTH_ID, MASK_ID)
AR_NEVER_PREDICTED = (PAD_ID, LENGTH_ID, MASK_ID)


@dataclass
class DecodeConfig:
    algorithm: str = "easy-first"
    max_iter: int = 10
    length_beam: int = 5
    beam: int = 5
    length_penalty: float = 1.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm '{self.algorithm}', expected one of {ALGORITHMS}")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be at least 1")
        if self.length_beam < 1 or self.beam < 1:
            raise ValidationError("beam sizes must be at least 1")
        if self.length_penalty < 0:
            raise ValidationError("length_penalty must be non-negative")

    def digest(self):
        canonical = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha1(canonical.encode("utf-8")).hexdigest()


def default_algorithm(model):
    """Decoder kind -> algorithm used for dev-set checks during training."""
    return {"disco": "easy-first", "cmlm": "mask-predict", "ar": "ar-beam"}[model.config.decoder]


def supports(model, algorithm):
    decoder = model.config.decoder
    if decoder == "ar":
        return algorithm == "ar-beam"
    if decoder == "cmlm":
        return algorithm == "mask-predict"
    return algorithm in NAT_ALGORITHMS


def fit_decode_config(model, config):
    """``config``, or a copy running the model's default algorithm when the
    configured one cannot decode this kind of model."""
    if supports(model, config.algorithm):
        return config
    algorithm = default_algorithm(model)
    logger.info("'%s' cannot decode a %s model; using '%s'", config.algorithm, model.config.decoder, algorithm)
    return dataclasses.replace(config, algorithm=algorithm)


# =============================================================================
# RESULT TYPES
# =============================================================================

@dataclass
class Hypothesis:
    tokens: np.ndarray
    confidences: np.ndarray
    ranks: Optional[np.ndarray] = None
    mask: Optional[VisibilityMask] = None
    iteration: int = 1
    converged: bool = False
    steps: int = 1
    finished: bool = True

    @property
    def length(self):
        return int(len(self.tokens))

    @property
    def score(self):
        """Average log confidence."""
        return float(np.mean(np.log(self.confidences))) if len(self.confidences) else float("-inf")


@dataclass
class BeamSet:
    hypotheses: List[Hypothesis]

    def best_index(self):
        """argmax of average log confidence; ties to the shorter hypothesis."""
        keys = [(-h.score, h.length, k) for k, h in enumerate(self.hypotheses)]
        return min(keys)[2]

    def best(self):
        return self.hypotheses[self.best_index()]


@dataclass
class DecodeTrace:
    """Per-iteration rows of one sentence's decode."""

    sentence: int = 0
    algorithm: str = ""
    rows: List[dict] = field(default_factory=list)

    def log(self, t, beam, tokens, confidences, mask=None, best=None, converged=False):
        self.rows.append({
            "sentence": self.sentence,
            "algorithm": self.algorithm,
            "t": int(t),
            "beam": int(beam),
            "length": int(len(tokens)),
            "tokens": " ".join(str(int(x)) for x in tokens),
            "confidences": [round(float(c), 6) for c in confidences],
            "mask": mask.digest() if mask is not None else "",
            "best": -1 if best is None else int(best),
            "converged": bool(converged),
        })

    @property
    def steps(self):
        return max((row["t"] for row in self.rows), default=0)

    def to_frame(self):
        return pd.DataFrame(self.rows)


def write_traces(traces, path):
    """JSON lines, one row per (sentence, iteration, beam)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for trace in traces:
            for row in trace.rows:
                handle.write(json.dumps(row) + "\n")
    return path


def recount_steps(path):
    """Average sequential steps per sentence recomputed from a trace file."""
    frame = pd.read_json(path, lines=True)
    if frame.empty:
        return 0.0
    return float(frame.groupby("sentence")["t"].max().mean())


def step_counter(runs):
    """Average sequential decoder passes over Hypothesis or DecodeTrace objects."""
    runs = list(runs)
    if not runs:
        raise ValidationError("no decode runs to count")
    return float(np.mean([r.steps for r in runs]))


# =============================================================================
# SCHEDULES AND LENGTHS
# =============================================================================

def mask_schedule(n, total, t):
    """Number of tokens re-predicted at iteration t: floor(N * (T - t + 1) / T)."""
    if n < 1 or total < 1 or not 1 <= t <= total:
        raise ValidationError(f"mask_schedule needs N>=1, T>=1, 1<=t<=T; got N={n}, T={total}, t={t}")
    return (n * (total - t + 1)) // total


def length_beam(length_log_probs, k):
    """The k most likely lengths (1-based), ties to the shorter length."""
    lp = np.asarray(length_log_probs, dtype=np.float64).reshape(-1)
    if k < 1:
        raise ValidationError("length beam must be at least 1")
    if k > lp.size:
        raise ValidationError(f"length beam {k} exceeds the {lp.size} length bins")
    order = np.lexsort((np.arange(lp.size), -lp))
    return [int(i) + 1 for i in order[:k]]


# =============================================================================
# MODEL CALLS
# =============================================================================

def _array(value):
    return value.data if isinstance(value, Tensor) else np.asarray(value)


def _encode(model, src):
    return model.encode(np.asarray(src, dtype=np.int64)[None, :])


def _predict_lengths(model, enc, k):
    lp = _array(model.predict_length(enc))[0]
    return length_beam(lp, min(k, lp.size))


def _greedy(logits, excluded=NEVER_PREDICTED):
    """Argmax over allowed ids and the probability of the chosen id."""
    lp = log_softmax(np.asarray(logits, dtype=np.float64), axis=-1)
    allowed = lp.copy()
    allowed[..., list(excluded)] = -np.inf
    tokens = allowed.argmax(axis=-1)
    confidences = np.exp(np.take_along_axis(lp, tokens[..., None], axis=-1)[..., 0])
    return tokens.astype(np.int64), confidences


def _predict(model, enc, tokens, observed, masked=None):
    """One parallel pass for one hypothesis: tokens [N], observed [N, N].

    CMLM models read the shared observed set through MASK ids at ``masked``.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if model.config.decoder == "cmlm":
        if masked is None:
            raise ValidationError("CMLM models only support mask-predict decoding")
        inputs = np.where(masked, MASK_ID, tokens)
        logits = model.cmlm_forward(enc, inputs[None, :])
    else:
        logits = model.disco_forward(enc, tokens[None, :], observed)
    return _greedy(_array(logits)[0])


def _check_nat(model, algorithm):
    if model.config.decoder == "ar":
        raise ValidationError(f"'{algorithm}' needs a non-autoregressive model")
    if model.config.decoder == "cmlm" and algorithm != "mask-predict":
        raise ValidationError(f"'{algorithm}' needs contextless keys/values; CMLM models use mask-predict")


def _placeholder(n):
    # content never read: the first pass uses the empty mask
    return np.full(n, EOS_ID, dtype=np.int64)


# =============================================================================
# MASK-PREDICT
# =============================================================================

def mask_predict(model, src, lengths, max_iter=10, enc=None, trace=None):
    """Re-predict the i_t least confident tokens given the other N - i_t.

    ``lengths`` is one length or a list (length beam). Stops early once i_t is 0.
    """
    _check_nat(model, "mask-predict")
    lengths = [int(lengths)] if np.ndim(lengths) == 0 else [int(n) for n in lengths]
    with no_grad():
        enc = enc if enc is not None else _encode(model, src)
        beams = []
        for k, n in enumerate(lengths):
            masked = np.ones(n, dtype=bool)
            mask = empty_mask(n)
            tokens, conf = _predict(model, enc, _placeholder(n), mask.observed, masked)
            beams.append(Hypothesis(tokens, conf, mask=mask, iteration=1))
        steps = 1
        if trace is not None:
            best = BeamSet(beams).best_index()
            for k, h in enumerate(beams):
                trace.log(1, k, h.tokens, h.confidences, h.mask, best)

        for t in range(2, max_iter + 1):
            active = False
            for k, h in enumerate(beams):
                count = mask_schedule(h.length, max_iter, t)
                if count == 0:
                    continue
                active = True
                order = np.lexsort((np.arange(h.length), h.confidences))
                masked = np.zeros(h.length, dtype=bool)
                masked[order[:count]] = True
                observed = np.broadcast_to(~masked, (h.length, h.length)).copy()
                np.fill_diagonal(observed, False)
                mask = VisibilityMask(observed)
                new_tokens, new_conf = _predict(model, enc, h.tokens, observed, masked)
                tokens = np.where(masked, new_tokens, h.tokens)
                conf = np.where(masked, new_conf, h.confidences)
                beams[k] = Hypothesis(tokens, conf, mask=mask, iteration=t,
                                      converged=np.array_equal(tokens, h.tokens))
            if not active:
                break
            steps = t
            if trace is not None:
                best = BeamSet(beams).best_index()
                for k, h in enumerate(beams):
                    if h.iteration == t:
                        trace.log(t, k, h.tokens, h.confidences, h.mask, best)

    result = BeamSet(beams).best()
    result.steps = steps
    return result


# =============================================================================
# ITERATIVE REFINEMENT (easy-first and ablations)
# =============================================================================

def _refine(model, src, lengths, max_iter, order, enc=None, trace=None):
    """Shared loop: iteration 1 uses the empty mask; later iterations re-predict
    every position under a mask fixed after iteration 1. Returns when the
    currently best hypothesis repeats its tokens, or after ``max_iter``."""
    lengths = [int(lengths)] if np.ndim(lengths) == 0 else [int(n) for n in lengths]
    with no_grad():
        enc = enc if enc is not None else _encode(model, src)
        beams, masks, ranks = [], [], []
        for n in lengths:
            first = empty_mask(n)
            tokens, conf = _predict(model, enc, _placeholder(n), first.observed)
            if order == "easy-first":
                z = ranks_from_confidences(conf)
            elif order == "left-to-right":
                z = np.arange(1, n + 1)
            elif order == "right-to-left":
                z = np.arange(n, 0, -1)
            else:
                z = None
            ranks.append(z)
            masks.append(from_order_mask(z) if z is not None else cloze_mask(n))
            beams.append(Hypothesis(tokens, conf, ranks=z, mask=first, iteration=1))
        best = BeamSet(beams).best_index()
        if trace is not None:
            for k, h in enumerate(beams):
                trace.log(1, k, h.tokens, h.confidences, h.mask, best)

        for t in range(2, max_iter + 1):
            previous = [h.tokens for h in beams]
            for k, h in enumerate(beams):
                tokens, conf = _predict(model, enc, h.tokens, masks[k].observed)
                beams[k] = Hypothesis(tokens, conf, ranks=ranks[k], mask=masks[k], iteration=t,
                                      converged=np.array_equal(tokens, previous[k]))
            best = BeamSet(beams).best_index()
            if trace is not None:
                for k, h in enumerate(beams):
                    trace.log(t, k, h.tokens, h.confidences, h.mask, best, h.converged)
            if beams[best].converged:
                logger.debug("converged at t=%d on beam %d", t, best)
                result = beams[best]
                result.steps = t
                return result

    result = beams[best]
    result.steps = result.iteration
    return result


def parallel_easy_first(model, src, lengths, max_iter=10, enc=None, trace=None):
    """Each position is re-predicted from the positions that were more confident at iteration 1."""
    _check_nat(model, "easy-first")
    return _refine(model, src, lengths, max_iter, "easy-first", enc, trace)


def decode_fixed_order(model, src, lengths, order="left-to-right", max_iter=10, enc=None, trace=None):
    if order not in ("left-to-right", "right-to-left"):
        raise ValidationError(f"unknown order '{order}'")
    _check_nat(model, order)
    return _refine(model, src, lengths, max_iter, order, enc, trace)


def decode_all_but_itself(model, src, lengths, max_iter=10, enc=None, trace=None):
    """Every position sees all other positions of the previous iteration."""
    _check_nat(model, "all-but-itself")
    return _refine(model, src, lengths, max_iter, "all-but-itself", enc, trace)


def verify_fixed_point(model, src, hypothesis, enc=None):
    """True when one more pass under the final mask leaves the tokens unchanged."""
    with no_grad():
        enc = enc if enc is not None else _encode(model, src)
        mask = hypothesis.mask if hypothesis.mask is not None else empty_mask(hypothesis.length)
        tokens, _ = _predict(model, enc, hypothesis.tokens, mask.observed)
    return bool(np.array_equal(tokens, hypothesis.tokens))


# =============================================================================
# AUTOREGRESSIVE BEAM SEARCH
# =============================================================================

def _next_token_log_probs(model, enc, prefixes):
    width = len(prefixes[0])
    # slot ``width`` holds a placeholder that the causal decoder never reads
    tokens = np.array([list(p) + [EOS_ID] for p in prefixes], dtype=np.int64).reshape(len(prefixes), width + 1)
    logits = _array(model.vanilla_ar_forward(enc, tokens))[:, width, :]
    lp = log_softmax(np.asarray(logits, dtype=np.float64), axis=-1)
    lp[:, list(AR_NEVER_PREDICTED)] = -np.inf
    return lp


def ar_beam_search(model, src, beam=5, length_penalty=1.0, max_len=None, enc=None, trace=None):
    """Beam search to EOS, ranked by total log-prob / |Y|^alpha (|Y| counts EOS).

    Each step scores the top 2*beam expansions. EOS endings among the first
    ``beam`` of them are finished; the live beam refills with the best
    ``beam`` non-EOS expansions, so it stays full while hypotheses finish.
    Search stops once ``beam`` hypotheses have finished. Gives up after
    2*S + 8 tokens and returns the best unfinished prefix with
    ``finished=False``.
    """
    if model.config.decoder != "ar":
        raise ValidationError("ar_beam_search needs an autoregressive model")
    if beam < 1:
        raise ValidationError("beam must be at least 1")
    cap = max_len if max_len is not None else 2 * len(src) + 8
    cap = min(cap, model.config.max_positions - 1)

    def normalized(total, size):
        return total / (size ** length_penalty)

    live = [((), 0.0, ())]
    finished = []
    steps = 0
    with no_grad():
        enc = enc if enc is not None else _encode(model, src)
        for width in range(cap + 1):
            lp = _next_token_log_probs(model, enc, [p for p, _, _ in live])
            steps += 1
            candidates = []
            for b, (prefix, total, scores) in enumerate(live):
                for token in np.flatnonzero(np.isfinite(lp[b])):
                    candidates.append((total + lp[b, token], b, int(token)))
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
            next_live = []
            for k, (total, b, token) in enumerate(candidates[:2 * beam]):
                prefix, _, scores = live[b]
                scores = scores + (lp[b, token],)
                if token == EOS_ID:
                    if k >= beam:
                        continue
                    finished.append((prefix, total, scores))
                elif len(next_live) < beam and width + 1 <= cap:
                    next_live.append((prefix + (token,), total, scores))
                else:
                    continue
                if trace is not None:
                    trace.log(steps, k, prefix + (token,), np.exp(scores), converged=token == EOS_ID)
            if not next_live:
                break
            live = next_live
            if len(finished) >= beam:
                break

    if finished:
        prefix, total, scores = max(
            finished, key=lambda h: (normalized(h[1], len(h[0]) + 1), -len(h[0])))
        done = True
    else:
        logger.warning("no finished hypothesis within %d tokens; returning best prefix", cap)
        prefix, total, scores = max(live or [((), 0.0, ())], key=lambda h: normalized(h[1], max(len(h[0]), 1)))
        done = False
    return Hypothesis(np.array(prefix, dtype=np.int64), np.exp(np.array(scores[:len(prefix)])),
                      iteration=steps, converged=done, steps=steps, finished=done)


# =============================================================================
# DISPATCH
# =============================================================================

def decode(model, src, config, trace=None):
    """Decode one source sentence (ids, no LENGTH token) with ``config``."""
    src = np.asarray(src, dtype=np.int64)
    if config.algorithm == "ar-beam":
        return ar_beam_search(model, src, config.beam, config.length_penalty, trace=trace)
    _check_nat(model, config.algorithm)
    with no_grad():
        enc = _encode(model, src)
        lengths = _predict_lengths(model, enc, config.length_beam)
    if config.algorithm == "mask-predict":
        return mask_predict(model, src, lengths, config.max_iter, enc, trace)
    if config.algorithm == "easy-first":
        return parallel_easy_first(model, src, lengths, config.max_iter, enc, trace)
    if config.algorithm == "all-but-itself":
        return decode_all_but_itself(model, src, lengths, config.max_iter, enc, trace)
    return decode_fixed_order(model, src, lengths, config.algorithm, config.max_iter, enc, trace)


def decode_corpus(model, sources: Sequence, config, with_traces=False):
    """Decode sentences one at a time; returns (hypotheses, traces or None)."""
    hypotheses, traces = [], [] if with_traces else None
    for i, src in enumerate(sources):
        trace = DecodeTrace(i, config.algorithm) if with_traces else None
        hypotheses.append(decode(model, src, config, trace))
        if with_traces:
            traces.append(trace)
    return hypotheses, traces
