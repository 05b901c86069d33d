"""
trainer.py
==========
Training objectives, optimizer, schedule and checkpoint averaging.

This module:
1. Computes the DisCo, CMLM, easy-first and autoregressive losses
2. Applies the warmup / inverse-square-root learning-rate schedule
3. Runs bias-corrected Adam with decoupled weight decay
4. Keeps the best checkpoints by dev exact match and averages them
5. Drives the epoch loop and writes the manifest and metrics files

Word losses are token means; the length term is a sentence mean with
weight 1. Mask draws use one random substream per (objective, epoch,
sentence), so a sentence sees the same mask at any batch size.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import log_softmax
from tqdm import tqdm

from .data import EOS_ID, MASK_ID, PAD_ID, as_batch, batch_by_tokens
from .errors import LengthError, NonFiniteError, ValidationError
from .masks import cmlm_mask, empty_mask, from_order_mask, ranks_from_confidences, sample_disco_mask
from .model import save_checkpoint
from .numerics import RngStream, backward, cross_entropy_smoothed

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIGURATION
# =============================================================================

OBJECTIVES = ("disco-random", "cmlm", "easy-first", "autoregressive")
COMPATIBLE_DECODERS = {
    "disco-random": ("disco",),
    "easy-first": ("disco",),
    "cmlm": ("disco", "cmlm"),
    "autoregressive": ("ar",),
}


@dataclass
class TrainConfig:
    peak_lr: float = 3e-4
    warmup_steps: int = 500
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-6
    weight_decay: float = 0.01
    # label_smoothing and dropout left unset take the model config's values
    label_smoothing: Optional[float] = None
    tokens_per_batch: int = 2048
    max_steps: int = 5000
    max_epochs: int = 1000
    dropout: Optional[float] = None
    checkpoints_to_average: int = 5
    objective: str = "disco-random"
    seed: int = 1
    log_every: int = 100
    dev_sentences: int = 200
    save_checkpoints: bool = True
    progress: bool = True

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.peak_lr <= 0:
            raise ValidationError("peak_lr must be positive")
        if self.warmup_steps < 1:
            raise ValidationError("warmup_steps must be at least 1")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValidationError("betas must be two numbers in [0, 1)")
        if self.adam_eps <= 0 or self.weight_decay < 0:
            raise ValidationError("adam_eps must be positive and weight_decay non-negative")
        for name in ("label_smoothing", "dropout"):
            value = getattr(self, name)
            if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))
                                      or not 0.0 <= value < 1.0):
                raise ValidationError(f"{name} must be unset or lie in [0, 1)")
        if self.tokens_per_batch < 1 or self.max_steps < 1 or self.max_epochs < 1:
            raise ValidationError("tokens_per_batch, max_steps and max_epochs must be positive")
        if self.checkpoints_to_average < 1:
            raise ValidationError("checkpoints_to_average must be at least 1")
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"unknown objective '{self.objective}', expected one of {OBJECTIVES}")


# =============================================================================
# LOSSES
# =============================================================================

def _epsilon(model, epsilon):
    return model.config.label_smoothing if epsilon is None else epsilon


def _pad_masks(masks, width):
    out = np.zeros((len(masks), width, width), dtype=bool)
    for b, mask in enumerate(masks):
        n = mask.size
        out[b, :n, :n] = mask.observed
    return out


def _word_nll(logits, targets, weights, epsilon):
    vocab = logits.shape[-1]
    return cross_entropy_smoothed(logits.reshape(-1, vocab), targets.reshape(-1), epsilon,
                                  weights=np.asarray(weights, dtype=np.float64).reshape(-1))


def length_loss(model, enc, lengths, epsilon=None):
    """Smoothed NLL of the true target lengths under the length head."""
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.max() > model.config.max_length_bins:
        raise LengthError(f"target length {lengths.max()} exceeds max_length_bins {model.config.max_length_bins}")
    return cross_entropy_smoothed(model.length_logits(enc), lengths - 1, _epsilon(model, epsilon))


def _finish(total, parts, return_parts):
    if not return_parts:
        return total
    return total, {name: float(term.item()) for name, term in parts.items()}


def disco_loss(model, src, tgt=None, rng=None, epsilon=None, masks=None, generator=None, return_parts=False):
    """Word NLL over every target position, each under its own random mask, plus the length term.

    ``masks`` (one VisibilityMask per sentence) replaces the random draw.
    """
    batch = as_batch(src, tgt)
    eps = _epsilon(model, epsilon)
    if masks is None:
        if rng is None:
            raise ValidationError("disco_loss needs an rng or explicit masks")
        masks = [sample_disco_mask(int(n), rng.substream("disco-mask", int(i)))
                 for n, i in zip(batch.tgt_lengths, batch.indices)]
    enc = model.encode(batch.src, generator)
    length_term = length_loss(model, enc, batch.tgt_lengths, eps)
    logits = model.disco_forward(enc, batch.tgt, _pad_masks(masks, batch.tgt.shape[1]), generator=generator)
    word = _word_nll(logits, batch.tgt, batch.tgt_valid(), eps)
    return _finish(word + length_term, {"word": word, "length": length_term}, return_parts)


def cmlm_loss(model, src, tgt=None, rng=None, epsilon=None, masked=None, generator=None, return_parts=False):
    """Word NLL on the masked positions only (mean over the masked count), plus the length term.

    DisCo models read the shared observed set through identical mask rows;
    CMLM models through MASK embeddings. ``masked`` (bool vector per
    sentence) replaces the random draw.
    """
    batch = as_batch(src, tgt)
    eps = _epsilon(model, epsilon)
    if masked is None:
        if rng is None:
            raise ValidationError("cmlm_loss needs an rng or explicit masked positions")
        masked = [cmlm_mask(int(n), rng.substream("cmlm-mask", int(i)))[1]
                  for n, i in zip(batch.tgt_lengths, batch.indices)]
    width = batch.tgt.shape[1]
    selected = np.zeros((batch.size, width), dtype=bool)
    for b, m in enumerate(masked):
        selected[b, :len(m)] = np.asarray(m, dtype=bool)
    enc = model.encode(batch.src, generator)
    length_term = length_loss(model, enc, batch.tgt_lengths, eps)
    if model.config.decoder == "cmlm":
        inputs = np.where(selected, MASK_ID, batch.tgt)
        logits = model.cmlm_forward(enc, inputs, generator=generator)
    else:
        observed = np.broadcast_to((~selected & batch.tgt_valid())[:, None, :], (batch.size, width, width)).copy()
        observed[:, np.arange(width), np.arange(width)] = False
        logits = model.disco_forward(enc, batch.tgt, observed, generator=generator)
    word = _word_nll(logits, batch.tgt, selected & batch.tgt_valid(), eps)
    return _finish(word + length_term, {"word": word, "length": length_term}, return_parts)


def easy_first_training_loss(model, src, tgt=None, epsilon=None, generator=None, return_parts=False):
    """Pass 1 under the empty mask ranks positions by the confidence of the
    reference token; pass 2 predicts each position from the ones ranked above it."""
    batch = as_batch(src, tgt)
    eps = _epsilon(model, epsilon)
    width = batch.tgt.shape[1]
    enc = model.encode(batch.src, generator)
    length_term = length_loss(model, enc, batch.tgt_lengths, eps)
    weights = batch.tgt_valid()

    first = _pad_masks([empty_mask(int(n)) for n in batch.tgt_lengths], width)
    logits_1 = model.disco_forward(enc, batch.tgt, first, generator=generator)
    word_1 = _word_nll(logits_1, batch.tgt, weights, eps)

    lp = log_softmax(logits_1.data, axis=-1)
    reference = np.take_along_axis(lp, batch.tgt[..., None], axis=-1)[..., 0]
    orders = [from_order_mask(ranks_from_confidences(reference[b, :n]))
              for b, n in enumerate(batch.tgt_lengths)]
    logits_2 = model.disco_forward(enc, batch.tgt, _pad_masks(orders, width), generator=generator)
    word_2 = _word_nll(logits_2, batch.tgt, weights, eps)
    return _finish(word_1 + word_2 + length_term,
                   {"word_first": word_1, "word_second": word_2, "length": length_term}, return_parts)


def ar_loss(model, src, tgt=None, epsilon=None, generator=None, return_parts=False):
    """Teacher-forced NLL of the target followed by EOS."""
    batch = as_batch(src, tgt)
    eps = _epsilon(model, epsilon)
    width = batch.tgt.shape[1] + 1
    targets = np.full((batch.size, width), PAD_ID, dtype=np.int64)
    targets[:, :-1] = batch.tgt
    targets[np.arange(batch.size), batch.tgt_lengths] = EOS_ID
    weights = np.arange(width)[None, :] <= batch.tgt_lengths[:, None]
    enc = model.encode(batch.src, generator)
    logits = model.vanilla_ar_forward(enc, targets, generator=generator)
    word = _word_nll(logits, targets, weights, eps)
    return _finish(word, {"word": word}, return_parts)


def objective_loss(model, batch, rng, config, generator=None):
    eps = config.label_smoothing
    if config.objective == "disco-random":
        return disco_loss(model, batch, rng=rng, epsilon=eps, generator=generator)
    if config.objective == "cmlm":
        return cmlm_loss(model, batch, rng=rng, epsilon=eps, generator=generator)
    if config.objective == "easy-first":
        return easy_first_training_loss(model, batch, epsilon=eps, generator=generator)
    return ar_loss(model, batch, epsilon=eps, generator=generator)


# =============================================================================
# OPTIMIZATION
# =============================================================================

def lr_at(step, config):
    """Linear warmup to ``peak_lr``, then ``peak_lr * sqrt(warmup / step)``."""
    if step < 1:
        raise ValidationError("steps are counted from 1")
    if step <= config.warmup_steps:
        return config.peak_lr * step / config.warmup_steps
    return config.peak_lr * np.sqrt(config.warmup_steps / step)


@dataclass
class TrainState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(params, state, lr, betas=(0.9, 0.999), eps=1e-6, weight_decay=0.01):
    """One bias-corrected Adam step with decoupled weight decay, in place.

    Parameters without a gradient are left untouched.
    """
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            bad = int(p.grad.size - np.count_nonzero(np.isfinite(p.grad)))
            raise NonFiniteError(f"non-finite gradient for {name}",
                                 {"parameter": name, "step": state.step + 1, "count": bad, "lr": lr})
    state.step += 1
    beta1, beta2 = betas
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name, np.zeros_like(p.data))
        v = state.v.get(name, np.zeros_like(p.data))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - beta1 ** state.step)
        v_hat = v / (1.0 - beta2 ** state.step)
        update = m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p.data
        p.data = (p.data - lr * update).astype(p.dtype, copy=False)
    return params


# =============================================================================
# CHECKPOINT SELECTION
# =============================================================================

@dataclass(eq=False)
class CheckpointRecord:
    step: int
    metric: float
    state: Dict[str, np.ndarray]
    path: Optional[str] = None


class CheckpointRing:
    """The k best checkpoints by dev metric (ties to the earlier step)."""

    def __init__(self, k=5):
        if k < 1:
            raise ValidationError("ring size must be at least 1")
        self.k = k
        self.records: List[CheckpointRecord] = []

    def offer(self, record):
        self.records.append(record)
        self.records.sort(key=lambda r: (-r.metric, r.step))
        del self.records[self.k:]
        return record in self.records

    def __len__(self):
        return len(self.records)


def select_and_average_checkpoints(records, k=5):
    """Mean of the parameter tensors of the k best records (by metric)."""
    records = list(records)
    if not records:
        raise ValidationError("no checkpoints to average")
    best = sorted(records, key=lambda r: (-r.metric, r.step))[:k]
    best.sort(key=lambda r: r.step)
    names = best[0].state.keys()
    return {name: np.mean(np.stack([r.state[name] for r in best]), axis=0).astype(best[0].state[name].dtype)
            for name in names}


# =============================================================================
# TRAINING LOOP
# =============================================================================

@dataclass
class TrainResult:
    model: object
    history: pd.DataFrame
    step_losses: List[float]
    final_dev_metric: float
    averaged_steps: List[int]


def dev_exact_match(model, pairs, decode_config=None):
    """Exact-match rate of greedy decoding on ``pairs``."""
    from .inference import DecodeConfig, decode, default_algorithm, fit_decode_config

    if not pairs:
        return float("nan")
    if decode_config is None:
        config = DecodeConfig(algorithm=default_algorithm(model), length_beam=1, beam=1)
    else:
        config = fit_decode_config(model, decode_config)
    was_training = model.training
    model.eval()
    hits = 0
    for src, tgt in pairs:
        hits += int(np.array_equal(decode(model, src, config).tokens, tgt))
    if was_training:
        model.train()
    return hits / len(pairs)


def write_manifest(path, record):
    with open(path, "a", encoding="utf-8") as handle:
        handle.write(json.dumps(record, sort_keys=True, default=str) + "\n")


def train(model, corpus, config, run_dir=None, decode_config=None, digest=None):
    """Epoch loop over token-budget batches; returns the averaged model and history."""
    if model.config.decoder not in COMPATIBLE_DECODERS[config.objective]:
        raise ValidationError(f"objective '{config.objective}' cannot train a '{model.config.decoder}' decoder")
    pairs = corpus.pairs("train")
    if not pairs:
        raise ValidationError("the corpus has no train split")
    dev = corpus.pairs("dev")[:config.dev_sentences]
    if not dev:
        logger.warning("no dev pairs; checkpoints are ranked by negative training loss")

    root = RngStream(config.seed)
    state = TrainState()
    ring = CheckpointRing(config.checkpoints_to_average)
    history, step_losses = [], []
    manifest = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        manifest = run_dir / "manifest.jsonl"
        manifest.write_text("", encoding="utf-8")
        write_manifest(manifest, {"event": "config", "seed": config.seed, "digest": digest,
                                   "train": asdict(config), "model": model.config.to_dict(),
                                   "parameters": model.num_parameters()})

    model.train(config.dropout)
    step, epoch = 0, 0
    progress = tqdm(total=config.max_steps, desc=f"train[{config.objective}]", disable=not config.progress)
    while step < config.max_steps and epoch < config.max_epochs:
        epoch += 1
        epoch_rng = root.substream("epoch", epoch)
        epoch_losses = []
        for batch in batch_by_tokens(pairs, config.tokens_per_batch, root, epoch):
            if step >= config.max_steps:
                break
            step += 1
            lr = lr_at(step, config)
            model.zero_grad()
            loss = objective_loss(model, batch, epoch_rng, config, epoch_rng.substream("dropout", step).generator())
            backward(loss)
            adam_update(model.params, state, lr, config.betas, config.adam_eps, config.weight_decay)
            step_losses.append(loss.item())
            epoch_losses.append(loss.item())
            if step % config.log_every == 0:
                logger.info("step %d | loss %.4f | lr %.2e", step, loss.item(), lr)
            progress.update(1)
        model.zero_grad()

        train_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        metric = dev_exact_match(model, dev, decode_config) if dev else -train_loss
        logger.info("epoch %d | step %d | train loss %.4f | dev exact match %.4f", epoch, step, train_loss, metric)
        checkpoint = None
        if run_dir is not None and config.save_checkpoints:
            checkpoint = str(save_checkpoint(model, run_dir / "checkpoints" / f"epoch_{epoch:03d}.npz",
                                             {"epoch": epoch, "step": step, "dev_metric": metric}))
        ring.offer(CheckpointRecord(step, metric, model.state_dict(), checkpoint))
        history.append({"epoch": epoch, "step": step, "lr": lr_at(max(step, 1), config),
                        "train_loss": train_loss, "dev_exact_match": metric})
        if manifest is not None:
            write_manifest(manifest, {"event": "epoch", **history[-1], "checkpoint": checkpoint})
    progress.close()

    model.load_state_dict(select_and_average_checkpoints(ring.records, config.checkpoints_to_average))
    model.eval()
    final = dev_exact_match(model, dev, decode_config) if dev else float("nan")
    averaged = sorted(r.step for r in ring.records)
    logger.info("averaged %d checkpoints (steps %s); dev exact match %.4f", len(averaged), averaged, final)
    frame = pd.DataFrame(history, columns=["epoch", "step", "lr", "train_loss", "dev_exact_match"])
    if run_dir is not None:
        save_checkpoint(model, run_dir / "model.npz", {"averaged_steps": averaged, "dev_metric": final})
        frame.to_csv(run_dir / "metrics.csv", index=False)
        write_manifest(manifest, {"event": "final", "averaged_steps": averaged, "dev_exact_match": final})
    return TrainResult(model, frame, step_losses, final, averaged)
