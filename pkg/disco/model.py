"""
model.py
========
Transformer encoder plus three decoder kinds sharing one parameter layout.

This module:
1. Defines ``ModelConfig`` with the base-scale and desk-scale presets
2. Builds the encoder (a LENGTH token is prepended at index 0)
3. Implements the DisCo decoder: keys/values are projections of
   word + position embeddings in every layer, queries start from the
   position embedding alone, self-attention is restricted per row by a
   ``VisibilityMask``
4. Implements the CMLM decoder (explicit MASK embeddings, bidirectional
   contextual self-attention) and the autoregressive decoder (causal, with
   an optional contextless-key/value variant)
5. Predicts the target length from the LENGTH-token state
6. Saves and loads checkpoints as versioned ``.npz`` containers

Every block is pre-norm: norm -> sublayer -> dropout -> residual add.
Target input and output embeddings are tied.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .data import EOS_ID, LENGTH_ID, PAD_ID
from .errors import DimensionError, FormatError, LengthError, ValidationError
from .numerics import (Tensor, dropout, embedding, gelu, layer_norm, log_softmax,
                       masked_softmax, RngStream)

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIGURATION
# =============================================================================

DECODER_KINDS = ("disco", "cmlm", "ar")
CHECKPOINT_FORMAT = "disco-checkpoint-v1"
LENGTH_TABLE_MULTIPLE = 16


def default_length_bins(source_length_cap):
    """2 * cap + 8, rounded up to a multiple of 16."""
    raw = 2 * int(source_length_cap) + 8
    return -(-raw // LENGTH_TABLE_MULTIPLE) * LENGTH_TABLE_MULTIPLE


@dataclass
class ModelConfig:
    num_layers_enc: int = 2
    num_layers_dec: int = 2
    model_dim: int = 64
    hidden_dim: int = 128
    num_heads: int = 4
    vocab_size_src: int = 64
    vocab_size_tgt: int = 64
    max_positions: int = 64
    max_length_bins: int = 32
    dropout: float = 0.1
    label_smoothing: float = 0.1
    decoder: str = "disco"
    contextless_kv: bool = False
    precision: int = 64
    init_std: float = 0.02

    def __post_init__(self):
        for name in ("num_layers_enc", "num_layers_dec", "model_dim", "hidden_dim", "num_heads",
                     "vocab_size_src", "vocab_size_tgt", "max_positions", "max_length_bins"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if self.model_dim % self.num_heads:
            raise ValidationError(f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}")
        if self.max_length_bins > self.max_positions:
            raise ValidationError("max_length_bins cannot exceed max_positions")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValidationError("label_smoothing must lie in [0, 1)")
        if self.decoder not in DECODER_KINDS:
            raise ValidationError(f"decoder must be one of {DECODER_KINDS}")
        if self.contextless_kv and self.decoder != "ar":
            raise ValidationError("contextless_kv only applies to the ar decoder")
        if self.precision not in (32, 64):
            raise ValidationError("precision must be 32 or 64")

    @property
    def head_dim(self):
        return self.model_dim // self.num_heads

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    @property
    def uses_contextless_kv(self):
        return self.decoder == "disco" or self.contextless_kv

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValidationError(f"unknown model fields: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def base_scale(cls, **overrides):
        values = dict(num_layers_enc=6, num_layers_dec=6, model_dim=512, hidden_dim=2048, num_heads=8)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def desk_scale(cls, **overrides):
        values = dict(num_layers_enc=2, num_layers_dec=2, model_dim=64, hidden_dim=128, num_heads=4)
        values.update(overrides)
        return cls(**values)


# =============================================================================
# MASKS AND ENCODER OUTPUT
# =============================================================================

@dataclass(frozen=True, eq=False)
class VisibilityMask:
    """``observed[n, m]`` is True when query position n may read position m."""

    observed: np.ndarray

    def __post_init__(self):
        observed = np.asarray(self.observed, dtype=bool)
        if observed.ndim != 2 or observed.shape[0] != observed.shape[1]:
            raise DimensionError(f"visibility mask must be N x N, got {observed.shape}")
        if np.any(np.diagonal(observed)):
            raise ValidationError("a position can never observe itself")
        observed = observed.copy()
        observed.setflags(write=False)
        object.__setattr__(self, "observed", observed)

    @property
    def size(self):
        return self.observed.shape[0]

    def row(self, n):
        return np.flatnonzero(self.observed[n])

    def digest(self):
        payload = np.packbits(self.observed).tobytes() + str(self.size).encode()
        return hashlib.sha1(payload).hexdigest()[:12]

    def __eq__(self, other):
        return isinstance(other, VisibilityMask) and np.array_equal(self.observed, other.observed)

    def __hash__(self):
        return hash(self.digest())


@dataclass
class EncoderOutput:
    """Encoder states ``[B, S+1, d]`` (LENGTH at index 0) and key padding ``[B, S+1]``."""

    states: Tensor
    padding: np.ndarray

    @property
    def batch_size(self):
        return self.states.shape[0]


def _visibility_array(mask, n):
    """Mask as a bool array of shape [N, N] or [B, N, N]."""
    observed = mask.observed if isinstance(mask, VisibilityMask) else np.asarray(mask, dtype=bool)
    if observed.ndim not in (2, 3) or observed.shape[-2:] != (n, n):
        raise DimensionError(f"mask of shape {observed.shape} does not fit {n} target positions")
    if np.any(np.diagonal(observed, axis1=-2, axis2=-1)):
        raise ValidationError("a position can never observe itself")
    return observed


# =============================================================================
# MODEL
# =============================================================================

class Model:
    """Parameters plus the forward passes. ``params`` maps names to leaf Tensors."""

    def __init__(self, config, seed=0):
        self.config = config
        self.training = False
        self.dropout_rate = config.dropout
        self.params: Dict[str, Tensor] = {}
        self._init_params(RngStream(seed).substream("init").generator())

    # -- parameters -----------------------------------------------------------

    def _init_params(self, gen):
        cfg = self.config
        d, hid = cfg.model_dim, cfg.hidden_dim

        def normal(name, shape):
            self.params[name] = Tensor(gen.normal(0.0, cfg.init_std, size=shape), requires_grad=True, dtype=cfg.dtype)

        def const(name, shape, value):
            self.params[name] = Tensor(np.full(shape, value), requires_grad=True, dtype=cfg.dtype)

        def linear(prefix, n_in, n_out):
            normal(f"{prefix}.weight", (n_in, n_out))
            const(f"{prefix}.bias", (n_out,), 0.0)

        def norm(prefix):
            const(f"{prefix}.gain", (d,), 1.0)
            const(f"{prefix}.bias", (d,), 0.0)

        def attention(prefix):
            for proj in ("q", "k", "v", "o"):
                linear(f"{prefix}.{proj}", d, d)

        normal("src_embed", (cfg.vocab_size_src, d))
        normal("tgt_embed", (cfg.vocab_size_tgt, d))
        normal("src_pos", (cfg.max_positions + 1, d))
        normal("tgt_pos", (cfg.max_positions + 1, d))
        for i in range(cfg.num_layers_enc):
            attention(f"enc.{i}.self_attn")
            norm(f"enc.{i}.ln_attn")
            linear(f"enc.{i}.ffn.fc1", d, hid)
            linear(f"enc.{i}.ffn.fc2", hid, d)
            norm(f"enc.{i}.ln_ffn")
        norm("enc.ln_final")
        for j in range(cfg.num_layers_dec):
            attention(f"dec.{j}.self_attn")
            norm(f"dec.{j}.ln_self")
            if cfg.uses_contextless_kv:
                norm(f"dec.{j}.ln_kv")
            attention(f"dec.{j}.cross_attn")
            norm(f"dec.{j}.ln_cross")
            linear(f"dec.{j}.ffn.fc1", d, hid)
            linear(f"dec.{j}.ffn.fc2", hid, d)
            norm(f"dec.{j}.ln_ffn")
        norm("dec.ln_final")
        const("out.bias", (cfg.vocab_size_tgt,), 0.0)
        linear("length", d, cfg.max_length_bins)

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        unknown = set(state) - set(self.params)
        if missing or unknown:
            raise ValidationError(f"state mismatch: missing {sorted(missing)}, unknown {sorted(unknown)}")
        for name, value in state.items():
            value = np.asarray(value)
            if value.shape != self.params[name].shape:
                raise DimensionError(f"{name}: expected {self.params[name].shape}, got {value.shape}")
            self.params[name].data = value.astype(self.config.dtype, copy=True)
        return self

    def train(self, dropout_rate=None):
        """Enable dropout, optionally overriding the configured rate."""
        if dropout_rate is not None:
            if not 0.0 <= dropout_rate < 1.0:
                raise ValidationError("dropout must lie in [0, 1)")
            self.dropout_rate = dropout_rate
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    # -- building blocks ------------------------------------------------------

    def _linear(self, x, prefix):
        return x @ self.params[f"{prefix}.weight"] + self.params[f"{prefix}.bias"]

    def _norm(self, x, prefix):
        return layer_norm(x, self.params[f"{prefix}.gain"], self.params[f"{prefix}.bias"])

    def _dropout(self, x, generator):
        if not self.training:
            return x
        return dropout(x, self.dropout_rate, generator)

    def _split_heads(self, x):
        b, n, _ = x.shape
        h = self.config.num_heads
        return x.reshape(b, n, h, self.config.head_dim).transpose(0, 2, 1, 3)

    def _attention(self, prefix, query, keys, values, visible):
        """Multi-head attention; ``visible`` broadcasts to [B, Nq, Nk]."""
        q = self._split_heads(self._linear(query, f"{prefix}.q"))
        k = self._split_heads(self._linear(keys, f"{prefix}.k"))
        v = self._split_heads(self._linear(values, f"{prefix}.v"))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.config.head_dim))
        weights = masked_softmax(scores, np.asarray(visible, dtype=bool)[:, None, :, :])
        context = weights @ v
        b, _, n, _ = context.shape
        merged = context.transpose(0, 2, 1, 3).reshape(b, n, self.config.model_dim)
        return self._linear(merged, f"{prefix}.o")

    def _ffn(self, x, prefix):
        return self._linear(gelu(self._linear(x, f"{prefix}.fc1")), f"{prefix}.fc2")

    # -- encoder --------------------------------------------------------------

    def encode(self, src, generator=None):
        """PAD-padded source ids ``[B, S]`` (or one sentence ``[S]``) to encoder states."""
        src = np.atleast_2d(np.asarray(src, dtype=np.int64))
        batch, length = src.shape
        if length > self.config.max_positions:
            raise LengthError(f"source length {length} exceeds max_positions {self.config.max_positions}")
        ids = np.concatenate([np.full((batch, 1), LENGTH_ID, dtype=np.int64), src], axis=1)
        padding = ids == PAD_ID
        x = embedding(self.params["src_embed"], ids) + embedding(self.params["src_pos"], np.arange(length + 1))
        x = self._dropout(x, generator)
        visible = ~padding[:, None, :]
        for i in range(self.config.num_layers_enc):
            h = self._norm(x, f"enc.{i}.ln_attn")
            x = x + self._dropout(self._attention(f"enc.{i}.self_attn", h, h, h, visible), generator)
            h = self._norm(x, f"enc.{i}.ln_ffn")
            x = x + self._dropout(self._ffn(h, f"enc.{i}.ffn"), generator)
        return EncoderOutput(self._norm(x, "enc.ln_final"), padding)

    # -- length head ----------------------------------------------------------

    def length_logits(self, enc):
        """Unnormalized scores ``[B, L_max]``; column i is length i + 1."""
        return self._linear(enc.states[:, 0, :], "length")

    def predict_length(self, enc):
        """Log-probabilities ``[B, L_max]`` over target lengths 1..L_max."""
        return log_softmax(self.length_logits(enc), axis=-1)

    # -- decoders -------------------------------------------------------------

    def _check_target(self, tgt):
        tgt = np.atleast_2d(np.asarray(tgt, dtype=np.int64))
        if tgt.shape[1] > self.config.max_positions:
            raise LengthError(f"target length {tgt.shape[1]} exceeds max_positions {self.config.max_positions}")
        return tgt

    def _decoder_stack(self, enc, h, kv, self_visible, generator):
        """Shared layer loop. ``kv`` is the contextless stream or None for contextual K/V."""
        cross_visible = ~enc.padding[:, None, :]
        for j in range(self.config.num_layers_dec):
            query = self._norm(h, f"dec.{j}.ln_self")
            source = self._norm(kv, f"dec.{j}.ln_kv") if kv is not None else query
            h = h + self._dropout(self._attention(f"dec.{j}.self_attn", query, source, source, self_visible), generator)
            query = self._norm(h, f"dec.{j}.ln_cross")
            h = h + self._dropout(self._attention(f"dec.{j}.cross_attn", query, enc.states, enc.states, cross_visible),
                                  generator)
            h = h + self._dropout(self._ffn(self._norm(h, f"dec.{j}.ln_ffn"), f"dec.{j}.ffn"), generator)
        h = self._norm(h, "dec.ln_final")
        return h @ self.params["tgt_embed"].transpose(1, 0) + self.params["out.bias"]

    def disco_forward(self, enc, tgt, mask, positions=None, generator=None):
        """Logits ``[B, N, V]``; row n depends on X, the positions and the tokens mask row n observes.

        ``mask`` is a VisibilityMask or bool array ``[N, N]`` / ``[B, N, N]``.
        ``positions`` overrides the position ids (default 0..N-1).
        """
        if not self.config.uses_contextless_kv:
            raise ValidationError("disco_forward needs contextless keys/values (decoder 'disco' or contextless ar)")
        tgt = self._check_target(tgt)
        batch, n = tgt.shape
        observed = _visibility_array(mask, n)
        positions = np.arange(n) if positions is None else np.asarray(positions, dtype=np.int64)
        if positions.shape[-1] != n:
            raise DimensionError(f"{positions.shape[-1]} positions for {n} target tokens")
        visible = np.broadcast_to(observed, (batch, n, n)) & (tgt != PAD_ID)[:, None, :]
        p = embedding(self.params["tgt_pos"], positions)
        kv = self._dropout(embedding(self.params["tgt_embed"], tgt) + p, generator)
        query = p * np.ones((batch, 1, 1))
        return self._decoder_stack(enc, query, kv, visible, generator)

    def cmlm_forward(self, enc, tokens, generator=None):
        """Logits ``[B, N, V]`` for a target with MASK ids at the positions to predict."""
        if self.config.decoder != "cmlm":
            raise ValidationError("cmlm_forward needs a model built with decoder 'cmlm'")
        tokens = self._check_target(tokens)
        n = tokens.shape[1]
        x = embedding(self.params["tgt_embed"], tokens) + embedding(self.params["tgt_pos"], np.arange(n))
        visible = np.broadcast_to((tokens != PAD_ID)[:, None, :], (tokens.shape[0], n, n))
        return self._decoder_stack(enc, self._dropout(x, generator), None, visible, generator)

    def vanilla_ar_forward(self, enc, tgt, generator=None):
        """Logits ``[B, N, V]``; row n scores token n given tokens before it."""
        if self.config.decoder != "ar":
            raise ValidationError("vanilla_ar_forward needs a model built with decoder 'ar'")
        tgt = self._check_target(tgt)
        batch, n = tgt.shape
        if self.config.contextless_kv:
            from .masks import autoregressive_mask
            return self.disco_forward(enc, tgt, autoregressive_mask(n), generator=generator)
        # EOS doubles as the begin-of-sentence input
        shifted = np.concatenate([np.full((batch, 1), EOS_ID, dtype=np.int64), tgt[:, :-1]], axis=1)
        causal = np.tril(np.ones((n, n), dtype=bool))
        visible = causal[None, :, :] & (shifted != PAD_ID)[:, None, :]
        x = embedding(self.params["tgt_embed"], shifted) + embedding(self.params["tgt_pos"], np.arange(n))
        return self._decoder_stack(enc, self._dropout(x, generator), None, visible, generator)


# =============================================================================
# CHECKPOINTS
# =============================================================================

def save_checkpoint(model, path, extra: Optional[dict] = None):
    """Write config + named parameters; the round trip is bit-exact."""
    arrays = {f"param/{name}": p.data for name, p in model.params.items()}
    arrays["__format__"] = np.array(CHECKPOINT_FORMAT)
    arrays["__config__"] = np.array(json.dumps(model.config.to_dict(), sort_keys=True))
    arrays["__extra__"] = np.array(json.dumps(extra or {}, sort_keys=True))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)
    logger.debug("saved checkpoint %s", path)
    return path


def load_checkpoint(path):
    """Return ``(model, extra)``."""
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FormatError(f"not a checkpoint archive ({exc})", path) from exc
    with archive:
        if "__format__" not in archive.files or str(archive["__format__"]) != CHECKPOINT_FORMAT:
            raise FormatError(f"missing or unsupported format tag, expected {CHECKPOINT_FORMAT}", path)
        config = ModelConfig.from_dict(json.loads(str(archive["__config__"])))
        extra = json.loads(str(archive["__extra__"])) if "__extra__" in archive.files else {}
        state = {key[len("param/"):]: archive[key] for key in archive.files if key.startswith("param/")}
    model = Model(config)
    model.load_state_dict(state)
    return model, extra
