"""
masks.py
========
Visibility masks for every training objective and decoding mode.

Each mask is a ``VisibilityMask`` whose row n lists the target positions
query n may read. Random masks draw from an explicit ``RngStream`` so a
sentence gets the same mask whatever batch it lands in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .model import VisibilityMask
from .numerics import RngStream

MASK_MODES = ("disco-random", "cmlm", "autoregressive", "permutation", "cloze", "from-order")


def _check_size(n):
    if int(n) < 1:
        raise ValidationError(f"mask size must be at least 1, got {n}")
    return int(n)


def _generator(rng):
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise ValidationError("masks need an RngStream or numpy Generator")


def empty_mask(n):
    return VisibilityMask(np.zeros((_check_size(n),) * 2, dtype=bool))


def cloze_mask(n):
    """Everything except the position itself."""
    n = _check_size(n)
    return VisibilityMask(~np.eye(n, dtype=bool))


def autoregressive_mask(n):
    """Row n sees positions < n."""
    n = _check_size(n)
    return VisibilityMask(np.tri(n, k=-1, dtype=bool))


def from_order_mask(ranks):
    """Row n sees ``{i : z(i) < z(n)}`` for ranks ``z`` forming a permutation of 1..N."""
    z = np.asarray(ranks)
    if z.ndim != 1 or z.size == 0:
        raise ValidationError("ranks must be a non-empty vector")
    if not np.issubdtype(z.dtype, np.integer):
        if not np.all(np.equal(np.mod(z, 1), 0)):
            raise ValidationError("ranks must be integers")
        z = z.astype(np.int64)
    if not np.array_equal(np.sort(z), np.arange(1, z.size + 1)):
        raise ValidationError(f"ranks {z.tolist()} are not a permutation of 1..{z.size}")
    return VisibilityMask(z[None, :] < z[:, None])


def ranks_from_confidences(confidences):
    """Easy-first ranks: 1 for the most confident position, ties to the lower index."""
    p = np.asarray(confidences, dtype=np.float64)
    order = np.lexsort((np.arange(p.size), -p))
    ranks = np.empty(p.size, dtype=np.int64)
    ranks[order] = np.arange(1, p.size + 1)
    return ranks


def permutation_ranks(n, rng):
    """A uniformly random generation order."""
    n = _check_size(n)
    return _generator(rng).permutation(n) + 1


def sample_disco_mask(n, rng):
    """Each row independently observes u ~ Uniform{0..N-1} of the other positions."""
    n = _check_size(n)
    gen = _generator(rng)
    keys = gen.random((n, n))
    np.fill_diagonal(keys, np.inf)
    rank = np.argsort(np.argsort(keys, axis=1, kind="stable"), axis=1, kind="stable")
    visible_counts = gen.integers(0, n, size=n)
    return VisibilityMask(rank < visible_counts[:, None])


def cmlm_mask(n, rng):
    """Shared observed set: m ~ Uniform{1..N} positions are masked, the rest observed.

    Returns ``(mask, masked)`` where ``masked`` is a bool vector over positions.
    """
    n = _check_size(n)
    gen = _generator(rng)
    num_masked = int(gen.integers(1, n + 1))
    masked = np.zeros(n, dtype=bool)
    masked[gen.choice(n, size=num_masked, replace=False)] = True
    observed = np.broadcast_to(~masked, (n, n)).copy()
    np.fill_diagonal(observed, False)
    return VisibilityMask(observed), masked


@dataclass
class MaskSpec:
    mode: str = "disco-random"
    ranks: Optional[Sequence[int]] = None
    confidences: Optional[Sequence[float]] = None
    rng: Optional[RngStream] = None

    def __post_init__(self):
        if self.mode not in MASK_MODES:
            raise ValidationError(f"unknown mask mode '{self.mode}', expected one of {MASK_MODES}")
        if self.mode in ("disco-random", "cmlm", "permutation") and self.rng is None:
            raise ValidationError(f"mask mode '{self.mode}' needs an rng")
        if self.mode == "from-order" and self.ranks is None and self.confidences is None:
            raise ValidationError("from-order needs ranks or confidences")


def build_mask(spec, n):
    """Dispatch on ``spec.mode``; cmlm returns only the mask (see ``cmlm_mask`` for the masked set)."""
    if spec.mode == "disco-random":
        return sample_disco_mask(n, spec.rng)
    if spec.mode == "cmlm":
        return cmlm_mask(n, spec.rng)[0]
    if spec.mode == "autoregressive":
        return autoregressive_mask(n)
    if spec.mode == "cloze":
        return cloze_mask(n)
    if spec.mode == "permutation":
        return from_order_mask(permutation_ranks(n, spec.rng))
    ranks = spec.ranks if spec.ranks is not None else ranks_from_confidences(spec.confidences)
    if len(ranks) != n:
        raise ValidationError(f"{len(ranks)} ranks for a mask of size {n}")
    return from_order_mask(ranks)
