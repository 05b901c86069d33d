import numpy as np
import pytest

from disco.errors import DimensionError, ValidationError
from disco.masks import (MaskSpec, autoregressive_mask, build_mask, cloze_mask, cmlm_mask, empty_mask,
                         from_order_mask, permutation_ranks, ranks_from_confidences, sample_disco_mask)
from disco.model import VisibilityMask
from disco.numerics import RngStream


def test_fixed_masks():
    assert not empty_mask(3).observed.any()
    assert cloze_mask(3).observed.sum() == 6
    ar = autoregressive_mask(4).observed
    assert ar[2].tolist() == [True, True, False, False]
    assert not ar[0].any()


def test_from_order_rows():
    mask = from_order_mask([2, 3, 1])
    assert mask.row(0).tolist() == [2]
    assert mask.row(1).tolist() == [0, 2]
    assert mask.row(2).tolist() == []


def test_left_to_right_order_is_autoregressive():
    assert from_order_mask(np.arange(1, 6)) == autoregressive_mask(5)


@pytest.mark.parametrize("ranks", [[1, 1, 2], [0, 1, 2], [1, 2, 4], [1.5, 2, 3]])
def test_from_order_rejects_non_permutations(ranks):
    with pytest.raises(ValidationError):
        from_order_mask(ranks)


def test_ranks_from_confidences_ties_to_lower_index():
    assert ranks_from_confidences([0.2, 0.9, 0.9, 0.5]).tolist() == [4, 1, 2, 3]


def test_single_token_masks():
    assert sample_disco_mask(1, RngStream(0)).observed.tolist() == [[False]]
    mask, masked = cmlm_mask(1, RngStream(0))
    assert masked.tolist() == [True]


@pytest.mark.parametrize("n", [1, 2, 5, 12])
def test_disco_mask_never_observes_itself(n):
    for seed in range(20):
        observed = sample_disco_mask(n, RngStream(seed)).observed
        assert not np.diagonal(observed).any()


def test_disco_mask_counts_are_uniform():
    n, draws = 4, 4000
    counts = np.zeros(n, dtype=int)
    gen = np.random.default_rng(3)
    for _ in range(draws):
        counts[sample_disco_mask(n, gen).observed[0].sum()] += 1
    assert np.all(np.abs(counts / draws - 1.0 / n) < 0.03)


def test_cmlm_mask_mean_masked_count():
    # m ~ Uniform{1..9} has mean 5
    gen = np.random.default_rng(11)
    counts = [cmlm_mask(9, gen)[1].sum() for _ in range(100_000)]
    assert np.mean(counts) == pytest.approx(5.0, abs=0.05)
    assert min(counts) == 1 and max(counts) == 9


def test_disco_mask_is_reproducible():
    assert sample_disco_mask(6, RngStream(9)) == sample_disco_mask(6, RngStream(9))


def test_cmlm_rows_share_observed_set():
    mask, masked = cmlm_mask(6, RngStream(2))
    assert 1 <= masked.sum() <= 6
    for n in range(6):
        expected = ~masked
        expected[n] = False
        assert mask.observed[n].tolist() == expected.tolist()


def test_permutation_ranks():
    ranks = permutation_ranks(7, RngStream(1))
    assert sorted(ranks.tolist()) == list(range(1, 8))


def test_build_mask_dispatch():
    assert build_mask(MaskSpec("cloze"), 3) == cloze_mask(3)
    assert build_mask(MaskSpec("from-order", confidences=[0.1, 0.8]), 2) == from_order_mask([2, 1])
    with pytest.raises(ValidationError):
        MaskSpec("disco-random")
    with pytest.raises(ValidationError):
        build_mask(MaskSpec("from-order", ranks=[1, 2]), 3)


def test_visibility_mask_validation():
    with pytest.raises(ValidationError):
        VisibilityMask(np.eye(2, dtype=bool))
    with pytest.raises(DimensionError):
        VisibilityMask(np.zeros((2, 3), dtype=bool))
    mask = cloze_mask(3)
    with pytest.raises(ValueError):
        mask.observed[0, 1] = False
    assert len(mask.digest()) == 12
    assert mask.digest() != empty_mask(3).digest()
