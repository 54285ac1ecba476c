import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protovad.errors import ConfigError
from protovad.losses import (ExtremeSelection, loss_breakdown, mil_loss, mil_loss_grad, pide_loss,
                                pide_loss_grad, select_extremes, total_loss)

from oracles import central_difference, extremes_direct, supcon_direct

PIDE_FOUR_VECTORS = 0.07776929968965185  # supcon_direct on the vectors below, tau=0.1


# -- MIL --------------------------------------------------------------------

def test_mil_perfect_positive_is_near_zero():
    S = np.array([[[0.2], [1.0 - 1e-9], [0.4]]])
    assert mil_loss(S, [1], [3]) < 1e-6


def test_mil_uncertain_negative():
    S = np.full((1, 4, 1), 0.5)
    assert abs(mil_loss(S, [0], [4]) - 0.693147) < 1e-5


def test_mil_averages_bags():
    S = np.array([[0.5, 0.5], [0.9, 0.1]])
    expected = (-math.log(0.5) - math.log(0.9)) / 2
    assert abs(mil_loss(S, [0, 1], [2, 2]) - expected) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_mil_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    S = rng.uniform(0.01, 0.99, size=(3, 6))
    perm = rng.permutation(6)
    assert mil_loss(S, [0, 1, 1], [6, 6, 6]) == pytest.approx(mil_loss(S[:, perm], [0, 1, 1], [6, 6, 6]))


def test_mil_gradient_only_at_argmax(rng):
    S = rng.uniform(0.05, 0.95, size=(3, 5, 1))
    lengths = [5, 3, 4]
    g = mil_loss_grad(S, [1, 0, 1], lengths)
    for b, n in enumerate(lengths):
        hot = np.flatnonzero(g[b, :, 0])
        assert hot.tolist() == [int(np.argmax(S[b, :n, 0]))]
    f = lambda x: mil_loss(x, [1, 0, 1], lengths)
    np.testing.assert_allclose(g, central_difference(f, S, 1e-7), rtol=1e-5, atol=1e-9)


def test_mil_topk_variant_gradient(rng):
    S = rng.uniform(0.05, 0.95, size=(2, 6))
    f = lambda x: mil_loss(x, [1, 0], [6, 4], topk=3)
    g = mil_loss_grad(S, [1, 0], [6, 4], topk=3)
    assert (g != 0).sum(axis=1).tolist() == [3, 3]
    np.testing.assert_allclose(g, central_difference(f, S, 1e-7), rtol=1e-5, atol=1e-9)


def test_mil_ignores_padding():
    S = np.array([[0.3, 0.2, 0.99, 0.99]])
    assert mil_loss(S, [0], [2]) == pytest.approx(-math.log(0.7))


def test_mil_empty_batch_rejected():
    with pytest.raises(ValueError):
        mil_loss(np.zeros((0, 3)), [], [])


# -- extreme selection --------------------------------------------------------

def test_select_unique_extremes():
    sel = select_extremes(np.array([[[0.1], [0.9], [0.4]]]), [3])
    assert sel.entries() == [(0, 1, 1), (0, 0, -1)]


def test_select_skips_single_instance_bag():
    assert len(select_extremes(np.array([[0.7]]), [1])) == 0


def test_select_skips_constant_bag():
    assert len(select_extremes(np.full((1, 5), 0.5), [5])) == 0


def test_select_respects_lengths():
    S = np.array([[0.2, 0.6, 0.4, 0.99, 0.0]])
    assert select_extremes(S, [3]).entries() == [(0, 1, 1), (0, 0, -1)]


def test_select_rejects_m_above_one():
    with pytest.raises(ConfigError):
        select_extremes(np.zeros((1, 3)), [3], m=2)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_select_matches_scan_and_is_monotone_invariant(seed):
    rng = np.random.default_rng(seed)
    B, T = rng.integers(1, 6), rng.integers(1, 9)
    # coarse values force ties
    S = rng.integers(0, 4, size=(B, T)) / 4.0
    lengths = rng.integers(1, T + 1, size=B)
    sel = select_extremes(S, lengths)
    assert sel.entries() == extremes_direct(S, lengths)
    assert select_extremes(np.exp(3 * S) - 7, lengths).entries() == sel.entries()
    for b, i, y in sel.entries():
        if y == 1:
            lo = [e for e in sel.entries() if e[0] == b and e[2] == -1][0]
            assert S[b, i] >= S[b, lo[1]]


# -- PIDE ---------------------------------------------------------------------

def _sel(entries):
    b, i, y = zip(*entries)
    return ExtremeSelection(np.array(b), np.array(i), np.array(y))


def test_pide_zero_when_fewer_than_two_selected():
    F = np.ones((1, 1, 3))
    empty = select_extremes(np.array([[0.5]]), [1])
    assert pide_loss(F, empty) == 0.0
    assert not pide_loss_grad(F, empty).any()


def test_pide_single_bag_has_no_valid_anchor():
    F = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    sel = select_extremes(np.array([[0.9, 0.1]]), [2])
    assert len(sel) == 2
    assert pide_loss(F, sel) == 0.0


def test_pide_four_vectors_match_oracle():
    F = np.array([[[1, 0, 0], [0, 0, 1]], [[0.6, 0.8, 0], [0, 0.6, 0.8]]], dtype=np.float64)
    sel = _sel([(0, 0, 1), (1, 0, 1), (0, 1, -1), (1, 1, -1)])
    assert abs(pide_loss(F, sel, 0.1) - PIDE_FOUR_VECTORS) < 1e-12
    Z = [F[0, 0], F[1, 0], F[0, 1], F[1, 1]]
    assert abs(supcon_direct(Z, [1, 1, -1, -1], 0.1) - PIDE_FOUR_VECTORS) < 1e-15


def test_pide_is_scale_invariant_in_features(rng):
    F = rng.normal(size=(3, 4, 5))
    sel = select_extremes(rng.uniform(size=(3, 4)), [4, 4, 4])
    assert pide_loss(F, sel) == pytest.approx(pide_loss(7.5 * F, sel), rel=1e-12)


def test_pide_decreases_when_classes_separate():
    def batch(angle):
        # positives at +-angle around e1, negatives around -e1
        a, b = np.array([np.cos(angle), np.sin(angle)]), np.array([np.cos(angle), -np.sin(angle)])
        return np.array([[a, -a], [b, -b]])

    sel = _sel([(0, 0, 1), (0, 1, -1), (1, 0, 1), (1, 1, -1)])
    values = [pide_loss(batch(t), sel) for t in (1.2, 0.8, 0.4, 0.0)]
    assert all(x > y for x, y in zip(values, values[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_pide_gradient_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(3, 5, 4))
    sel = select_extremes(rng.uniform(size=(3, 5)), [5, 3, 4])
    g = pide_loss_grad(F, sel, 0.1)
    fd = central_difference(lambda x: pide_loss(x, sel, 0.1), F, 1e-6)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)
    mask = np.zeros(F.shape[:2], bool)
    mask[sel.bags, sel.instances] = True
    assert not g[~mask].any()


# -- total --------------------------------------------------------------------

def test_total_loss_examples():
    assert total_loss(0.5, 0.2, 5.0) == pytest.approx(1.5)
    assert total_loss(0.5, 0.2, 0.0) == 0.5
    assert total_loss(0.5, 0.0, 5.0) == 0.5
    bd = loss_breakdown(0.31, 0.07, 5.0)
    assert abs(bd.l_total - (bd.l_mil + bd.lam * bd.l_pide)) < 1e-6
