"""Bag-level MIL loss, extreme-instance contrastive loss and their combination.

Scores arrive as ``(B, T, 1)`` (or ``(B, T)``) arrays together with a
``lengths`` vector; positions at or beyond ``lengths[b]`` are padding and are
never read. Each loss has a ``*_grad`` companion returning the cotangent with
respect to its array input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ConfigError

PIDE_EPS = 1e-8
BCE_CLIP = 1e-7
DEFAULT_TAU_C = 0.1
DEFAULT_LAMBDA = 5.0


def _as_scores(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S)
    return S[..., 0] if S.ndim == 3 else S


def _check_batch(S: np.ndarray, labels, lengths) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.asarray(lengths, dtype=np.int64)
    if S.shape[0] == 0 or lengths.size == 0:
        raise ValueError("empty batch")
    if lengths.shape[0] != S.shape[0] or (labels is not None and len(labels) != S.shape[0]):
        raise ValueError(f"batch of {S.shape[0]} bags but {lengths.shape[0]} lengths")
    if np.any(lengths < 1) or np.any(lengths > S.shape[1]):
        raise ValueError(f"bag lengths {lengths.tolist()} outside [1, {S.shape[1]}]")
    labels = None if labels is None else np.asarray(labels, dtype=np.float64)
    return labels, lengths


def _topk_indices(s: np.ndarray, k: int) -> np.ndarray:
    # stable sort on -s: ties resolved towards the lowest index
    return np.argsort(-s, kind="stable")[:k]


def mil_loss(S, bag_labels, lengths, topk: int = 1) -> float:
    """Binary cross-entropy between each bag's max score and its label, batch mean.

    ``topk > 1`` swaps the max for the mean of the ``topk`` highest scores.
    """
    S = _as_scores(S)
    labels, lengths = _check_batch(S, bag_labels, lengths)
    total = 0.0
    for b, n in enumerate(lengths):
        s = S[b, :n].astype(np.float64)
        p = s[_topk_indices(s, min(topk, n))].mean()
        p = min(max(p, BCE_CLIP), 1.0 - BCE_CLIP)
        y = labels[b]
        total -= y * np.log(p) + (1.0 - y) * np.log1p(-p)
    return float(total / len(lengths))


def mil_loss_grad(S, bag_labels, lengths, topk: int = 1) -> np.ndarray:
    """dL_mil/dS; non-zero only at each bag's selected top instance(s)."""
    S_in = np.asarray(S)
    S2 = _as_scores(S_in)
    labels, lengths = _check_batch(S2, bag_labels, lengths)
    grad = np.zeros(S2.shape, dtype=np.float64)
    B = len(lengths)
    for b, n in enumerate(lengths):
        s = S2[b, :n].astype(np.float64)
        k = min(topk, n)
        idx = _topk_indices(s, k)
        p = min(max(s[idx].mean(), BCE_CLIP), 1.0 - BCE_CLIP)
        y = labels[b]
        dp = (p - y) / (p * (1.0 - p))
        grad[b, idx] = dp / (k * B)
    return grad.reshape(S_in.shape).astype(S_in.dtype)


@dataclass
class ExtremeSelection:
    """Per-bag argmax/argmin picks, as parallel index arrays."""

    bags: np.ndarray        # (n,) bag index b
    instances: np.ndarray   # (n,) instance index i
    labels: np.ndarray      # (n,) pseudo-label, +1 or -1

    def __len__(self) -> int:
        return len(self.bags)

    def entries(self) -> list[tuple[int, int, int]]:
        return list(zip(self.bags.tolist(), self.instances.tolist(), self.labels.tolist()))


def select_extremes(S, lengths, m: int = 1) -> ExtremeSelection:
    """Pick each bag's highest (+1) and lowest (-1) scoring instance.

    Bags with a single instance, or whose argmax and argmin coincide, are
    skipped. Ties go to the lowest index.
    """
    if m != 1:
        raise ConfigError(f"only m=1 extreme instance per side is supported, got m={m}")
    S = _as_scores(S)
    lengths = np.asarray(lengths, dtype=np.int64)
    bags, inst, labels = [], [], []
    for b, n in enumerate(lengths):
        if n <= 1:
            continue
        s = S[b, :n]
        hi, lo = int(np.argmax(s)), int(np.argmin(s))
        if hi == lo:
            continue
        bags += [b, b]
        inst += [hi, lo]
        labels += [1, -1]
    return ExtremeSelection(np.array(bags, dtype=np.int64), np.array(inst, dtype=np.int64),
                            np.array(labels, dtype=np.int64))


def _supcon_terms(Z: np.ndarray, y: np.ndarray, tau_c: float):
    """Shared forward pieces of the contrastive loss on gathered features."""
    n = len(y)
    Zh = dc.l2_normalize(Z)
    logits = (Zh @ Zh.T) / tau_c
    off_diag = ~np.eye(n, dtype=bool)
    masked = np.where(off_diag, logits, -np.inf)
    row_max = np.max(masked, axis=1, keepdims=True)
    e = np.where(off_diag, np.exp(masked - row_max), 0.0)
    denom = e.sum(axis=1, keepdims=True)
    log_prob = np.where(off_diag, logits - row_max - np.log(denom), 0.0)
    positives = (y[:, None] == y[None, :]) & off_diag
    n_pos = positives.sum(axis=1)
    valid = n_pos > 0
    return Zh, e / denom, log_prob, positives, n_pos, valid


def pide_loss(F_prime, selection: ExtremeSelection, tau_c: float = DEFAULT_TAU_C,
              eps: float = PIDE_EPS) -> float:
    """Supervised contrastive loss over the selected extreme instances.

    Features are contrasted directly (no projection head) after L2
    normalisation; anchors without a same-label partner are left out of the
    average. Returns 0 when fewer than two instances are selected.
    """
    if not tau_c > 0:
        raise ConfigError(f"tau_c must be > 0, got {tau_c}")
    if len(selection) < 2:
        return 0.0
    Z = np.asarray(F_prime)[selection.bags, selection.instances]
    _, _, log_prob, positives, n_pos, valid = _supcon_terms(Z, selection.labels, tau_c)
    per_anchor = -np.where(positives, log_prob, 0.0).sum(axis=1) / np.maximum(n_pos, 1)
    return float(per_anchor[valid].sum() / (valid.sum() + eps))


def pide_loss_grad(F_prime, selection: ExtremeSelection, tau_c: float = DEFAULT_TAU_C,
                   eps: float = PIDE_EPS) -> np.ndarray:
    """dL_pide/dF'; non-zero only at the selected positions."""
    F_prime = np.asarray(F_prime)
    grad = np.zeros_like(F_prime)
    if len(selection) < 2:
        return grad
    Z = F_prime[selection.bags, selection.instances]
    Zh, probs, _, positives, n_pos, valid = _supcon_terms(Z, selection.labels, tau_c)
    weight = valid / (valid.sum() + eps)
    # d/dlogits of the averaged loss; row i is anchor i
    G = weight[:, None] * (probs - positives / np.maximum(n_pos, 1)[:, None])
    dZh = (G + G.T) @ Zh / tau_c
    dZ = dc.l2_normalize_backward(Z, dZh)
    np.add.at(grad, (selection.bags, selection.instances), dZ)
    return grad


@dataclass
class LossBreakdown:
    l_mil: float
    l_pide: float
    l_total: float
    lam: float


def total_loss(l_mil: float, l_pide: float, lam: float = DEFAULT_LAMBDA) -> float:
    return l_mil + lam * l_pide


def loss_breakdown(l_mil: float, l_pide: float, lam: float = DEFAULT_LAMBDA) -> LossBreakdown:
    return LossBreakdown(l_mil, l_pide, total_loss(l_mil, l_pide, lam), lam)
