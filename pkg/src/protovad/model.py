"""Prototype Interaction Layer plus the instance-scoring classifier.

Linear layers use the row-vector convention ``y = x @ W + b`` with ``W``
stored as ``(fan_in, fan_out)``. Batches are ``(B, T, D)`` arrays; every
op here is per-instance, so padded positions never influence real ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import diffcore as dc
from .diffcore import GradSlot
from .errors import ConfigError, ShapeMismatchError

DEFAULT_D = 512
DEFAULT_K = 5
DEFAULT_H = 256
DEFAULT_TAU_P = 0.1


@dataclass
class PrototypeBank:
    keys: GradSlot      # (K, D)
    values: GradSlot    # (K, D)
    tau_p: float = DEFAULT_TAU_P

    @property
    def K(self) -> int:
        return self.keys.shape[0]


@dataclass
class FusionTransform:
    weight: GradSlot    # (D, D)
    bias: GradSlot      # (D,)


@dataclass
class ClassifierHead:
    w1: GradSlot        # (D, H)
    b1: GradSlot        # (H,)
    w2: GradSlot        # (H, 1)
    b2: GradSlot        # (1,)

    @property
    def H(self) -> int:
        return self.w1.shape[1]


@dataclass
class ModelParams:
    bank: PrototypeBank
    fusion: FusionTransform
    classifier: ClassifierHead

    # checkpoint block order
    SLOT_NAMES = ("proto_keys", "proto_values", "fusion_w", "fusion_b",
                  "cls_w1", "cls_b1", "cls_w2", "cls_b2")

    @property
    def D(self) -> int:
        return self.bank.keys.shape[1]

    @property
    def K(self) -> int:
        return self.bank.K

    @property
    def H(self) -> int:
        return self.classifier.H

    @property
    def dtype(self) -> np.dtype:
        return self.bank.keys.value.dtype

    def slots(self) -> dict[str, GradSlot]:
        c = self.classifier
        return dict(zip(self.SLOT_NAMES, (
            self.bank.keys, self.bank.values, self.fusion.weight, self.fusion.bias,
            c.w1, c.b1, c.w2, c.b2)))

    def __iter__(self) -> Iterator[GradSlot]:
        return iter(self.slots().values())

    def n_params(self) -> int:
        return sum(s.value.size for s in self)

    def zero_grad(self) -> None:
        for s in self:
            s.zero_grad()

    def astype(self, dtype) -> "ModelParams":
        return ModelParams.from_arrays(
            {k: v.value.astype(dtype) for k, v in self.slots().items()}, self.bank.tau_p)

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], tau_p: float = DEFAULT_TAU_P) -> "ModelParams":
        a = {k: GradSlot(np.array(arrays[k])) for k in cls.SLOT_NAMES}
        params = cls(
            PrototypeBank(a["proto_keys"], a["proto_values"], tau_p),
            FusionTransform(a["fusion_w"], a["fusion_b"]),
            ClassifierHead(a["cls_w1"], a["cls_b1"], a["cls_w2"], a["cls_b2"]),
        )
        params.validate()
        return params

    def validate(self) -> None:
        D, K, H = self.D, self.K, self.H
        expected = {
            "proto_keys": (K, D), "proto_values": (K, D),
            "fusion_w": (D, D), "fusion_b": (D,),
            "cls_w1": (D, H), "cls_b1": (H,), "cls_w2": (H, 1), "cls_b2": (1,),
        }
        for name, slot in self.slots().items():
            if slot.shape != expected[name]:
                raise ShapeMismatchError(f"{name}: shape {slot.shape}, expected {expected[name]}")
        if not self.bank.tau_p > 0:
            raise ConfigError(f"tau_p must be > 0, got {self.bank.tau_p}")


def param_count(D: int, K: int, H: int) -> int:
    return 2 * K * D + D * D + D + D * H + H + H + 1


def init_params(D: int = DEFAULT_D, K: int = DEFAULT_K, H: int = DEFAULT_H, seed: int = 0,
                tau_p: float = DEFAULT_TAU_P, dtype=np.float32) -> ModelParams:
    """Draw a fresh parameter set.

    Prototypes come from N(0, 1/D); every linear layer (weights and bias) from
    U(-1/sqrt(fan_in), 1/sqrt(fan_in)). Draws happen in float64 and are then
    cast, so a given seed yields the same values in both precisions.
    """
    if min(D, K, H) < 1:
        raise ConfigError(f"D, K, H must be >= 1, got {(D, K, H)}")
    rng = np.random.default_rng(seed)
    std = 1.0 / np.sqrt(D)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    arrays = {
        "proto_keys": rng.normal(0.0, std, size=(K, D)),
        "proto_values": rng.normal(0.0, std, size=(K, D)),
        "fusion_w": uniform((D, D), D),
        "fusion_b": uniform((D,), D),
        "cls_w1": uniform((D, H), D),
        "cls_b1": uniform((H,), D),
        "cls_w2": uniform((H, 1), H),
        "cls_b2": uniform((1,), H),
    }
    return ModelParams.from_arrays({k: v.astype(dtype) for k, v in arrays.items()}, tau_p)


# --------------------------------------------------------------------------
# forward / backward


@dataclass
class PILCache:
    F: np.ndarray          # (N, D) flattened input
    keys_hat: np.ndarray   # (K, D)
    f_hat: np.ndarray      # (N, D)
    attn: np.ndarray       # (N, K)
    context: np.ndarray    # (N, D)


def _check_features(F: np.ndarray, D: int) -> None:
    if F.ndim != 3 or F.shape[2] != D:
        raise ShapeMismatchError(f"features of shape {F.shape} do not match D={D} (expected B x T x D)")


def pil_forward(F: np.ndarray, bank: PrototypeBank, fusion: FusionTransform):
    """Inject prototype context into each instance feature.

    Returns ``(F_prime, attention, cache)`` where ``attention`` is
    ``(B, T, K)`` and each of its rows sums to one.
    """
    D = bank.keys.shape[1]
    _check_features(F, D)
    if fusion.weight.shape != (D, D):
        raise ShapeMismatchError(f"fusion weight {fusion.weight.shape} does not match D={D}")
    B, T, _ = F.shape
    x = F.reshape(B * T, D)
    keys_hat = dc.l2_normalize(bank.keys.value)
    f_hat = dc.l2_normalize(x)
    sim = dc.matmul(f_hat, keys_hat.T)
    attn = dc.softmax_temp(sim, bank.tau_p)
    context = dc.matmul(attn, bank.values.value)
    out = x + dc.matmul(context, fusion.weight.value) + fusion.bias.value
    dc.ensure_finite(out, "PIL output")
    cache = PILCache(x, keys_hat, f_hat, attn, context)
    return out.reshape(B, T, D), attn.reshape(B, T, -1), cache


def pil_backward(cache: PILCache, dF_prime: np.ndarray, bank: PrototypeBank,
                 fusion: FusionTransform) -> None:
    """Accumulate prototype and fusion gradients from dL/dF'."""
    g = dF_prime.reshape(cache.F.shape)
    d_ctx, dW = dc.matmul_backward(cache.context, fusion.weight.value, g)
    fusion.weight.accumulate(dW)
    fusion.bias.accumulate(g.sum(axis=0))
    d_attn, dV = dc.matmul_backward(cache.attn, bank.values.value, d_ctx)
    bank.values.accumulate(dV)
    d_sim = dc.softmax_temp_backward(cache.attn, d_attn, bank.tau_p)
    d_keys_hat = d_sim.T @ cache.f_hat
    bank.keys.accumulate(dc.l2_normalize_backward(bank.keys.value, d_keys_hat))


@dataclass
class HeadCache:
    x: np.ndarray       # (N, D)
    pre: np.ndarray     # (N, H)
    hidden: np.ndarray  # (N, H)
    logits: np.ndarray  # (N, 1)


def score_instances(F_prime: np.ndarray, head: ClassifierHead):
    """Per-instance anomaly scores in (0, 1); returns ``(S, cache)`` with S ``(B, T, 1)``."""
    D = head.w1.shape[0]
    _check_features(F_prime, D)
    B, T, _ = F_prime.shape
    x = F_prime.reshape(B * T, D)
    pre = dc.matmul(x, head.w1.value) + head.b1.value
    hidden = dc.relu(pre)
    logits = dc.matmul(hidden, head.w2.value) + head.b2.value
    S = dc.sigmoid(logits)
    return S.reshape(B, T, 1), HeadCache(x, pre, hidden, logits)


def head_backward(cache: HeadCache, dS: np.ndarray, head: ClassifierHead) -> np.ndarray:
    """Accumulate classifier gradients; returns dL/dF' of shape ``(N, D)``."""
    dz = dc.sigmoid_backward(cache.logits, dS.reshape(cache.logits.shape))
    d_hidden, dW2 = dc.matmul_backward(cache.hidden, head.w2.value, dz)
    head.w2.accumulate(dW2)
    head.b2.accumulate(dz.sum(axis=0))
    d_pre = dc.relu_backward(cache.pre, d_hidden)
    dx, dW1 = dc.matmul_backward(cache.x, head.w1.value, d_pre)
    head.w1.accumulate(dW1)
    head.b1.accumulate(d_pre.sum(axis=0))
    return dx


@dataclass
class ForwardResult:
    features: np.ndarray            # F' (B, T, D); equals F when PIL is off
    scores: np.ndarray              # S (B, T, 1)
    attention: np.ndarray | None    # (B, T, K) or None when PIL is off
    pil_cache: PILCache | None
    head_cache: HeadCache


def forward(params: ModelParams, F: np.ndarray, use_pil: bool = True) -> ForwardResult:
    F = np.asarray(F, dtype=params.dtype)
    if use_pil:
        F_prime, attn, pil_cache = pil_forward(F, params.bank, params.fusion)
    else:
        _check_features(F, params.D)
        F_prime, attn, pil_cache = F, None, None
    S, head_cache = score_instances(F_prime, params.classifier)
    return ForwardResult(F_prime, S, attn, pil_cache, head_cache)


def backward(params: ModelParams, result: ForwardResult, dS: np.ndarray,
             dF_prime: np.ndarray | None = None) -> None:
    """Propagate loss cotangents w.r.t. scores and (optionally) F' into ``params``."""
    dx = head_backward(result.head_cache, dS, params.classifier)
    if result.pil_cache is None:
        return
    if dF_prime is not None:
        dx = dx + dF_prime.reshape(dx.shape)
    pil_backward(result.pil_cache, dx, params.bank, params.fusion)
