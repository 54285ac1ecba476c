"""Small differentiable numeric substrate.

Arrays are plain numpy arrays (float32 for training, float64 for gradient
verification). Every differentiable op comes as a ``forward`` function plus a
``*_backward`` companion that maps the output cotangent to input cotangents.
The model graph is static, so the model chains these by hand instead of
recording a tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError, NonFiniteError, ShapeMismatchError

NORM_EPS = 1e-12


def ensure_finite(x: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NonFiniteError(f"{what}: {bad} non-finite value(s)")
    return x


@dataclass
class GradSlot:
    """A trainable array together with its accumulated gradient."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    requires_grad: bool = True

    def __post_init__(self):
        self.value = np.asarray(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ShapeMismatchError(
                f"grad shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def accumulate(self, g: np.ndarray) -> None:
        if self.requires_grad:
            self.grad += g.reshape(self.value.shape).astype(self.value.dtype, copy=False)

    def astype(self, dtype) -> "GradSlot":
        return GradSlot(self.value.astype(dtype), self.grad.astype(dtype), self.requires_grad)


# --------------------------------------------------------------------------
# ops


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return ensure_finite(a @ b, "matmul")


def matmul_backward(a: np.ndarray, b: np.ndarray, gout: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return gout @ b.T, a.T @ gout


def l2_normalize(v: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Scale vectors along the last axis to unit length; ``eps`` guards zero."""
    norm = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    return v / np.maximum(norm, eps)


def l2_normalize_backward(v: np.ndarray, gout: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    norm = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    denom = np.maximum(norm, eps)
    y = v / denom
    radial = np.sum(y * gout, axis=-1, keepdims=True)
    # below eps the op is a plain scaling by 1/eps
    return np.where(norm > eps, (gout - y * radial) / denom, gout / denom)


def softmax_temp(logits: np.ndarray, tau: float) -> np.ndarray:
    """Temperature softmax over the last axis, stabilised by max-subtraction."""
    if not tau > 0:
        raise ConfigError(f"softmax temperature must be > 0, got {tau}")
    z = logits / tau
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_temp_backward(out: np.ndarray, gout: np.ndarray, tau: float) -> np.ndarray:
    inner = np.sum(out * gout, axis=-1, keepdims=True)
    return out * (gout - inner) / tau


def sigmoid(x):
    """Logistic function, evaluated branch-wise so neither tail overflows."""
    x = np.asarray(x)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x, dtype=np.result_type(x.dtype, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out[0] if scalar else out


def sigmoid_backward(x: np.ndarray, gout: np.ndarray) -> np.ndarray:
    # s(x)*s(-x) keeps the derivative representable when s(x) rounds to 1
    return gout * sigmoid(x) * sigmoid(-x)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, gout: np.ndarray) -> np.ndarray:
    return np.where(x > 0, gout, 0)


# --------------------------------------------------------------------------
# finite-difference verification


@dataclass
class CoordError:
    param: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    tol: float
    n_checked: int
    max_rel_err: float
    worst: list[CoordError]
    failures: list[CoordError]

    @property
    def passed(self) -> bool:
        return not self.failures

    def __str__(self) -> str:
        head = (f"gradient check {'passed' if self.passed else 'FAILED'}: "
                f"{self.n_checked} coords, max rel err {self.max_rel_err:.3e} (tol {self.tol:.1e})")
        lines = [head]
        for c in (self.failures or self.worst)[:10]:
            lines.append(f"  {c.param}{list(c.index)}: analytic={c.analytic:.10g} "
                         f"numeric={c.numeric:.10g} rel={c.rel_err:.3e}")
        return "\n".join(lines)


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(
    f: Callable[[], float],
    params: Mapping[str, GradSlot],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-8,
    n_worst: int = 5,
) -> GradCheckReport:
    """Compare propagated gradients against central differences.

    ``f`` evaluates the scalar objective from the current slot values and
    leaves the propagated gradient in each slot's ``grad``. It is called once
    for the analytic gradients and twice per checked coordinate. When
    ``max_coords`` is set and smaller than the parameter count, a seeded random
    subsample of coordinates is checked instead of all of them.
    """
    for slot in params.values():
        slot.zero_grad()
    f()
    analytic = {name: slot.grad.copy() for name, slot in params.items()}

    coords = [(name, idx) for name, slot in params.items()
              for idx in np.ndindex(*slot.shape)]
    if max_coords is not None and max_coords < len(coords):
        pick = np.random.default_rng(seed).choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in np.sort(pick)]

    errors = []
    for name, idx in coords:
        value = params[name].value
        orig = value[idx]
        value[idx] = orig + h
        f_plus = f()
        value[idx] = orig - h
        f_minus = f()
        value[idx] = orig
        numeric = (f_plus - f_minus) / (2 * h)
        a = float(analytic[name][idx])
        errors.append(CoordError(name, idx, a, numeric, relative_error(a, numeric, floor)))

    # leave the slots as we found them (analytic gradient at the base point)
    for name, slot in params.items():
        slot.grad = analytic[name]

    ranked = sorted(errors, key=lambda c: c.rel_err, reverse=True)
    return GradCheckReport(
        tol=tol,
        n_checked=len(errors),
        max_rel_err=ranked[0].rel_err if ranked else 0.0,
        worst=ranked[:n_worst],
        failures=[c for c in ranked if c.rel_err > tol],
    )
