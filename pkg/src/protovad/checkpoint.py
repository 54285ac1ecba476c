"""Model checkpoints.

Layout (little-endian)::

    b"PDVH" | u16 version=1 | u32 D | u32 K | u32 H
    | P_K | P_V | W_c | b_c | W_1 | b_1 | W_2 | b_2      (float32, row-major)
    | [u32 epoch | u32 adam_t | Adam m blocks | Adam v blocks]   (optional)
    | u32 CRC32 of everything before it

The optional optimizer section uses the parameter block order for both
moment sets. Hyperparameters (temperatures, learning rate, ablation) live in
the training config, not here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._framing import Reader, atomic_write, f32_bytes, seal, unseal
from .errors import FormatError, ShapeMismatchError
from .model import DEFAULT_TAU_P, ModelParams
from .optim import AdamState

CKPT_MAGIC = b"PDVH"
CKPT_VERSION = 1
_DIMS = struct.Struct("<III")


def _block_shapes(D: int, K: int, H: int) -> dict[str, tuple[int, ...]]:
    return dict(zip(ModelParams.SLOT_NAMES, [(K, D), (K, D), (D, D), (D,), (D, H), (H,), (H, 1), (1,)]))


def _n_floats(D: int, K: int, H: int) -> int:
    return sum(int(np.prod(s)) for s in _block_shapes(D, K, H).values())


@dataclass
class Checkpoint:
    params: ModelParams
    epoch: int = 0
    optim: AdamState | None = None


def encode_checkpoint(params: ModelParams, optim: AdamState | None = None, epoch: int = 0) -> bytes:
    parts = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION), _DIMS.pack(params.D, params.K, params.H)]
    names = ModelParams.SLOT_NAMES
    slots = params.slots()
    parts += [f32_bytes(slots[n].value) for n in names]
    if optim is not None:
        parts.append(struct.pack("<II", epoch, optim.t))
        parts += [f32_bytes(optim.m[n]) for n in names]
        parts += [f32_bytes(optim.v[n]) for n in names]
    return seal(b"".join(parts))


def _declared_size(payload: memoryview):
    if len(payload) < _DIMS.size:
        return None
    return 6 + _DIMS.size + 4 * _n_floats(*_DIMS.unpack_from(payload)) + 4


def decode_checkpoint(blob: bytes, tau_p: float = DEFAULT_TAU_P, lr: float | None = None,
                      what: str = "checkpoint") -> Checkpoint:
    r = Reader(unseal(blob, CKPT_MAGIC, CKPT_VERSION, what, _declared_size), what)
    D, K, H = r.unpack(_DIMS.format)
    shapes = _block_shapes(D, K, H)
    params = ModelParams.from_arrays({n: r.floats(s) for n, s in shapes.items()}, tau_p)
    if r.remaining() == 0:
        return Checkpoint(params)
    if r.remaining() != 8 + 8 * _n_floats(D, K, H):
        raise FormatError(f"{what}: {r.remaining()} trailing bytes do not form an optimizer section")
    epoch, t = r.unpack("<II")
    m = {n: r.floats(s) for n, s in shapes.items()}
    v = {n: r.floats(s) for n, s in shapes.items()}
    state = AdamState(m, v, t) if lr is None else AdamState(m, v, t, lr=lr)
    return Checkpoint(params, epoch, state)


def save_checkpoint(path, params: ModelParams, optim: AdamState | None = None, epoch: int = 0) -> None:
    atomic_write(path, encode_checkpoint(params, optim, epoch))


def load_checkpoint(path, tau_p: float = DEFAULT_TAU_P, expect_dims: tuple[int, int, int] | None = None,
                    lr: float | None = None) -> Checkpoint:
    path = Path(path)
    ckpt = decode_checkpoint(path.read_bytes(), tau_p, lr, what=f"checkpoint {path.name}")
    p = ckpt.params
    if expect_dims is not None and (p.D, p.K, p.H) != tuple(expect_dims):
        raise ShapeMismatchError(
            f"checkpoint {path.name} has (D, K, H) = {(p.D, p.K, p.H)}, config expects {tuple(expect_dims)}")
    return ckpt
