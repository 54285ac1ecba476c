"""Training loop, batch objective, checkpointing and ablation switches.

Ablations:

========  ===========  ============
mode      PIL          PIDE term
========  ===========  ============
baseline  off (F'=F)   off
pil       on           off
pide      off (F'=F)   on
full      on           on
========  ===========  ============
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Batch, FeatureBag, assemble_batch, load_corpus
from .errors import ConfigError, NonFiniteError, ShapeMismatchError
from .evalkit import frame_auc
from .losses import (LossBreakdown, loss_breakdown, mil_loss, mil_loss_grad, pide_loss,
                     pide_loss_grad, select_extremes)
from .model import ModelParams, backward, forward, init_params
from .optim import Adam, AdamState, clip_grad_norm

log = logging.getLogger(__name__)

ABLATIONS = ("baseline", "pil", "pide", "full")
CHECKPOINT_NAME = "checkpoint.pdvh"
LOG_NAME = "train_log.jsonl"
CONFIG_NAME = "config.txt"


@dataclass
class TrainConfig:
    d: int = 0                      # 0: take the feature dimension from the corpus
    k: int = 5
    h: int = 256
    tau_p: float = 0.1
    tau_c: float = 0.1
    lam: float = field(default=5.0, metadata={"key": "lambda"})
    lr: float = 0.005
    batch_size: int = 60
    epochs: int = 50
    seed: int = 0
    ablation: str = "full"
    corpus_dir: str = ""
    out_dir: str = ""
    clip_grad_norm: float = 0.0
    checkpoint_every: int = 0       # 0: only at the end
    mil_topk: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.d < 0 or self.k < 1 or self.h < 1:
            raise ConfigError(f"need d >= 0, k >= 1, h >= 1; got d={self.d}, k={self.k}, h={self.h}")
        if not (self.tau_p > 0 and self.tau_c > 0):
            raise ConfigError("temperatures must be > 0")
        if not (self.lr > 0 and self.lam >= 0 and self.clip_grad_norm >= 0):
            raise ConfigError("need lr > 0, lambda >= 0, clip_grad_norm >= 0")
        if self.batch_size < 1 or self.epochs < 0 or self.checkpoint_every < 0 or self.mil_topk < 1:
            raise ConfigError("need batch_size >= 1, epochs >= 0, checkpoint_every >= 0, mil_topk >= 1")

    @property
    def use_pil(self) -> bool:
        return self.ablation in ("pil", "full")

    @property
    def use_pide(self) -> bool:
        return self.ablation in ("pide", "full")

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        return cfgmod.load(cls, path, **overrides)

    def replace(self, **overrides) -> "TrainConfig":
        return cfgmod.replace(self, **overrides)

    def to_text(self) -> str:
        return cfgmod.dump(self)


def batch_objective(params: ModelParams, batch: Batch, cfg: TrainConfig,
                    compute_grad: bool = True) -> LossBreakdown:
    """Forward the batch, evaluate L_mil + lambda * L_pide and (optionally) backpropagate.

    Gradients are accumulated into the parameter slots; callers zero them.
    """
    res = forward(params, batch.features, cfg.use_pil)
    l_mil = mil_loss(res.scores, batch.labels, batch.lengths, cfg.mil_topk)
    lam = cfg.lam if cfg.use_pide else 0.0
    selection = None
    l_pide = 0.0
    if cfg.use_pide:
        selection = select_extremes(res.scores, batch.lengths)
        l_pide = pide_loss(res.features, selection, cfg.tau_c)
    out = loss_breakdown(l_mil, l_pide, lam)
    if compute_grad:
        dS = mil_loss_grad(res.scores, batch.labels, batch.lengths, cfg.mil_topk)
        dF = None
        if selection is not None and lam != 0 and res.pil_cache is not None:
            dF = lam * pide_loss_grad(res.features, selection, cfg.tau_c)
        backward(params, res, dS, dF)
    return out


@dataclass
class TrainResult:
    params: ModelParams
    optim: AdamState
    epoch: int
    records: list[dict]
    checkpoint: Path | None
    train_auc: float | None
    test_auc: float | None


def _split(splits: dict[str, list[FeatureBag]]):
    train = splits.get("train") or splits.get("all")
    if not train:
        raise ConfigError(f"corpus has no training bags (splits: {sorted(splits)})")
    return train, splits.get("test")


def _auc_or_none(params, bags, use_pil):
    if not bags or any(b.frame_labels is None for b in bags):
        return None
    try:
        return frame_auc(params, bags, use_pil)
    except ValueError:
        return None


def _dims(cfg: TrainConfig, bags: list[FeatureBag]) -> int:
    D = bags[0].D
    if any(b.D != D for b in bags):
        raise ShapeMismatchError("corpus mixes feature dimensions")
    if cfg.d and cfg.d != D:
        raise ShapeMismatchError(f"config d={cfg.d} but corpus features have D={D}")
    return D


def train(cfg: TrainConfig, corpus: dict[str, list[FeatureBag]] | None = None,
          resume_from=None, write_files: bool = True) -> TrainResult:
    """Run (or continue) training as configured.

    ``corpus`` bypasses loading ``cfg.corpus_dir``. With ``write_files`` the
    effective config, a JSON-lines log and the checkpoint go to ``cfg.out_dir``.
    A non-finite loss raises :class:`NonFiniteError` before any parameter is
    touched, leaving the last checkpoint on disk intact.
    """
    splits = load_corpus(cfg.corpus_dir) if corpus is None else corpus
    train_bags, test_bags = _split(splits)
    D = _dims(cfg, train_bags + (test_bags or []))

    start_epoch = 0
    if resume_from is not None:
        ckpt: Checkpoint = load_checkpoint(resume_from, cfg.tau_p, (D, cfg.k, cfg.h), cfg.lr)
        if ckpt.optim is None:
            raise ConfigError(f"{resume_from}: checkpoint carries no optimizer state to resume from")
        params, start_epoch = ckpt.params, ckpt.epoch
        optim = Adam(params.slots(), cfg.lr, state=ckpt.optim)
    else:
        params = init_params(D, cfg.k, cfg.h, cfg.seed, cfg.tau_p)
        optim = Adam(params.slots(), cfg.lr)

    out_dir = ckpt_path = log_file = None
    if write_files:
        if not cfg.out_dir:
            raise ConfigError("out_dir is required to write training outputs")
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / CONFIG_NAME).write_text(cfg.to_text(), encoding="utf-8", newline="\n")
        ckpt_path = out_dir / CHECKPOINT_NAME
        log_file = open(out_dir / LOG_NAME, "a" if resume_from is not None else "w",
                        encoding="utf-8", newline="\n")

    records: list[dict] = []

    def emit(rec: dict) -> None:
        records.append(rec)
        if log_file is not None:
            log_file.write(json.dumps(rec, sort_keys=True) + "\n")

    n = len(train_bags)
    step = optim.state.t
    epoch = start_epoch
    train_auc = test_auc = None
    try:
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
            sums = np.zeros(3)
            n_batches = 0
            for lo in range(0, n, cfg.batch_size):
                batch = assemble_batch([train_bags[i] for i in order[lo:lo + cfg.batch_size]])
                optim.zero_grad()
                losses = batch_objective(params, batch, cfg)
                if not np.isfinite(losses.l_total):
                    raise NonFiniteError(f"non-finite loss at epoch {epoch}, step {step + 1}: {losses}")
                clip_grad_norm(optim.params, cfg.clip_grad_norm)
                optim.step()
                step += 1
                n_batches += 1
                sums += (losses.l_mil, losses.l_pide, losses.l_total)
                emit({"kind": "step", "epoch": epoch, "step": step, "l_mil": losses.l_mil,
                      "l_pide": losses.l_pide, "l_total": losses.l_total, "lambda": losses.lam})
            train_auc = _auc_or_none(params, train_bags, cfg.use_pil)
            test_auc = _auc_or_none(params, test_bags, cfg.use_pil)
            means = sums / max(n_batches, 1)
            emit({"kind": "epoch", "epoch": epoch, "step": step, "l_mil": means[0],
                  "l_pide": means[1], "l_total": means[2], "train_auc": train_auc,
                  "test_auc": test_auc})
            log.info("epoch %d: l_total=%.4f train_auc=%s test_auc=%s",
                     epoch, means[2], train_auc, test_auc)
            if ckpt_path is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                save_checkpoint(ckpt_path, params, optim.state, epoch)
        if epoch == start_epoch:
            train_auc = _auc_or_none(params, train_bags, cfg.use_pil)
            test_auc = _auc_or_none(params, test_bags, cfg.use_pil)
        if ckpt_path is not None:
            save_checkpoint(ckpt_path, params, optim.state, epoch)
    finally:
        if log_file is not None:
            log_file.close()

    return TrainResult(params, optim.state, epoch, records, ckpt_path, train_auc, test_auc)


def resume(checkpoint, cfg: TrainConfig, corpus=None, write_files: bool = True) -> TrainResult:
    """Continue training from ``checkpoint`` up to ``cfg.epochs`` total epochs."""
    return train(cfg, corpus, resume_from=checkpoint, write_files=write_files)


def read_log(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


