"""Frame-level ROC-AUC, score export and feature dumps."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .data import FeatureBag, assemble_batch
from .errors import UndefinedAUCError
from .model import ModelParams, forward


def compute_auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Tied scores receive their mid-rank, which makes the result equal to
    trapezoidal integration of the ROC curve.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores but {labels.size} labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(f"undefined AUC: {n_pos} positive and {n_neg} negative labels")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def smooth_scores(s: np.ndarray, window: int) -> np.ndarray:
    """Centred moving average with edge replication; ``window <= 1`` is a no-op."""
    if window <= 1:
        return s
    half = window // 2
    padded = np.pad(s, (half, window - 1 - half), mode="edge")
    return np.convolve(padded, np.ones(window) / window, mode="valid")


def score_bags(params: ModelParams, bags: list[FeatureBag], use_pil: bool = True,
               batch_size: int = 64) -> list[np.ndarray]:
    """Per-instance anomaly scores for each bag, in bag order."""
    out = []
    for i in range(0, len(bags), batch_size):
        chunk = bags[i:i + batch_size]
        batch = assemble_batch(chunk)
        S = forward(params, batch.features, use_pil).scores[..., 0]
        out += [S[j, :n].copy() for j, n in enumerate(batch.lengths)]
    return out


def frame_auc(params: ModelParams, bags: list[FeatureBag], use_pil: bool = True,
              smooth: int = 0) -> float:
    scores = score_bags(params, bags, use_pil)
    s = np.concatenate([smooth_scores(x, smooth) for x in scores])
    y = np.concatenate([b.frame_labels for b in bags])
    return compute_auc(s, y)


@dataclass
class EvalReport:
    auc: float
    n_pos: int
    n_neg: int
    checkpoint: str
    corpus: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _check_frame_labels(bags: list[FeatureBag]) -> None:
    missing = [b.id or f"#{i}" for i, b in enumerate(bags) if b.frame_labels is None]
    if missing:
        raise ValueError(f"{len(missing)} bag(s) lack frame labels: {', '.join(missing[:20])}")


def write_score_csv(path, scores: np.ndarray, gt: np.ndarray | None) -> None:
    lines = ["instance_index,score,gt_label"]
    for i, s in enumerate(scores):
        g = "" if gt is None else str(int(gt[i]))
        lines.append(f"{i},{float(s):.9g},{g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def evaluate(params: ModelParams, bags: list[FeatureBag], use_pil: bool = True,
             out_dir=None, checkpoint: str = "", corpus: str = "", smooth: int = 0) -> EvalReport:
    """Frame-level AUC over all instances of ``bags``.

    With ``out_dir`` set, writes ``report.json`` plus ``scores/<bag id>.csv``
    (``instance_index,score,gt_label``) for external plotting.
    """
    _check_frame_labels(bags)
    scores = [smooth_scores(s, smooth) for s in score_bags(params, bags, use_pil)]
    y = np.concatenate([b.frame_labels for b in bags])
    auc = compute_auc(np.concatenate(scores), y)
    n_pos = int(y.sum())
    report = EvalReport(auc, n_pos, int(y.size - n_pos), str(checkpoint), str(corpus))
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "scores").mkdir(parents=True, exist_ok=True)
        for i, (bag, s) in enumerate(zip(bags, scores)):
            write_score_csv(out_dir / "scores" / f"{bag.id or f'bag{i:05d}'}.csv", s, bag.frame_labels)
        (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8", newline="\n")
    return report


def dump_features(params: ModelParams, bags: list[FeatureBag], path, use_pil: bool = True,
                  batch_size: int = 64) -> int:
    """Write one CSV row per instance: bag id, index, gt label, then the D values of F'.

    Values are printed with 17 significant digits so the float32 features
    round-trip exactly. Returns the number of rows written.
    """
    D = params.D
    header = "bag_id,instance_index,gt_label," + ",".join(f"f{j}" for j in range(D))
    rows = [header]
    for i in range(0, len(bags), batch_size):
        chunk = bags[i:i + batch_size]
        batch = assemble_batch(chunk)
        Fp = forward(params, batch.features, use_pil).features
        for j, bag in enumerate(chunk):
            for t in range(bag.T):
                gt = "" if bag.frame_labels is None else str(int(bag.frame_labels[t]))
                vals = ",".join(f"{float(v):.17g}" for v in Fp[j, t])
                rows.append(f"{bag.id},{t},{gt},{vals}")
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8", newline="\n")
    return len(rows) - 1
