"""Train the full model on the default corpus and score the test split.

Takes well under a minute on one core.
"""

# %%
import logging
import tempfile
from pathlib import Path

import numpy as np

from protovad.data import SynthConfig, generate_synthetic
from protovad.evalkit import evaluate, score_bags
from protovad.trainer import TrainConfig, read_log, train

logging.basicConfig(level=logging.INFO, format="%(message)s")
corpus = generate_synthetic(SynthConfig(seed=0))
out = Path(tempfile.mkdtemp()) / "run"

# %% Training
cfg = TrainConfig(ablation="full", seed=0, out_dir=str(out))
result = train(cfg, corpus)
print(f"test frame AUC after {result.epoch} epochs: {result.test_auc:.5f}")

# %% The log
# Step records carry both loss terms; epoch records add the AUCs.
epochs = [r for r in read_log(out / "train_log.jsonl") if r["kind"] == "epoch"]
for r in epochs[::10] + epochs[-1:]:
    print(f"epoch {r['epoch']:2d}  l_mil {r['l_mil']:.4f}  l_pide {r['l_pide']:.4f}  "
          f"test AUC {r['test_auc']:.4f}")

# %% Instance scores inside one abnormal test bag
bag = next(b for b in corpus["test"] if b.bag_label == 1)
(scores,) = score_bags(result.params, [bag])
run = np.flatnonzero(bag.frame_labels)
print(f"anomalous run {run[0]}..{run[-1]}; top-scoring instance {int(np.argmax(scores))}")
print("scores inside the run :", np.round(scores[run], 3))
print("max score outside     :", np.round(np.delete(scores, run).max(), 3))

# %% Evaluation report, as written by ``protovad eval``
report = evaluate(result.params, corpus["test"], out_dir=out / "eval",
                  checkpoint=str(out / "checkpoint.pdvh"))
print(report.to_json())
