"""Compare the four ablation modes over a few seeds.

baseline   plain MIL head
pil        + prototype interaction layer
pide       + contrastive term on extreme instances (no path to the
             parameters without the prototype layer, so it equals baseline)
full       both

Each run is a full 50-epoch training; five seeds take about five minutes.
Pass a smaller count on the command line for a quicker look.
"""

# %%
import sys

import numpy as np

from protovad.data import SynthConfig, generate_synthetic
from protovad.trainer import ABLATIONS, TrainConfig, train

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5
aucs = {ab: [] for ab in ABLATIONS}
for seed in range(n_seeds):
    corpus = generate_synthetic(SynthConfig(seed=seed))
    for ab in ABLATIONS:
        res = train(TrainConfig(ablation=ab, seed=seed), corpus, write_files=False)
        aucs[ab].append(res.test_auc)
        print(f"seed {seed} {ab:8s} {res.test_auc:.6f}", flush=True)

# %%
print()
for ab in ABLATIONS:
    print(f"{ab:8s} median {np.median(aucs[ab]):.6f}  min {np.min(aucs[ab]):.6f}")
