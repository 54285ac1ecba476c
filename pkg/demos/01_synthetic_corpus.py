"""A look at the synthetic feature-bag corpus.

Each bag stands in for one video: a run of feature vectors around a scene
centre, where abnormal bags hide a short contiguous stretch of shifted
instances. Only the bag label is used for training; frame labels are kept
for evaluation.
"""

# %%
import numpy as np

from protovad.data import SynthConfig, anomaly_count, generate_synthetic

cfg = SynthConfig()
corpus = generate_synthetic(cfg)
print(cfg)
print({split: len(bags) for split, bags in corpus.items()})

# %% How much of an abnormal bag is actually abnormal?
abnormal = [b for b in corpus["train"] if b.bag_label == 1]
fractions = np.array([b.frame_labels.mean() for b in abnormal])
print(f"anomalous fraction per abnormal bag: mean {fractions.mean():.3f}, "
      f"min {fractions.min():.3f}, max {fractions.max():.3f}")
print("T=50 ->", anomaly_count(cfg.rho, 50), "anomalous instances")

# %% Where the signal lives
# Anomalies are offset along a single direction. Projecting every instance on
# the mean difference shows the two populations.
x = np.concatenate([b.features for b in corpus["train"]])
y = np.concatenate([b.frame_labels for b in corpus["train"]]).astype(bool)
gap = x[y].mean(0) - x[~y].mean(0)
proj = x @ (gap / np.linalg.norm(gap))
print(f"|mean gap| = {np.linalg.norm(gap):.3f} (delta = {cfg.delta})")
for name, vals in (("normal", proj[~y]), ("anomalous", proj[y])):
    print(f"{name:>9}: projection mean {vals.mean():+.3f}, std {vals.std():.3f}")

# %% Scenes
# By default every bag is drawn around one scene centre, so within a bag the
# normal instances are tight and between bags they differ.
bag = corpus["train"][0]
centre = bag.features.mean(0)
print("within-bag spread:", np.linalg.norm(bag.features - centre, axis=1).mean().round(3))
means = np.array([b.features.mean(0) for b in corpus["train"][:20]])
print("spread of bag means:", np.linalg.norm(means - means.mean(0), axis=1).mean().round(3))

# %% Writing it to disk
# The CLI equivalent is ``protovad synth --out corpus/``.
import tempfile
from pathlib import Path

from protovad.data import load_corpus, write_corpus

with tempfile.TemporaryDirectory() as tmp:
    manifest = write_corpus(corpus, Path(tmp) / "corpus")
    print(manifest.read_text().splitlines()[:3])
    back = load_corpus(manifest.parent)
    print({k: len(v) for k, v in back.items()})
