"""Check hand-derived gradients against central differences.

Every operation in the package pairs a forward function with its backward
function. This script runs the whole objective (MIL loss plus the weighted
contrastive term) on a small two-bag batch in float64 and compares every
parameter coordinate.
"""

# %%
import numpy as np

from protovad.data import FeatureBag, assemble_batch
from protovad.diffcore import check_gradients
from protovad.model import init_params
from protovad.trainer import TrainConfig, batch_objective

rng = np.random.default_rng(0)
bags = [FeatureBag(rng.normal(size=(6, 8)), 0), FeatureBag(rng.normal(size=(9, 8)), 1)]
batch = assemble_batch(bags)
batch.features = batch.features.astype(np.float64)
params = init_params(D=8, K=5, H=16, seed=0, dtype=np.float64)
cfg = TrainConfig(ablation="full")


def objective():
    params.zero_grad()
    return batch_objective(params, batch, cfg).l_total


# %%
report = check_gradients(objective, params.slots())
print(report)

# %% The same check in float32 shows why the test suite uses float64
params32 = params.astype(np.float32)
batch.features = batch.features.astype(np.float32)


def objective32():
    params32.zero_grad()
    return batch_objective(params32, batch, cfg).l_total


print(check_gradients(objective32, params32.slots(), h=1e-3, tol=1e-4))
