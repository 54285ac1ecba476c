import numpy as np
import pytest

from protovad.data import FeatureBag, SynthConfig, assemble_batch, generate_synthetic
from protovad.model import init_params


def random_bags(rng, sizes, D, labels=None):
    labels = labels if labels is not None else [i % 2 for i in range(len(sizes))]
    bags = []
    for j, (T, y) in enumerate(zip(sizes, labels)):
        frames = np.zeros(T, dtype=np.uint8)
        if y:
            frames[rng.integers(0, T)] = 1
        bags.append(FeatureBag(rng.normal(size=(T, D)).astype(np.float32), y, frames, f"bag{j}"))
    return bags


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_params64():
    return init_params(D=6, K=3, H=5, seed=7, dtype=np.float64)


@pytest.fixture
def two_bag_batch(rng):
    return assemble_batch(random_bags(rng, [5, 7], 6, labels=[0, 1]))


@pytest.fixture(scope="session")
def tiny_corpus():
    cfg = SynthConfig(d=8, train_per_class=12, test_per_class=6, t_min=8, t_max=14, seed=3)
    return generate_synthetic(cfg)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
