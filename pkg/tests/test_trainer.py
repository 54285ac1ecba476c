import numpy as np
import pytest

from protovad.checkpoint import encode_checkpoint, load_checkpoint
from protovad.data import FeatureBag, assemble_batch, write_corpus
from protovad.errors import ConfigError, FormatError, NonFiniteError, ShapeMismatchError
from protovad.model import init_params
from protovad.trainer import (CHECKPOINT_NAME, CONFIG_NAME, LOG_NAME, TrainConfig, batch_objective,
                                 read_log, resume, train)


def _cfg(tmp_path, **kw):
    base = dict(k=3, h=8, batch_size=6, epochs=4, out_dir=str(tmp_path))
    base.update(kw)
    return TrainConfig(**base)


# -- objective ---------------------------------------------------------------

@pytest.mark.parametrize("ablation", ["baseline", "pil"])
def test_no_pide_term_without_pide(tiny_corpus, ablation):
    p = init_params(8, 3, 8, seed=0)
    out = batch_objective(p, assemble_batch(tiny_corpus["train"][:6]), TrainConfig(ablation=ablation))
    assert out.l_pide == 0.0 and out.l_total == out.l_mil and out.lam == 0.0


def test_lambda_zero_reduces_to_mil(tiny_corpus):
    batch = assemble_batch(tiny_corpus["train"][:6])
    p0, p1 = init_params(8, 3, 8, seed=0), init_params(8, 3, 8, seed=0)
    full0 = batch_objective(p0, batch, TrainConfig(ablation="full", lam=0.0))
    pil = batch_objective(p1, batch, TrainConfig(ablation="pil"))
    assert full0.l_total == full0.l_mil == pil.l_mil
    for a, b in zip(p0, p1):
        np.testing.assert_array_equal(a.grad, b.grad)


def test_full_objective_combines_terms(tiny_corpus):
    p = init_params(8, 3, 8, seed=0)
    out = batch_objective(p, assemble_batch(tiny_corpus["train"][:6]), TrainConfig(lam=5.0),
                          compute_grad=False)
    assert out.l_pide > 0
    assert out.l_total == pytest.approx(out.l_mil + 5.0 * out.l_pide)
    assert all(not s.grad.any() for s in p)


# -- training loop -----------------------------------------------------------

def test_outputs_and_log(tmp_path, tiny_corpus):
    res = train(_cfg(tmp_path), tiny_corpus)
    assert (tmp_path / CHECKPOINT_NAME).is_file() and (tmp_path / CONFIG_NAME).is_file()
    log = read_log(tmp_path / LOG_NAME)
    steps = [r for r in log if r["kind"] == "step"]
    epochs = [r for r in log if r["kind"] == "epoch"]
    assert len(steps) == 4 * 4 and [r["epoch"] for r in epochs] == [1, 2, 3, 4]
    assert [r["step"] for r in steps] == list(range(1, 17))
    assert {"l_mil", "l_pide", "l_total", "lambda"} <= set(steps[0])
    assert res.epoch == 4 and 0 <= res.test_auc <= 1
    assert TrainConfig.from_file(tmp_path / CONFIG_NAME) == _cfg(tmp_path)


def test_training_is_deterministic(tmp_path, tiny_corpus):
    train(_cfg(tmp_path / "a"), tiny_corpus)
    train(_cfg(tmp_path / "b"), tiny_corpus)
    assert (tmp_path / "a" / CHECKPOINT_NAME).read_bytes() == (tmp_path / "b" / CHECKPOINT_NAME).read_bytes()
    assert (tmp_path / "a" / LOG_NAME).read_bytes() == (tmp_path / "b" / LOG_NAME).read_bytes()


def test_resume_matches_uninterrupted_run(tmp_path, tiny_corpus):
    straight = train(_cfg(tmp_path / "s", epochs=6), tiny_corpus)
    train(_cfg(tmp_path / "r", epochs=3), tiny_corpus)
    resumed = resume(tmp_path / "r" / CHECKPOINT_NAME, _cfg(tmp_path / "r", epochs=6), tiny_corpus)
    assert resumed.epoch == 6
    assert (tmp_path / "s" / CHECKPOINT_NAME).read_bytes() == (tmp_path / "r" / CHECKPOINT_NAME).read_bytes()
    assert encode_checkpoint(straight.params, straight.optim, 6) == encode_checkpoint(
        resumed.params, resumed.optim, 6)
    # the resumed log continues the original one
    steps = [r["step"] for r in read_log(tmp_path / "r" / LOG_NAME) if r["kind"] == "step"]
    assert steps == list(range(1, 25))


def test_resume_rejects_mismatch_and_corruption(tmp_path, tiny_corpus):
    train(_cfg(tmp_path, epochs=1), tiny_corpus)
    ckpt = tmp_path / CHECKPOINT_NAME
    with pytest.raises(ShapeMismatchError):
        resume(ckpt, _cfg(tmp_path / "x", k=4, epochs=2), tiny_corpus)
    blob = bytearray(ckpt.read_bytes())
    blob[40] ^= 0x10
    bad = tmp_path / "bad.pdvh"
    bad.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        resume(bad, _cfg(tmp_path / "y", epochs=2), tiny_corpus)


def test_checkpoint_every(tmp_path, tiny_corpus):
    train(_cfg(tmp_path, epochs=3, checkpoint_every=2), tiny_corpus)
    assert load_checkpoint(tmp_path / CHECKPOINT_NAME).epoch == 3


def test_training_makes_progress(tiny_corpus):
    res = train(TrainConfig(k=3, h=16, batch_size=6, epochs=15), tiny_corpus, write_files=False)
    per_epoch = [r["l_total"] for r in res.records if r["kind"] == "epoch"]
    assert np.mean(per_epoch[-5:]) < np.mean(per_epoch[:5])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_input_aborts_before_update(tmp_path, tiny_corpus):
    bags = list(tiny_corpus["train"])
    x = bags[0].features.copy()
    x[0, 0] = np.inf
    bags[0] = FeatureBag(x, bags[0].bag_label, bags[0].frame_labels, bags[0].id)
    with pytest.raises(NonFiniteError):
        train(_cfg(tmp_path, batch_size=100), {"train": bags})
    assert not (tmp_path / CHECKPOINT_NAME).exists()


def test_corpus_from_directory(tmp_path, tiny_corpus):
    write_corpus(tiny_corpus, tmp_path / "c")
    a = train(_cfg(tmp_path / "o", epochs=1, corpus_dir=str(tmp_path / "c")), write_files=False)
    b = train(_cfg(tmp_path / "o", epochs=1), tiny_corpus, write_files=False)
    assert encode_checkpoint(a.params) == encode_checkpoint(b.params)


def test_config_dimension_mismatch(tiny_corpus):
    with pytest.raises(ShapeMismatchError):
        train(TrainConfig(d=16, k=3, h=8, epochs=1), tiny_corpus, write_files=False)


# -- config files ------------------------------------------------------------

def test_config_file_parsing(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# comment\nlambda = 2.5\nablation = pil\nepochs=7\n\n")
    cfg = TrainConfig.from_file(path)
    assert (cfg.lam, cfg.ablation, cfg.epochs, cfg.k) == (2.5, "pil", 7, 5)


@pytest.mark.parametrize("text", ["lamda = 1\n", "epochs = many\n", "lr 0.1\n", "k = 2\nk = 3\n",
                                  "ablation = everything\n", "tau_p = 0\n"])
def test_config_file_errors(tmp_path, text):
    path = tmp_path / "c.txt"
    path.write_text(text)
    with pytest.raises(ConfigError):
        TrainConfig.from_file(path)
