import statistics

import pytest

from deyolo_toy.deca import DecaConfig
from deyolo_toy.model import ModelConfig
from deyolo_toy.synth import SceneConfig, generate, read_dataset
from deyolo_toy.train import (
    Batchable, TrainConfig, TrainingDiverged, cosine_lr, evaluate, load_checkpoint,
    make_optimizer, train)

SMALL = ModelConfig(width=8, deca=DecaConfig(se_reduction=4))


@pytest.fixture(scope="module")
def splits(small_dataset):
    return read_dataset(small_dataset, "train"), read_dataset(small_dataset, "val")


def test_cosine_schedule_endpoints():
    cfg = TrainConfig(lr_init=1e-2, lr_final=1e-4)
    assert cosine_lr(cfg, 0, 100) == pytest.approx(1e-2)
    assert cosine_lr(cfg, 99, 100) == pytest.approx(1e-4)
    lrs = [cosine_lr(cfg, k, 100) for k in range(100)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_config_rejects_rising_lr():
    with pytest.raises(ValueError):
        TrainConfig(lr_init=1e-4, lr_final=1e-2)


def test_no_weight_decay_on_norms_and_biases():
    from deyolo_toy.model import ToyDetector
    opt = make_optimizer(ToyDetector(ModelConfig()), TrainConfig())
    decay, no_decay = opt.param_groups
    assert all(p.dim() > 1 for p in decay["params"])
    assert all(p.dim() <= 1 for p in no_decay["params"]) and no_decay["weight_decay"] == 0


def test_empty_dataset():
    with pytest.raises(ValueError, match="empty"):
        Batchable.from_samples([])


def test_loss_drops_by_epoch_five():
    data = generate(SceneConfig(seed=5), 64)
    drops = []
    for seed in range(3):
        _, hist = train(ModelConfig(), TrainConfig(epochs=5, seed=seed), data)
        drops.append(hist[0]["loss_total"] - hist[4]["loss_total"])
    assert statistics.median(drops) > 0


def test_same_seed_same_curve(splits):
    cfg = TrainConfig(epochs=2, seed=4)
    _, a = train(SMALL, cfg, *splits)
    _, b = train(SMALL, cfg, *splits)
    assert a == b


def test_checkpoint_reload_reproduces_val_map(splits, tmp_path):
    cfg = TrainConfig(epochs=2)
    model, hist = train(ModelConfig(), cfg, *splits, out_dir=tmp_path)
    ck = load_checkpoint(tmp_path / "checkpoint.pt")
    val = Batchable.from_samples(splits[1])
    again = evaluate(ck["model"], val, ck["train_config"])
    assert again.map50 == hist[-1]["val_map50"]
    assert again.to_json() == evaluate(model, val, cfg).to_json()
    assert ck["epoch"] == 2 and ck["train_config"] == cfg
    assert (tmp_path / "metrics.csv").read_text().count("\n") == 3


def test_resume_reproduces_next_epoch(splits, tmp_path):
    cfg = TrainConfig(epochs=3)
    _, full = train(ModelConfig(), cfg, *splits)
    train(ModelConfig(), cfg, *splits, out_dir=tmp_path, stop_after=2)
    _, resumed = train(ModelConfig(), cfg, *splits, resume=load_checkpoint(tmp_path / "last.pt"))
    assert len(resumed) == 3
    assert abs(resumed[2]["loss_total"] - full[2]["loss_total"]) < 1e-6
    assert resumed[2] == full[2]


def test_divergence_names_the_term(splits):
    with pytest.raises(TrainingDiverged, match=r"non-finite (obj|cls|box|total) loss"):
        train(ModelConfig(), TrainConfig(epochs=3, lr_init=1e3, lr_final=1e-4), splits[0])

