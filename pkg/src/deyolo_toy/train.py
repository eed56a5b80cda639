"""Deterministic SGD training, evaluation and checkpointing for ToyDetector."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .deca import DecaConfig
from .depa import DepaConfig
from .detect import assign_targets, decode, detection_loss
from .metrics import Detection, EvalReport, GtBox, map_metrics
from .model import ModelConfig, ToyDetector
from .nd import numpy_rng
from .synth import PairedSample

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "deyolo-toy-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch: int = 8
    lr_init: float = 1e-2
    lr_final: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    hflip: bool = True
    conf_thresh: float = 0.001
    nms_iou: float = 0.6

    def __post_init__(self):
        if self.lr_final > self.lr_init:
            raise ValueError("lr_final must not exceed lr_init")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be positive")


def cosine_lr(cfg: TrainConfig, step: int, total: int) -> float:
    t = step / max(total - 1, 1)
    return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1 + math.cos(math.pi * t))


@dataclass
class Batchable:
    visible: torch.Tensor
    infrared: torch.Tensor
    labels: list

    @classmethod
    def from_samples(cls, samples: Sequence[PairedSample]) -> "Batchable":
        if not samples:
            raise ValueError("dataset is empty")
        return cls(torch.from_numpy(np.stack([s.visible for s in samples])),
                   torch.from_numpy(np.stack([s.infrared for s in samples])),
                   [list(s.labels) for s in samples])

    def __len__(self):
        return len(self.labels)


def _flip_labels(labels):
    return [(c, (1 - b[2], b[1], 1 - b[0], b[3])) for c, b in labels]


def make_optimizer(model, cfg: TrainConfig):
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        (no_decay if p.dim() <= 1 else decay).append(p)
    return torch.optim.SGD([{"params": decay, "weight_decay": cfg.weight_decay},
                            {"params": no_decay, "weight_decay": 0.0}],
                           lr=cfg.lr_init, momentum=cfg.momentum)


def train_epoch(model, opt, data: Batchable, cfg: TrainConfig, epoch: int) -> dict[str, float]:
    model.train()
    rng = numpy_rng(cfg.seed, 1, epoch)
    order = rng.permutation(len(data))
    flips = rng.random(len(data)) < 0.5 if cfg.hflip else np.zeros(len(data), bool)
    steps_per_epoch = math.ceil(len(data) / cfg.batch)
    total_steps = steps_per_epoch * cfg.epochs
    sums = {"obj": 0.0, "cls": 0.0, "box": 0.0, "total": 0.0}
    image_size = model.cfg.image_size
    for k in range(steps_per_epoch):
        idx = order[k * cfg.batch:(k + 1) * cfg.batch]
        vis, ir = data.visible[idx].clone(), data.infrared[idx].clone()
        labels = []
        for j, i in enumerate(idx):
            if flips[i]:
                vis[j] = vis[j].flip(-1)
                ir[j] = ir[j].flip(-1)
                labels.append(_flip_labels(data.labels[i]))
            else:
                labels.append(data.labels[i])
        for g in opt.param_groups:
            g["lr"] = cosine_lr(cfg, epoch * steps_per_epoch + k, total_steps)
        targets = assign_targets(labels, image_size, model.cfg.num_classes)
        losses = detection_loss(model(vis, ir), targets, image_size)
        for name, v in losses.as_floats().items():
            if not math.isfinite(v):
                raise TrainingDiverged(
                    f"non-finite {name} loss ({v}) at epoch {epoch + 1}, step {k + 1}")
        opt.zero_grad()
        losses.total.backward()
        opt.step()
        for name, v in losses.as_floats().items():
            sums[name] += v * len(idx)
    return {k: v / len(data) for k, v in sums.items()}


@torch.no_grad()
def predict(model, data: Batchable, conf_thresh: float = 0.001, nms_iou: float = 0.6,
            batch: int = 16) -> list[np.ndarray]:
    model.eval()
    out = []
    for k in range(0, len(data), batch):
        preds = model(data.visible[k:k + batch], data.infrared[k:k + batch])
        out += decode(preds, model.cfg.image_size, conf_thresh, nms_iou)
    return out


def to_records(rows_per_image: Sequence[np.ndarray], labels_per_image, names=None):
    names = names if names is not None else list(range(len(labels_per_image)))
    dets, gts = [], []
    for name, rows, labels in zip(names, rows_per_image, labels_per_image):
        dets += [Detection(name, int(r[5]), tuple(float(v) for v in r[:4]), float(r[4])) for r in rows]
        gts += [GtBox(name, int(c), tuple(b)) for c, b in labels]
    return dets, gts


def evaluate(model, data: Batchable, cfg: TrainConfig = TrainConfig(), names=None) -> EvalReport:
    rows = predict(model, data, cfg.conf_thresh, cfg.nms_iou)
    dets, gts = to_records(rows, data.labels, names)
    return map_metrics(dets, gts, n_images=len(data))


# --------------------------------------------------------------------------
# checkpoints

def model_config_dict(cfg: ModelConfig) -> dict:
    return dataclasses.asdict(cfg)


def model_config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["deca"] = DecaConfig(**d["deca"])
    d["depa"] = DepaConfig(**d["depa"])
    return ModelConfig(**d)


def save_checkpoint(path, model: ToyDetector, train_cfg: TrainConfig, epoch: int,
                    opt=None, history=None, extra: dict | None = None) -> None:
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model_config_dict(model.cfg),
        "train_config": dataclasses.asdict(train_cfg),
        "epoch": epoch,
        "state_dict": model.state_dict(),
        "optimizer": opt.state_dict() if opt is not None else None,
        "history": history or [],
        "extra": extra or {},
    }, path)


def load_checkpoint(path) -> dict:
    ck = torch.load(path, map_location="cpu", weights_only=False)
    if ck.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if ck.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {ck.get('version')}")
    model = ToyDetector(model_config_from_dict(ck["model_config"]))
    model.load_state_dict(ck["state_dict"])
    ck["model"] = model
    ck["train_config"] = TrainConfig(**ck["train_config"])
    return ck


# --------------------------------------------------------------------------

HISTORY_FIELDS = ("epoch", "loss_total", "loss_obj", "loss_cls", "loss_box", "lr", "val_map50")


def train(model_cfg: ModelConfig, cfg: TrainConfig, train_set: Sequence[PairedSample],
          val_set: Sequence[PairedSample] | None = None, out_dir=None,
          resume: dict | None = None, stop_after: int | None = None):
    """Train from scratch (or from ``resume``, a loaded checkpoint).

    Returns ``(model, history)``; history holds one dict per epoch. With
    ``out_dir`` set, ``metrics.csv``, ``last.pt`` (every epoch) and
    ``checkpoint.pt`` (at the end) are written there. ``stop_after`` ends the
    run early after that many epochs without changing the schedule.
    """
    torch.manual_seed(cfg.seed)
    data = Batchable.from_samples(train_set)
    val = Batchable.from_samples(val_set) if val_set else None
    model = ToyDetector(model_cfg, seed=cfg.seed)
    opt = make_optimizer(model, cfg)
    history: list[dict] = []
    start = 0
    if resume is not None:
        model.load_state_dict(resume["state_dict"])
        opt.load_state_dict(resume["optimizer"])
        history = list(resume["history"])
        start = resume["epoch"]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    end = cfg.epochs if stop_after is None else min(cfg.epochs, start + stop_after)
    for epoch in range(start, end):
        losses = train_epoch(model, opt, data, cfg, epoch)
        row = {"epoch": epoch + 1, "loss_total": losses["total"], "loss_obj": losses["obj"],
               "loss_cls": losses["cls"], "loss_box": losses["box"],
               "lr": opt.param_groups[0]["lr"],
               "val_map50": evaluate(model, val, cfg).map50 if val is not None else float("nan")}
        history.append(row)
        log.info("epoch %d/%d loss %.4f (obj %.4f cls %.4f box %.4f) val mAP50 %.4f",
                 row["epoch"], cfg.epochs, row["loss_total"], row["loss_obj"], row["loss_cls"],
                 row["loss_box"], row["val_map50"])
        if out is not None:
            write_history(out / "metrics.csv", history)
            save_checkpoint(out / "last.pt", model, cfg, epoch + 1, opt, history)
    if out is not None:
        save_checkpoint(out / "checkpoint.pt", model, cfg, end, opt, history)
    return model, history


def write_history(path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        w.writeheader()
        for row in history:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
