"""Mini-batch training with plateau learning-rate decay and best-dev selection."""
from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .. import autodiff as ad
from ..annotator import LABELS, FrameLabel
from ..models import Model, ModelConfig
from .losses import combined_loss, localization_loss
from .metrics import iou_batch, reporting_boxes

log = logging.getLogger(__name__)

VISIBLE = LABELS.index(FrameLabel.VISIBLE)


class Supervision(str, enum.Enum):
    FULL = "full"
    VISIBLE_ONLY = "visible-only"


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    decay: float = 0.8
    patience: int = 3
    max_epochs: int = 160
    supervision: Supervision = Supervision.FULL
    alpha: float = 1.0
    beta: float = 0.5
    seed: int = 0
    min_delta: float = 1e-6
    early_stop_patience: Optional[int] = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size and max_epochs must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["supervision"] = self.supervision.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "supervision" in d:
            d["supervision"] = Supervision(d["supervision"])
        return cls(**d)


class PlateauSchedule:
    """Multiply the learning rate by ``decay`` after ``patience`` epochs without improvement.

    Improvement means the monitored loss fell by at least ``min_delta`` below
    the best value so far. The counter restarts after every decay.
    """

    def __init__(self, lr: float, decay: float = 0.8, patience: int = 3, min_delta: float = 1e-6):
        self.lr = lr
        self.decay = decay
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, loss: float) -> float:
        if loss < self.best - self.min_delta:
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.decay
                self.bad_epochs = 0
        return self.lr

    def state(self) -> dict:
        return {"lr": self.lr, "best": self.best, "bad_epochs": self.bad_epochs}

    def load(self, d: dict) -> None:
        self.lr, self.best, self.bad_epochs = d["lr"], d["best"], d["bad_epochs"]


def supervision_mask(labels: np.ndarray, mode: Supervision) -> np.ndarray:
    labels = np.asarray(labels)
    if mode is Supervision.FULL:
        return np.ones(labels.shape)
    return (labels == VISIBLE).astype(float)


@dataclass
class SupervisedSplit:
    """Model inputs plus the only box targets training may see.

    Targets of unsupervised frames are zeroed at construction, so nothing
    downstream can read them.
    """

    obs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray

    @classmethod
    def build(cls, arrays: dict, mode: Supervision) -> "SupervisedSplit":
        mask = supervision_mask(arrays["labels"], mode)
        return cls(arrays["obs"], arrays["boxes"] * mask[..., None], mask)

    def hidden_reads(self) -> int:
        """Unsupervised frames whose target values are non-zero (must be 0)."""
        return int(np.sum((self.mask == 0) & np.any(self.targets != 0, axis=-1)))


@dataclass
class TrainResult:
    model: Model
    log: list[dict]
    best_epoch: int
    best_dev_iou: float
    audit_hidden_reads: int = 0


def _objective(pred, split: SupervisedSplit, idx, cfg: TrainConfig):
    if cfg.supervision is Supervision.FULL:
        return localization_loss(pred, split.targets[idx])
    return combined_loss(pred, split.targets[idx], split.mask[idx], cfg.alpha, cfg.beta)


def _dev_scores(model: Model, dev: SupervisedSplit, cfg: TrainConfig) -> tuple[float, float]:
    pred, _ = model.predict(dev.obs)
    loss = float(_objective(ad.Tensor(pred), dev, slice(None), cfg).data)
    ious = iou_batch(reporting_boxes(pred), dev.targets)
    m = dev.mask > 0
    return loss, float(ious[m].mean()) if m.any() else float("nan")


def train(train_arrays: dict, dev_arrays: dict, model_config: ModelConfig,
          config: TrainConfig = TrainConfig(),
          on_epoch: Optional[Callable[[dict], None]] = None,
          state_path: Optional[Path] = None,
          resume: bool = False) -> TrainResult:
    """Train a learned variant; returns the model at its best dev mean IoU.

    With ``state_path`` the full training state is written after every epoch;
    ``resume=True`` continues from it and reproduces an uninterrupted run.
    """
    if not model_config.variant.learned:
        raise ValueError(f"{model_config.variant.value} is not trainable")
    tr = SupervisedSplit.build(train_arrays, config.supervision)
    dev = SupervisedSplit.build(dev_arrays, config.supervision)
    model = Model(model_config)
    params = model.params
    opt = ad.AdamState()
    sched = PlateauSchedule(config.lr, config.decay, config.patience, config.min_delta)
    history: list[dict] = []
    best = {"epoch": -1, "iou": -np.inf, "params": params.snapshot()}
    start_epoch = 0
    if resume and state_path is not None and Path(state_path).exists():
        start_epoch, history, best = _load_state(state_path, params, opt, sched)

    N = tr.obs.shape[0]
    for epoch in range(start_epoch, config.max_epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(N)
        losses = []
        for lo in range(0, N, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            params.zero_grad()
            pred, _ = model(tr.obs[idx])
            loss = _objective(pred, tr, idx, config)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, "
                                       f"batch starting {lo}, lr={sched.lr:g}")
            ad.backward(loss)
            ad.adam_step(params, params.grads(), opt, sched.lr)
            losses.append(value * len(idx))
        dev_loss, dev_iou = _dev_scores(model, dev, config)
        lr_used = sched.lr
        sched.step(dev_loss)
        if dev_iou > best["iou"]:
            best = {"epoch": epoch, "iou": dev_iou, "params": params.snapshot()}
        entry = {"epoch": epoch, "train_loss": float(np.sum(losses) / N), "dev_loss": dev_loss,
                 "dev_iou": dev_iou, "lr": lr_used}
        history.append(entry)
        log.info("epoch %d train %.5f dev %.5f iou %.4f lr %.2e (%.1fs)", epoch,
                 entry["train_loss"], dev_loss, dev_iou, lr_used, time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(entry)
        if state_path is not None:
            _save_state(state_path, epoch + 1, history, best, params, opt, sched,
                        model_config, config)
        if (config.early_stop_patience is not None
                and epoch - best["epoch"] >= config.early_stop_patience):
            break
    params.load(best["params"])
    return TrainResult(model, history, best["epoch"], float(best["iou"]),
                       tr.hidden_reads() + dev.hidden_reads())


def _save_state(path, next_epoch, history, best, params, opt, sched, model_config, config):
    doc = {
        "next_epoch": next_epoch,
        "history": history,
        "best": {"epoch": best["epoch"], "iou": best["iou"],
                 "params": {k: v.tolist() for k, v in best["params"].items()}},
        "params": {k: p.data.tolist() for k, p in params.items()},
        "adam": opt.to_dict(),
        "schedule": sched.state(),
        "model": model_config.to_dict(),
        "train": config.to_dict(),
    }
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    tmp.replace(path)


def _load_state(path, params, opt, sched):
    with open(path) as fh:
        doc = json.load(fh)
    params.load({k: np.asarray(v) for k, v in doc["params"].items()})
    loaded = ad.AdamState.from_dict(doc["adam"])
    opt.__dict__.update(loaded.__dict__)
    sched.load(doc["schedule"])
    b = doc["best"]
    best = {"epoch": b["epoch"], "iou": b["iou"],
            "params": {k: np.asarray(v) for k, v in b["params"].items()}}
    return doc["next_epoch"], doc["history"], best
