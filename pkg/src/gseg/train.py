"""Momentum SGD, the step learning-rate schedule, dihedral augmentation,
the training loop and dataset evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import TrainConfig
from .data import Dataset
from .group import GroupSpec, enumerate_group
from .layers import transform_feature_z2
from .metrics import METRIC_NAMES, ConfusionCounts, average_metrics, confusion, metrics
from .segnet import SegNet, loss, predict
from .tensor import Tensor

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "train_loss") + tuple(f"val_{m}" for m in METRIC_NAMES)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite training loss {value} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class OptimState:
    velocity: list[np.ndarray]
    learning_rate: float = 0.01
    momentum: float = 0.9
    epoch: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor], learning_rate=0.01, momentum=0.9) -> OptimState:
        return cls([np.zeros_like(p.data) for p in params], learning_rate, momentum)


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: OptimState):
    """Classical momentum: ``v <- mu v + g``, ``w <- w - lr v``, in place."""
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise ValueError("params, grads and velocity buffers differ in length")
    for i, g in enumerate(grads):
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {i}; step aborted")
    for p, g, v in zip(params, grads, state.velocity):
        if v.shape != p.shape:
            raise ValueError(f"velocity shape {v.shape} != parameter shape {p.shape}")
        v *= state.momentum
        if g is not None:
            v += g
        p.data -= state.learning_rate * v
    return params, state


def lr_schedule(epoch: int, base_lr: float = 0.01, decay_epoch: int = 60, decay_factor: float = 0.1) -> float:
    return base_lr if epoch < decay_epoch else base_lr * decay_factor


def augment(image: np.ndarray, mask: np.ndarray, seed) -> tuple[np.ndarray, np.ndarray]:
    """Apply one uniformly drawn p4m transform jointly to an image and its mask."""
    elems = enumerate_group(GroupSpec.P4M)
    g = elems[np.random.default_rng(seed).integers(len(elems))]
    return transform_feature_z2(g, image), transform_feature_z2(g, mask)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val: dict[str, float] = field(default_factory=dict)

    def csv(self) -> str:
        vals = [f"{self.val[m]:.6f}" for m in METRIC_NAMES]
        return ",".join([str(self.epoch), repr(self.lr), f"{self.train_loss:.6f}"] + vals)


def predict_dataset(network: SegNet, dataset: Dataset, batch_size: int = 16) -> np.ndarray:
    was_training = network.training
    network.eval()
    try:
        preds = [predict(network, dataset.images[i:i + batch_size])
                 for i in range(0, len(dataset), batch_size)]
    finally:
        network.training = was_training
    return np.concatenate(preds)


def evaluate(network: SegNet, dataset: Dataset, averaging: str = "per_image",
             batch_size: int = 16) -> dict[str, float]:
    """Mean of per-image metrics (``per_image``) or metrics of pooled counts (``pooled``)."""
    preds = predict_dataset(network, dataset, batch_size)
    counts = [confusion(p, m) for p, m in zip(preds, dataset.masks)]
    if averaging == "per_image":
        return average_metrics([metrics(c) for c in counts])
    if averaging == "pooled":
        return metrics(sum(counts, ConfusionCounts(0, 0, 0, 0)))
    raise ValueError(f"unknown averaging {averaging!r}")


def train(network: SegNet, dataset: Dataset, config: TrainConfig, val: Dataset | None = None,
          on_epoch: Callable[[EpochLog], None] | None = None,
          validate: bool = True) -> tuple[SegNet, list[EpochLog]]:
    """Mini-batch momentum SGD on the deep-supervision loss.

    Shuffling and augmentation draws come from ``config.seed`` only, so a
    run is reproducible bit for bit.  ``val`` defaults to the training set;
    with ``validate=False`` the logged validation scores are NaN.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    val = dataset if val is None else val
    rng = np.random.default_rng(config.seed)
    params = network.parameters()
    state = OptimState.for_params(params, config.lr, config.momentum)
    ds_weights = network.config.ds_weights
    history = []
    for epoch in range(config.epochs):
        state.epoch = epoch
        state.learning_rate = lr_schedule(epoch, config.lr, config.decay_epoch, config.decay_factor)
        order = rng.permutation(len(dataset))
        network.train()
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            images, masks = dataset.images[idx], dataset.masks[idx].astype(np.float64)
            if config.augment:
                seeds = rng.integers(0, 2 ** 63, size=len(idx))
                pairs = [augment(im, mk, s) for im, mk, s in zip(images, masks, seeds)]
                images = np.stack([p[0] for p in pairs])
                masks = np.stack([p[1] for p in pairs])
            network.zero_grad()
            value = loss(network.forward(images.astype(network.dtype)), masks.astype(network.dtype), ds_weights)
            if not np.isfinite(value.data):
                raise TrainingDiverged(epoch, float(value.data))
            value.backward()
            sgd_step(params, [p.grad for p in params], state)
            losses.append(float(value.data) * len(idx))
        scores = evaluate(network, val, config.averaging) if validate else dict.fromkeys(METRIC_NAMES, np.nan)
        entry = EpochLog(epoch, state.learning_rate, sum(losses) / len(dataset), scores)
        network.train()
        history.append(entry)
        log.info("epoch %d lr %g loss %.4f val JA %.4f", epoch, entry.lr, entry.train_loss, entry.val["JA"])
        if on_epoch is not None:
            on_epoch(entry)
    network.eval()
    return network, history
