"""Equivariant vs. parameter-matched plain network on synthetic lesions."""

from __future__ import annotations

import dataclasses
import logging
import time

import numpy as np

from .config import TrainConfig
from .data import gen_synthetic
from .segnet import SegNetConfig, build, count_params
from .train import evaluate, train

log = logging.getLogger(__name__)

# desk-scale defaults: 200 train / 100 test images of 64x64, 30 epochs
BENCH_NET = SegNetConfig(base_width=2, blocks_per_stage=2)
BENCH_TRAIN = TrainConfig(epochs=30, batch_size=8, dtype="float32")


def held_out_seed(seed: int) -> int:
    """Data seed of the held-out split, disjoint from the training draws."""
    return 10_000 + seed


def run_trend(seed: int, n_train: int = 200, n_test: int = 100, size: int = 64,
              net_config: SegNetConfig = BENCH_NET, train_config: TrainConfig = BENCH_TRAIN) -> dict:
    """Train both nets without augmentation on the same data; report test metrics."""
    train_set = gen_synthetic(n_train, size, seed)
    test_set = gen_synthetic(n_test, size, held_out_seed(seed))
    tc = dataclasses.replace(train_config, seed=seed, augment=False)
    dtype = np.dtype(tc.dtype)
    result = {"seed": seed}
    for label, cfg in (("equivariant", net_config), ("plain", net_config.plain_twin())):
        start = time.perf_counter()
        net = build(cfg, seed=seed, dtype=dtype)
        net, history = train(net, train_set, tc, validate=False)
        scores = evaluate(net, test_set, tc.averaging)
        result[label] = {
            "params": count_params(net),
            "test": scores,
            "final_train_loss": history[-1].train_loss,
            "seconds": time.perf_counter() - start,
        }
        log.info("seed %d %s: JA %.4f (%.0fs)", seed, label, scores["JA"], result[label]["seconds"])
    result["ja_gap"] = result["equivariant"]["test"]["JA"] - result["plain"]["test"]["JA"]
    return result
