"""Equivariant vs. plain net on a few synthetic lesions.

A short version of the trend benchmark: same data, same parameter budget,
no augmentation.  With more epochs and data (see ``gseg.benchmark``) the
gap is clearer; here the point is the workflow.
"""

# %%
import dataclasses

from gseg import SegNetConfig, build, count_params
from gseg.config import TrainConfig
from gseg.data import gen_synthetic
from gseg.train import evaluate, train

train_set = gen_synthetic(48, 32, seed=1)
test_set = gen_synthetic(16, 32, seed=1001)
print("foreground fraction per training image:", train_set.masks.mean(axis=(1, 2, 3)).round(2))

# %%
settings = TrainConfig(epochs=12, batch_size=4, seed=0, dtype="float32")
config = SegNetConfig(base_width=2)

for label, cfg in [("p4m", config), ("plain", config.plain_twin())]:
    net = build(cfg, seed=0, dtype=settings.dtype)
    net, history = train(net, train_set, settings, val=test_set,
                         on_epoch=lambda e: print(f"  {label} epoch {e.epoch} loss {e.train_loss:.3f} val JA {e.val['JA']:.3f}"))
    scores = evaluate(net, test_set)
    print(f"{label:6s} params {count_params(net):6d}  test JA {scores['JA']:.3f}  DI {scores['DI']:.3f}")

# %% the same run with dihedral augmentation, as a baseline would be trained
aug = dataclasses.replace(settings, augment=True)
net, _ = train(build(config.plain_twin(), seed=0, dtype=aug.dtype), train_set, aug)
print(f"plain+aug test JA {evaluate(net, test_set)['JA']:.3f}")
