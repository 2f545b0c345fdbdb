"""The five challenge scores on a toy prediction."""

# %%
import numpy as np

from gseg.metrics import average_metrics, confusion, metrics

gt = np.zeros((1, 6, 6), dtype=np.uint8)
gt[0, 1:4, 1:4] = 1
pred = np.zeros_like(gt)
pred[0, 2:5, 2:5] = 1

counts = confusion(pred, gt)
print(counts)
for name, value in metrics(counts).items():
    print(f"{name} {value:.4f}")

# %% Dice is a monotone function of Jaccard
m = metrics(counts)
print("2 JA / (1 + JA) =", 2 * m["JA"] / (1 + m["JA"]), " DI =", m["DI"])

# %% per-image averaging vs pooling the counts
empty = np.zeros_like(gt)
per_image = average_metrics([metrics(confusion(pred, gt)), metrics(confusion(empty, empty))])
pooled = metrics(confusion(pred, gt) + confusion(empty, empty))
print("JA per image", round(per_image["JA"], 4), " pooled", round(pooled["JA"], 4))
