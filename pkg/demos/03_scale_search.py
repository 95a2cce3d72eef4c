"""
Searching the scale multiplier
==============================

Each layer gets a single multiplier on its absmax scales. The search tries
alpha = 1, then a coarse grid over the range, then a finer grid around the
best coarse point. It keeps the first candidate that is strictly better, so
the result can never be worse than the default scale.
"""

import numpy as np

from deltaquant import Granularity, LayerPair, SearchConfig, search_layer

rng = np.random.default_rng(3)
base = rng.standard_normal((256, 256)).astype(np.float32)
post = (base + 0.01 * rng.standard_normal((256, 256))).astype(np.float32)
pair = LayerPair("layers.0.weight", base, post)

for metric in ("mse", "sign", "cos"):
    config = SearchConfig(0.9, 1.11, metric=metric, granularity=Granularity.block())
    outcome, layer = search_layer(pair, config)
    print(f"{metric:>4}: alpha {outcome.chosen_alpha:.4f}  "
          f"baseline {outcome.baseline_metric:.6g}  best {outcome.best_metric:.6g}")

# The trace lists every candidate in evaluation order.
config = SearchConfig(0.8, 1.25, metric="sign", granularity=Granularity.per_channel())
outcome, layer = search_layer(pair, config)
for alpha, value in outcome.trace:
    print(f"  alpha {alpha:.4f}  sign rate {value:.4%}")

# The stored layer holds FP8 codes plus one inverse scale per group.
print("codes", layer.codes.dtype, layer.codes.shape, "scale_inv", layer.scale_inv.shape)
