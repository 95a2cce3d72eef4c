"""
Why the delta matters
=====================

A single weight moves from 5.0 to 5.3 during fine-tuning. If the grid can
only hold 5.0 or 6.0, plain round-to-nearest picks 5.0 and the update is
gone. Rounding up to 6.0 overshoots but keeps the direction.
"""

import numpy as np

from deltaquant import LayerPair, compute_delta, cos_sim, mse, sign_rate

pair = LayerPair("w", np.array([5.0]), np.array([5.3]))

for quant in (5.0, 6.0):
    d = compute_delta(pair, np.array([quant]))
    print(f"quant {quant}: delta {d.d_quant[0]:+.1f}  mse {mse(d):.2f}  "
          f"sign rate {sign_rate(d):.0f}  cosine {cos_sim(d):.0f}")

# The MSE of the deltas equals the MSE of the weights since the base cancels
# out. Sign rate and cosine do not have that property, which is the reason
# for searching scales with them.
rng = np.random.default_rng(0)
base = rng.standard_normal(1000)
post = base + 0.01 * rng.standard_normal(1000)
quant = np.round(post * 8) / 8
d = compute_delta(LayerPair("w", base, post), quant)
print("delta mse", mse(d), "weight mse", np.mean((quant - post) ** 2))
print("sign rate", sign_rate(d), "cosine", cos_sim(d))
