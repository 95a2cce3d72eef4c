"""
Comparing objectives on synthetic layers
========================================

Gaussian base weights with a small Gaussian update. The absmax row keeps
alpha = 1; the other rows search with one objective each and are then scored
on all of them.
"""

from deltaquant import Granularity
from deltaquant.bench import bench_table, run_benchmark

result = run_benchmark(seed=0, layers=8, rows=256, cols=256, delta_sigma=0.01,
                       granularity=Granularity.block(), alpha_range=(0.9, 1.11))
print(bench_table(result))

rows = {r["config"]: r for r in result["rows"]}
print("sign search alphas:", [round(a, 4) for a in rows["sign"]["alphas"]])
print("mse search alphas: ", [round(a, 4) for a in rows["mse"]["alphas"]])
