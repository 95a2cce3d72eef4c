"""Synthetic base/post benchmark comparing absmax scaling against each search objective."""

from __future__ import annotations

import json
from dataclasses import replace

import numpy as np

from .metrics import LayerPair, MetricKind, aggregate_stats, compute_delta, delta_stats
from .quantizer import Granularity, default_scales, quant_dequant
from .report import format_table
from .search import SearchConfig, search_model

BENCH_CONFIGS = {
    "absmax": None,
    "mse": MetricKind.NEG_MSE,
    "sign": MetricKind.SIGN_RATE,
    "cosine": MetricKind.COS_SIM,
}


def synthetic_pairs(seed: int, layers: int, rows: int, cols: int, delta_sigma: float) -> list[LayerPair]:
    """``base ~ N(0, 1)`` and ``post = base + N(0, delta_sigma^2)``, float32, per layer."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(layers):
        base = rng.standard_normal((rows, cols)).astype(np.float32)
        post = (base + delta_sigma * rng.standard_normal((rows, cols))).astype(np.float32)
        pairs.append(LayerPair(f"layers.{i}.weight", base, post))
    return pairs


def run_config(pairs: list[LayerPair], name: str, base_config: SearchConfig, workers: int = 1) -> dict:
    """One comparison row; ``absmax`` keeps alpha = 1 for every layer."""
    metric = BENCH_CONFIGS[name]
    if metric is None:
        alphas = [1.0] * len(pairs)
    else:
        results = search_model(pairs, replace(base_config, metric=metric), workers=workers)
        alphas = [outcome.chosen_alpha for outcome, _ in results]

    stats = []
    for pair, alpha in zip(pairs, alphas):
        scales = default_scales(pair.w_post, base_config.granularity)
        stats.append(delta_stats(compute_delta(pair, quant_dequant(pair.w_post, scales, alpha))))
    agg = aggregate_stats(stats)
    return {
        "config": name,
        "metric": None if metric is None else metric.value,
        "alphas": alphas,
        "delta_l2": agg["delta_l2"],
        "sign_rate": agg["sign_rate"],
        "cos_sim": agg["cos_sim"],
        "mse": agg["mse"],
        "sign_rate_layer_mean": agg["sign_rate_layer_mean"],
        "cos_sim_layer_mean": agg["cos_sim_layer_mean"],
    }


def run_benchmark(
    seed: int = 0,
    layers: int = 8,
    rows: int = 256,
    cols: int = 256,
    delta_sigma: float = 0.01,
    configs=("absmax", "mse", "sign", "cosine"),
    granularity: Granularity | None = None,
    alpha_range: tuple[float, float] = (0.8, 1.25),
    n_coarse: int = 5,
    n_fine: int = 10,
    workers: int = 1,
) -> dict:
    if rows < 1 or cols < 1 or layers < 1:
        raise ValueError("layers, rows and cols must be positive")
    if not delta_sigma > 0:
        raise ValueError("delta_sigma must be positive")
    unknown = [c for c in configs if c not in BENCH_CONFIGS]
    if unknown:
        raise ValueError(f"unknown bench config(s) {unknown}; choose from {list(BENCH_CONFIGS)}")
    granularity = granularity or Granularity.block()
    search = SearchConfig(alpha_range[0], alpha_range[1], n_coarse, n_fine, granularity=granularity)
    pairs = synthetic_pairs(seed, layers, rows, cols, delta_sigma)
    return {
        "config": {
            "seed": seed, "layers": layers, "rows": rows, "cols": cols,
            "delta_sigma": delta_sigma, "granularity": str(granularity),
            "alpha_min": alpha_range[0], "alpha_max": alpha_range[1],
            "n_coarse": n_coarse, "n_fine": n_fine,
        },
        "rows": [run_config(pairs, name, search, workers) for name in configs],
    }


def bench_table(result: dict) -> str:
    header = ["config", "dW L2", "SignRate (%)", "CosSim", "MSE"]
    rows = [
        [r["config"], f"{r['delta_l2']:.6g}", f"{100 * r['sign_rate']:.2f}%",
         f"{r['cos_sim']:.4f}", f"{r['mse']:.6e}"]
        for r in result["rows"]
    ]
    return format_table(header, rows)


def bench_json(result: dict) -> str:
    return json.dumps(result, indent=2)
