"""Coarse-to-fine search over a per-layer scale multiplier.

For each layer the absmax scale (``alpha = 1``) is scored first. A uniform
coarse grid over ``[alpha_min, alpha_max]`` follows, then a fine grid of
half-width ``delta`` around the best coarse point, clipped to the range. The
incumbent is replaced only on strict improvement, so among equal scores the
earliest candidate wins and ``alpha = 1`` survives total ties.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, ManifestError
from .metrics import LayerPair, MetricKind, evaluate, compute_delta
from .quantizer import Granularity, QuantizedLayer, default_scales, quant_dequant, quantize_store

STANDARD_RANGES = ((0.5, 2.0), (0.8, 1.25), (0.9, 1.11))


@dataclass(frozen=True)
class SearchConfig:
    alpha_min: float = 0.8
    alpha_max: float = 1.25
    n_coarse: int = 5
    n_fine: int = 10
    delta: float | None = None  # None -> one coarse step
    metric: MetricKind = MetricKind.SIGN_RATE
    granularity: Granularity = field(default_factory=Granularity.block)

    def __post_init__(self):
        object.__setattr__(self, "metric", MetricKind(self.metric))
        if not 0.0 < self.alpha_min <= 1.0 <= self.alpha_max:
            raise InvalidConfig(
                f"search range [{self.alpha_min}, {self.alpha_max}] must satisfy 0 < min <= 1 <= max"
            )
        if self.n_coarse < 2 or self.n_fine < 2:
            raise InvalidConfig("n_coarse and n_fine must both be >= 2")
        if self.delta is not None and not self.delta > 0:
            raise InvalidConfig(f"fine half-width delta must be positive, got {self.delta}")

    @property
    def fine_half_width(self) -> float:
        if self.delta is not None:
            return float(self.delta)
        return (self.alpha_max - self.alpha_min) / (self.n_coarse - 1)

    def describe(self) -> dict:
        return {
            "metric": self.metric.value,
            "granularity": str(self.granularity),
            "alpha_min": self.alpha_min,
            "alpha_max": self.alpha_max,
            "n_coarse": self.n_coarse,
            "n_fine": self.n_fine,
            "delta": self.fine_half_width,
        }


@dataclass
class SearchOutcome:
    name: str
    chosen_alpha: float
    best_metric: float
    baseline_metric: float
    trace: list[tuple[float, float]]
    zero_delta: bool = False


def linspace(lo: float, hi: float, n: int) -> list[float]:
    """``n`` evenly spaced points from ``lo`` to ``hi`` inclusive."""
    if lo > hi:
        raise InvalidConfig(f"linspace bounds reversed: {lo} > {hi}")
    if n < 1:
        raise InvalidConfig(f"linspace needs n >= 1, got {n}")
    return [float(a) for a in np.linspace(lo, hi, n)]


def _scorer(pair: LayerPair, config: SearchConfig):
    scales = default_scales(pair.w_post, config.granularity)

    def score(alpha: float) -> float:
        w_quant = quant_dequant(pair.w_post, scales, alpha)
        return evaluate(config.metric, compute_delta(pair, w_quant))

    return scales, score


def search_layer(pair: LayerPair, config: SearchConfig) -> tuple[SearchOutcome, QuantizedLayer]:
    scales, score = _scorer(pair, config)

    best_alpha = 1.0
    best = baseline = score(1.0)
    trace = [(1.0, baseline)]

    if not np.any(pair.delta()):
        outcome = SearchOutcome(pair.name, best_alpha, best, baseline, trace, zero_delta=True)
        return outcome, quantize_store(pair.w_post, scales, best_alpha, pair.name)

    for alpha in linspace(config.alpha_min, config.alpha_max, config.n_coarse):
        m = score(alpha)
        trace.append((alpha, m))
        if m > best:
            best_alpha, best = alpha, m

    half = config.fine_half_width
    lo = max(config.alpha_min, best_alpha - half)
    hi = min(config.alpha_max, best_alpha + half)
    for alpha in linspace(lo, hi, config.n_fine):
        m = score(alpha)
        trace.append((alpha, m))
        if m > best:
            best_alpha, best = alpha, m

    outcome = SearchOutcome(pair.name, best_alpha, best, baseline, trace)
    return outcome, quantize_store(pair.w_post, scales, best_alpha, pair.name)


def check_unique(names) -> None:
    seen = set()
    for name in names:
        if name in seen:
            raise ManifestError(f"duplicate layer name {name!r}")
        seen.add(name)


def default_workers() -> int:
    return os.cpu_count() or 1


def search_model(
    pairs: list[LayerPair], config: SearchConfig, workers: int | None = None
) -> list[tuple[SearchOutcome, QuantizedLayer]]:
    """Run :func:`search_layer` on every pair; output order follows input order.

    Layers are independent, so ``workers`` only affects wall-clock time.
    """
    check_unique(p.name for p in pairs)
    workers = workers or default_workers()
    if workers <= 1 or len(pairs) <= 1:
        return [search_layer(p, config) for p in pairs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda p: search_layer(p, config), pairs))
