"""Delta-aware objectives over a (post-training delta, quantized delta) pair.

All reductions run in float64 regardless of the input dtype. Every objective is
oriented so that larger is better; MSE enters the search as its negation.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeError


class MetricKind(str, Enum):
    NEG_MSE = "mse"
    SIGN_RATE = "sign"
    COS_SIM = "cos"

    @classmethod
    def parse(cls, text: str) -> MetricKind:
        aliases = {"mse": cls.NEG_MSE, "neg_mse": cls.NEG_MSE, "sign": cls.SIGN_RATE,
                   "signrate": cls.SIGN_RATE, "cos": cls.COS_SIM, "cosine": cls.COS_SIM,
                   "cossim": cls.COS_SIM}
        try:
            return aliases[text.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown metric {text!r}; choose mse, sign or cosine") from None


@dataclass
class LayerPair:
    name: str
    w_base: np.ndarray
    w_post: np.ndarray

    def __post_init__(self):
        if np.shape(self.w_base) != np.shape(self.w_post):
            raise ShapeError(
                f"{self.name}: base shape {list(np.shape(self.w_base))} != "
                f"post shape {list(np.shape(self.w_post))}"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(np.shape(self.w_post))

    def delta(self) -> np.ndarray:
        return np.asarray(self.w_post, np.float64) - np.asarray(self.w_base, np.float64)


@dataclass
class DeltaPair:
    d_post: np.ndarray
    d_quant: np.ndarray


def compute_delta(pair: LayerPair, w_quant) -> DeltaPair:
    """Both deltas against ``pair.w_base``, in float64."""
    if np.shape(w_quant) != pair.shape:
        raise ShapeError(
            f"{pair.name}: quantized shape {list(np.shape(w_quant))} != {list(pair.shape)}"
        )
    base = np.asarray(pair.w_base, np.float64)
    return DeltaPair(
        np.asarray(pair.w_post, np.float64) - base,
        np.asarray(w_quant, np.float64) - base,
    )


def _diff(d: DeltaPair) -> np.ndarray:
    return np.ravel(d.d_quant) - np.ravel(d.d_post)


def mse(d: DeltaPair) -> float:
    diff = _diff(d)
    if diff.size == 0:
        return 0.0
    return float(np.dot(diff, diff) / diff.size)


def delta_l2(d: DeltaPair) -> float:
    diff = _diff(d)
    return float(np.sqrt(np.dot(diff, diff)))


def sign_rate(d: DeltaPair) -> float:
    """Fraction of positions where the delta keeps its sign, with sign(0) = 0."""
    post = np.sign(np.ravel(d.d_post))
    if post.size == 0:
        return 1.0
    return float(np.count_nonzero(post == np.sign(np.ravel(d.d_quant))) / post.size)


def _cos_from_parts(dot: float, norm_post: float, norm_quant: float) -> float:
    if norm_post == 0.0 and norm_quant == 0.0:
        return 1.0
    if norm_post == 0.0 or norm_quant == 0.0:
        return 0.0
    return float(np.clip(dot / (norm_post * norm_quant), -1.0, 1.0))


def cos_sim(d: DeltaPair) -> float:
    """Cosine between flattened deltas; 1 if both are zero, 0 if exactly one is."""
    p, q = np.ravel(d.d_post), np.ravel(d.d_quant)
    return _cos_from_parts(float(np.dot(p, q)), float(np.linalg.norm(p)), float(np.linalg.norm(q)))


def evaluate(metric: MetricKind, d: DeltaPair) -> float:
    metric = MetricKind(metric)
    if metric is MetricKind.NEG_MSE:
        return -mse(d)
    if metric is MetricKind.SIGN_RATE:
        return sign_rate(d)
    return cos_sim(d)


@dataclass
class DeltaStats:
    """Everything the reports need about one layer's deltas.

    ``post_norm``/``quant_norm`` are kept so model-level cosine over the
    concatenated deltas can be rebuilt from per-layer rows.
    """

    elements: int
    sign_rate: float
    cos_sim: float
    mse: float
    delta_l2: float
    post_norm: float
    quant_norm: float


def delta_stats(d: DeltaPair) -> DeltaStats:
    p, q = np.ravel(d.d_post), np.ravel(d.d_quant)
    return DeltaStats(
        elements=int(p.size),
        sign_rate=sign_rate(d),
        cos_sim=cos_sim(d),
        mse=mse(d),
        delta_l2=delta_l2(d),
        post_norm=float(np.linalg.norm(p)),
        quant_norm=float(np.linalg.norm(q)),
    )


def aggregate_stats(rows: list[DeltaStats]) -> dict[str, float]:
    """Model-level numbers from per-layer stats.

    ``sign_rate`` and ``cos_sim`` are computed over all layers concatenated
    (sign rate is therefore size-weighted); the ``*_layer_mean`` variants are
    plain unweighted means over layers.
    """
    n = sum(r.elements for r in rows)
    if not rows:
        return {"elements": 0, "sign_rate": 1.0, "sign_rate_layer_mean": 1.0, "cos_sim": 1.0,
                "cos_sim_layer_mean": 1.0, "mse": 0.0, "delta_l2": 0.0}
    sq = sum(r.delta_l2**2 for r in rows)
    dot = sum(r.cos_sim * r.post_norm * r.quant_norm for r in rows)
    post_norm = float(np.sqrt(sum(r.post_norm**2 for r in rows)))
    quant_norm = float(np.sqrt(sum(r.quant_norm**2 for r in rows)))
    return {
        "elements": n,
        "sign_rate": sum(r.sign_rate * r.elements for r in rows) / n if n else 1.0,
        "sign_rate_layer_mean": float(np.mean([r.sign_rate for r in rows])),
        "cos_sim": _cos_from_parts(dot, post_norm, quant_norm),
        "cos_sim_layer_mean": float(np.mean([r.cos_sim for r in rows])),
        "mse": sq / n if n else 0.0,
        "delta_l2": float(np.sqrt(sq)),
    }
