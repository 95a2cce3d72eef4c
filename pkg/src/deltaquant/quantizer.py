"""Group-wise FP8 scales and the scale-parameterized quantize/dequantize operator.

A tensor is split into quantization groups (whole tensor, one per output row,
or rectangular 2-D tiles). Each group ``g`` gets an absmax scale
``s0[g] = max|w_g| / 448``; a layer-wide multiplier ``alpha`` then stretches
every group scale uniformly.

The stored form is ``(codes, scale_inv)`` with ``scale_inv = 1 / (alpha * s0)``
kept in float32. Dequantization is always ``decode(codes) / scale_inv``, and
:func:`quant_dequant` goes through exactly that path, so a reloaded checkpoint
reproduces search-time tensors bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import fp8
from .errors import InvalidConfig, InvalidValue, ShapeError

DEFAULT_BLOCK = 128


class GranularityKind(str, Enum):
    PER_TENSOR = "tensor"
    PER_CHANNEL = "channel"
    BLOCK = "block"


@dataclass(frozen=True)
class Granularity:
    kind: GranularityKind = GranularityKind.BLOCK
    block_rows: int = DEFAULT_BLOCK
    block_cols: int = DEFAULT_BLOCK

    def __post_init__(self):
        object.__setattr__(self, "kind", GranularityKind(self.kind))
        if self.kind is GranularityKind.BLOCK and (self.block_rows < 1 or self.block_cols < 1):
            raise InvalidConfig("block dimensions must be positive")

    @classmethod
    def per_tensor(cls) -> Granularity:
        return cls(GranularityKind.PER_TENSOR)

    @classmethod
    def per_channel(cls) -> Granularity:
        return cls(GranularityKind.PER_CHANNEL)

    @classmethod
    def block(cls, rows: int = DEFAULT_BLOCK, cols: int = DEFAULT_BLOCK) -> Granularity:
        return cls(GranularityKind.BLOCK, rows, cols)

    @classmethod
    def parse(cls, text: str) -> Granularity:
        """Parse ``tensor``, ``channel``, ``block`` or ``block:RxC``."""
        head, _, tail = text.strip().lower().partition(":")
        if head in ("tensor", "per-tensor"):
            return cls.per_tensor()
        if head in ("channel", "per-channel"):
            return cls.per_channel()
        if head == "block":
            if not tail:
                return cls.block()
            try:
                rows, cols = (int(p) for p in tail.split("x"))
            except ValueError:
                raise InvalidConfig(f"bad block size {tail!r}, expected RxC") from None
            return cls.block(rows, cols)
        raise InvalidConfig(f"unknown granularity {text!r}")

    def __str__(self) -> str:
        if self.kind is GranularityKind.BLOCK:
            return f"block:{self.block_rows}x{self.block_cols}"
        return self.kind.value

    def check_shape(self, shape: tuple[int, ...]) -> None:
        if self.kind is GranularityKind.BLOCK and len(shape) != 2:
            raise ShapeError(f"block granularity needs a 2-D tensor, got shape {list(shape)}")
        if self.kind is GranularityKind.PER_CHANNEL and len(shape) < 1:
            raise ShapeError("per-channel granularity needs a tensor of rank >= 1")

    def grid_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        """Shape of the scale tensor for a weight of ``shape``."""
        shape = tuple(shape)
        self.check_shape(shape)
        if self.kind is GranularityKind.PER_TENSOR:
            return (1,)
        if self.kind is GranularityKind.PER_CHANNEL:
            return (shape[0],) + (1,) * (len(shape) - 1)
        return (math.ceil(shape[0] / self.block_rows), math.ceil(shape[1] / self.block_cols))


@dataclass
class ScaleGrid:
    """Default absmax scales, one per group, laid out on the group grid."""

    granularity: Granularity
    scales: np.ndarray
    zero: np.ndarray  # bool, True where the group's absmax is 0

    @property
    def n_groups(self) -> int:
        return int(self.scales.size)


@dataclass
class QuantizedLayer:
    name: str
    codes: np.ndarray  # uint8, same shape as the source tensor
    scale_inv: np.ndarray  # float32, group-grid shape
    granularity: Granularity
    chosen_alpha: float = 1.0

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.codes.shape)

    def dequantize(self) -> np.ndarray:
        return dequantize(self.codes, self.scale_inv, self.granularity)


def partition_groups(shape, granularity: Granularity) -> np.ndarray:
    """Group index of every element, as an int array of ``shape``.

    Groups are numbered in row-major order over the group grid.
    """
    shape = tuple(int(d) for d in shape)
    grid = granularity.grid_shape(shape)
    ids = np.arange(int(np.prod(grid)), dtype=np.int64).reshape(grid)
    return expand(ids, shape, granularity)


def expand(grid_values: np.ndarray, shape, granularity: Granularity) -> np.ndarray:
    """Broadcast per-group values out to one value per element."""
    shape = tuple(shape)
    grid_values = np.asarray(grid_values)
    if grid_values.shape != granularity.grid_shape(shape):
        raise ShapeError(
            f"scale grid shape {list(grid_values.shape)} does not match "
            f"{granularity} on tensor shape {list(shape)}"
        )
    if granularity.kind is GranularityKind.PER_TENSOR:
        return np.broadcast_to(grid_values.reshape(()), shape)
    if granularity.kind is GranularityKind.PER_CHANNEL:
        return np.broadcast_to(grid_values, shape)
    rows, cols = shape
    out = np.repeat(grid_values, granularity.block_rows, axis=0)
    out = np.repeat(out, granularity.block_cols, axis=1)
    return out[:rows, :cols]


def _group_absmax(w: np.ndarray, granularity: Granularity) -> np.ndarray:
    a = np.abs(w)
    if granularity.kind is GranularityKind.PER_TENSOR:
        return np.array([a.max() if a.size else 0.0])
    if granularity.kind is GranularityKind.PER_CHANNEL:
        if w.ndim == 1:
            return a.copy()
        if a.size == 0:
            return np.zeros(granularity.grid_shape(w.shape))
        return a.max(axis=tuple(range(1, w.ndim)), keepdims=True)
    br, bc = granularity.block_rows, granularity.block_cols
    gr, gc = granularity.grid_shape(w.shape)
    padded = np.zeros((gr * br, gc * bc), dtype=a.dtype)
    padded[: w.shape[0], : w.shape[1]] = a
    return padded.reshape(gr, br, gc, bc).max(axis=(1, 3))


def _as_weights(w) -> np.ndarray:
    w = np.asarray(w)
    if w.dtype != np.float32:
        w = w.astype(np.float32)
    if not np.all(np.isfinite(w)):
        raise InvalidValue("weight tensor contains non-finite values")
    return w


def default_scales(w, granularity: Granularity, q_max: float = fp8.E4M3_MAX) -> ScaleGrid:
    """Absmax scale per group: ``max|w_g| / q_max``; all-zero groups get scale 1."""
    w = _as_weights(w)
    granularity.check_shape(w.shape)
    absmax = _group_absmax(w, granularity).astype(np.float64)
    zero = absmax == 0.0
    scales = np.where(zero, 1.0, absmax / q_max)
    return ScaleGrid(granularity, scales, zero)


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not alpha > 0.0 or not math.isfinite(alpha):
        raise InvalidConfig(f"alpha must be a positive finite number, got {alpha}")
    return alpha


def scale_inverse(scales: ScaleGrid, alpha: float) -> np.ndarray:
    """Stored inverse scales ``1 / (alpha * s0)`` as float32; zero groups store 1."""
    alpha = _check_alpha(alpha)
    inv = np.where(scales.zero, 1.0, 1.0 / (alpha * scales.scales))
    return inv.astype(np.float32)


def dequantize(codes: np.ndarray, scale_inv: np.ndarray, granularity: Granularity) -> np.ndarray:
    """``decode(codes) / scale_inv`` per group, rounded once to float32."""
    codes = np.asarray(codes, dtype=np.uint8)
    inv = expand(np.asarray(scale_inv, dtype=np.float32), codes.shape, granularity)
    return (fp8.decode(codes) / inv.astype(np.float64)).astype(np.float32)


def _encode_groups(w: np.ndarray, scales: ScaleGrid, scale_inv: np.ndarray) -> np.ndarray:
    inv = expand(scale_inv, w.shape, scales.granularity).astype(np.float64)
    codes = np.asarray(fp8.encode(w.astype(np.float64) * inv), dtype=np.uint8).reshape(w.shape)
    if scales.zero.any():
        codes[expand(scales.zero, w.shape, scales.granularity)] = 0
    return codes


def quantize_store(w, scales: ScaleGrid, alpha: float, name: str = "") -> QuantizedLayer:
    """Quantize ``w`` at scale ``alpha * s0`` into E4M3 codes plus inverse scales."""
    w = _as_weights(w)
    scale_inv = scale_inverse(scales, alpha)
    codes = _encode_groups(w, scales, scale_inv)
    return QuantizedLayer(name, codes, scale_inv, scales.granularity, float(alpha))


def quant_dequant(w, scales: ScaleGrid, alpha: float) -> np.ndarray:
    """Fake-quantize ``w``: the float32 tensor an FP8 kernel would effectively see."""
    return quantize_store(w, scales, alpha).dequantize()
