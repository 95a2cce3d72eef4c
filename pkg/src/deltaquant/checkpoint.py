"""Reading and writing checkpoints in the safetensors container layout.

File layout: an 8-byte little-endian header length ``N``, ``N`` bytes of JSON
mapping tensor names to ``{"dtype", "shape", "data_offsets"}`` (offsets are
relative to the payload start), then the packed payload. Multi-shard
checkpoints add a JSON index with a ``weight_map`` from tensor name to shard
file name.

Headers are parsed and validated eagerly; payloads are read on demand.
"""

from __future__ import annotations

import fnmatch
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import FormatError, IoError, ManifestError, PairingError
from .metrics import LayerPair
from .quantizer import Granularity, GranularityKind, QuantizedLayer, dequantize

DTYPE_WIDTH = {
    "F64": 8, "F32": 4, "F16": 2, "BF16": 2, "F8_E4M3": 1, "F8_E5M2": 1,
    "I64": 8, "I32": 4, "I16": 2, "I8": 1, "U64": 8, "U32": 4, "U16": 2, "U8": 1, "BOOL": 1,
}
_NUMPY_DTYPE = {
    "F64": "<f8", "F32": "<f4", "F16": "<f2", "I64": "<i8", "I32": "<i4", "I16": "<i2",
    "I8": "i1", "U64": "<u8", "U32": "<u4", "U16": "<u2", "U8": "u1", "BOOL": "?",
    # raw views; BF16 is widened separately, F8 stays as codes
    "BF16": "<u2", "F8_E4M3": "u1", "F8_E5M2": "u1",
}
FLOAT_DTYPES = ("F32", "BF16", "F16", "F64")
SCALE_SUFFIX = ".scale_inv"
INDEX_SUFFIX = ".index.json"
_MAX_HEADER = 100 * 1024 * 1024


@dataclass(frozen=True)
class TensorInfo:
    name: str
    dtype: str
    shape: tuple[int, ...]
    data_offsets: tuple[int, int]
    path: Path
    data_start: int  # absolute file offset of the payload region

    @property
    def nbytes(self) -> int:
        return self.data_offsets[1] - self.data_offsets[0]

    @property
    def numel(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


@dataclass
class CheckpointManifest:
    entries: dict[str, TensorInfo]
    source: Path
    metadata: dict[str, str] = field(default_factory=dict)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class RawTensor:
    """A tensor as stored: dtype tag, shape and little-endian payload bytes."""

    dtype: str
    shape: tuple[int, ...]
    data: bytes

    @classmethod
    def from_array(cls, array: np.ndarray, dtype: str | None = None) -> RawTensor:
        array = np.asarray(array)
        if dtype is None:
            dtype = _dtype_tag(array.dtype)
        if dtype == "BF16":
            payload = bf16_bytes(array)
        else:
            payload = np.ascontiguousarray(array, dtype=np.dtype(_NUMPY_DTYPE[dtype])).tobytes()
        return cls(dtype, tuple(int(d) for d in array.shape), payload)


def _dtype_tag(dt: np.dtype) -> str:
    for tag, code in _NUMPY_DTYPE.items():
        if tag in ("BF16", "F8_E4M3", "F8_E5M2"):
            continue
        if np.dtype(code) == dt.newbyteorder("<") or np.dtype(code) == dt:
            return tag
    raise FormatError(f"no container dtype for numpy dtype {dt}")


def bf16_bytes(array) -> bytes:
    """Round float32 values to bfloat16 (nearest, ties to even) and pack them."""
    bits = np.ascontiguousarray(array, dtype="<f4").view("<u4").astype(np.uint64)
    rounded = (bits + 0x7FFF + ((bits >> 16) & 1)) >> 16
    nan = np.isnan(np.asarray(array, dtype=np.float32))
    rounded = np.where(nan, 0x7FC0, rounded)
    return rounded.astype("<u2").tobytes()


def bf16_to_f32(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.uint32) << 16).view(np.float32)


# ---------------------------------------------------------------------------
# reading
# ---------------------------------------------------------------------------


def _read_header(path: Path) -> tuple[dict[str, TensorInfo], dict[str, str]]:
    try:
        size = path.stat().st_size
        with open(path, "rb") as f:
            prefix = f.read(8)
            if len(prefix) < 8:
                raise FormatError(f"{path}: file shorter than the 8-byte header prefix")
            (n,) = struct.unpack("<Q", prefix)
            if n > _MAX_HEADER or 8 + n > size:
                raise FormatError(f"{path}: header length {n} exceeds file size {size}")
            raw = f.read(n)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: header is not valid JSON ({e})") from None
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header must be a JSON object")

    metadata = header.pop("__metadata__", None) or {}
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise FormatError(f"{path}: __metadata__ must map strings to strings")

    data_start = 8 + n
    payload = size - data_start
    entries: dict[str, TensorInfo] = {}
    for name, entry in header.items():
        try:
            dtype = entry["dtype"]
            shape = tuple(int(d) for d in entry["shape"])
            begin, end = (int(o) for o in entry["data_offsets"])
        except (KeyError, TypeError, ValueError):
            raise FormatError("malformed header entry", name) from None
        if dtype not in DTYPE_WIDTH:
            raise FormatError(f"unsupported dtype {dtype!r}", name)
        if any(d < 0 for d in shape) or not 0 <= begin <= end:
            raise FormatError(f"invalid shape {list(shape)} or offsets {[begin, end]}", name)
        if end > payload:
            raise FormatError(f"payload truncated: needs byte {end}, file has {payload}", name)
        expected = int(np.prod(shape, dtype=np.int64)) * DTYPE_WIDTH[dtype]
        if end - begin != expected:
            raise FormatError(
                f"byte range {end - begin} does not match {dtype}{list(shape)} ({expected})", name
            )
        entries[name] = TensorInfo(name, dtype, shape, (begin, end), path, data_start)

    spans = sorted((e.data_offsets, e.name) for e in entries.values() if e.nbytes)
    for ((_, prev_end), _), ((begin, _), name) in zip(spans, spans[1:]):
        if begin < prev_end:
            raise FormatError("byte range overlaps another tensor", name)
    return entries, metadata


class Checkpoint:
    """A loaded checkpoint: eager manifest, lazy tensor payloads."""

    def __init__(self, manifest: CheckpointManifest):
        self.manifest = manifest

    def __contains__(self, name: str) -> bool:
        return name in self.manifest.entries

    def __iter__(self):
        return iter(self.manifest.entries)

    def __len__(self) -> int:
        return len(self.manifest.entries)

    @property
    def metadata(self) -> dict[str, str]:
        return self.manifest.metadata

    def info(self, name: str) -> TensorInfo:
        try:
            return self.manifest.entries[name]
        except KeyError:
            raise FormatError("tensor not in checkpoint", name) from None

    def raw(self, name: str) -> RawTensor:
        info = self.info(name)
        try:
            with open(info.path, "rb") as f:
                f.seek(info.data_start + info.data_offsets[0])
                data = f.read(info.nbytes)
        except OSError as e:
            raise IoError(f"cannot read {info.path}: {e}") from e
        if len(data) != info.nbytes:
            raise FormatError("payload truncated", name)
        return RawTensor(info.dtype, info.shape, data)

    def array(self, name: str) -> np.ndarray:
        """Tensor in its stored numeric type; BF16/F16 widen to float32, FP8 stays as codes."""
        raw = self.raw(name)
        out = np.frombuffer(raw.data, dtype=np.dtype(_NUMPY_DTYPE[raw.dtype])).reshape(raw.shape)
        if raw.dtype == "BF16":
            return bf16_to_f32(out)
        if raw.dtype == "F16":
            return out.astype(np.float32)
        return out

    def weights(self, name: str) -> np.ndarray:
        """Float32 weights; FP8 tensors are dequantized with their ``.scale_inv``."""
        info = self.info(name)
        if info.dtype == "F8_E4M3":
            return read_quantized_layer(self, name).dequantize()
        if info.dtype not in FLOAT_DTYPES:
            raise FormatError(f"{info.dtype} tensor is not a floating-point weight", name)
        return np.asarray(self.array(name), dtype=np.float32)


def load_checkpoint(path) -> Checkpoint:
    """Open a ``.safetensors`` file, a sharded ``*.index.json``, or a directory holding either."""
    path = Path(path)
    if path.is_dir():
        indexes = sorted(path.glob("*" + INDEX_SUFFIX))
        files = sorted(path.glob("*.safetensors"))
        if indexes:
            path = indexes[0]
        elif len(files) == 1:
            path = files[0]
        else:
            raise FormatError(f"{path}: expected one .safetensors file or an index in directory")
    if not path.exists():
        raise IoError(f"no such checkpoint: {path}")
    if path.name.endswith(".json"):
        return _load_sharded(path)
    entries, metadata = _read_header(path)
    return Checkpoint(CheckpointManifest(entries, path, metadata))


def _load_sharded(index_path: Path) -> Checkpoint:
    try:
        index = json.loads(index_path.read_text())
        weight_map = index["weight_map"]
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise FormatError(f"{index_path}: bad shard index ({e})") from None
    entries: dict[str, TensorInfo] = {}
    metadata: dict[str, str] = {}
    for shard in dict.fromkeys(weight_map.values()):
        shard_entries, shard_meta = _read_header(index_path.parent / shard)
        metadata.update(shard_meta)
        for name, info in shard_entries.items():
            if weight_map.get(name) == shard:
                entries[name] = info
    missing = [n for n in weight_map if n not in entries]
    if missing:
        raise FormatError("listed in index but absent from its shard", missing[0])
    ordered = {n: entries[n] for n in weight_map}
    return Checkpoint(CheckpointManifest(ordered, index_path, metadata))


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------


def _encode_file(tensors: Mapping[str, RawTensor], metadata: Mapping[str, str] | None) -> list[bytes]:
    header: dict = {}
    if metadata:
        header["__metadata__"] = {str(k): str(v) for k, v in metadata.items()}
    offset = 0
    for name, t in tensors.items():
        expected = int(np.prod(t.shape, dtype=np.int64)) * DTYPE_WIDTH[t.dtype]
        if len(t.data) != expected:
            raise FormatError(f"payload of {len(t.data)} bytes for {t.dtype}{list(t.shape)}", name)
        header[name] = {"dtype": t.dtype, "shape": list(t.shape), "data_offsets": [offset, offset + len(t.data)]}
        offset += len(t.data)
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    blob += b" " * (-len(blob) % 8)
    return [struct.pack("<Q", len(blob)), blob, *(t.data for t in tensors.values())]


def _atomic_write(path: Path, chunks: Iterable[bytes]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            for chunk in chunks:
                f.write(chunk)
        os.replace(tmp, path)
    except OSError as e:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoError(f"cannot write {path}: {e}") from e
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(
    tensors: Mapping[str, RawTensor | np.ndarray],
    path,
    metadata: Mapping[str, str] | None = None,
    max_shard_bytes: int | None = None,
) -> Path:
    """Write tensors (insertion order kept) and return the path to load from.

    With ``max_shard_bytes`` the payload is split across
    ``<stem>-0000i-of-0000n.safetensors`` files plus ``<path>.index.json``,
    which is the returned path. Every file is written to a temporary name and
    renamed into place.
    """
    path = Path(path)
    raw = {n: t if isinstance(t, RawTensor) else RawTensor.from_array(t) for n, t in tensors.items()}
    if max_shard_bytes is None:
        _atomic_write(path, _encode_file(raw, metadata))
        return path

    shards: list[dict[str, RawTensor]] = [{}]
    used = 0
    for name, t in raw.items():
        if shards[-1] and used + len(t.data) > max_shard_bytes:
            shards.append({})
            used = 0
        shards[-1][name] = t
        used += len(t.data)
    stem = path.name[: -len(".safetensors")] if path.name.endswith(".safetensors") else path.name
    weight_map = {}
    for i, shard in enumerate(shards, 1):
        shard_name = f"{stem}-{i:05d}-of-{len(shards):05d}.safetensors"
        _atomic_write(path.parent / shard_name, _encode_file(shard, metadata))
        weight_map.update(dict.fromkeys(shard, shard_name))
    index = {"metadata": {"total_size": sum(len(t.data) for t in raw.values())}, "weight_map": weight_map}
    index_path = path.parent / (path.name + INDEX_SUFFIX)
    _atomic_write(index_path, [json.dumps(index, indent=2).encode("utf-8")])
    return index_path


def write_quantized_checkpoint(
    layers: list[QuantizedLayer],
    passthrough: list[tuple[str, RawTensor | np.ndarray]],
    path,
    metadata: Mapping[str, str] | None = None,
    max_shard_bytes: int | None = None,
) -> Path:
    """Store each layer as ``<name>`` (F8_E4M3 codes) plus ``<name>.scale_inv`` (F32).

    Granularity and chosen alpha go into the header metadata so the file can be
    dequantized without outside knowledge.
    """
    tensors: dict[str, RawTensor | np.ndarray] = {}
    meta = {"format": "fp8_e4m3", **(metadata or {})}

    def put(name, value):
        if name in tensors:
            raise ManifestError(f"tensor name collision: {name!r}")
        tensors[name] = value

    for layer in layers:
        put(layer.name, RawTensor.from_array(layer.codes, "F8_E4M3"))
        put(layer.name + SCALE_SUFFIX, RawTensor.from_array(layer.scale_inv, "F32"))
        meta[f"{layer.name}.granularity"] = str(layer.granularity)
        meta[f"{layer.name}.alpha"] = repr(float(layer.chosen_alpha))
    for name, t in passthrough:
        put(name, t)
    return save_checkpoint(tensors, path, meta, max_shard_bytes)


def _infer_granularity(shape: tuple[int, ...], grid: tuple[int, ...]) -> Granularity:
    if grid in ((1,), ()) and shape != (1,):
        return Granularity.per_tensor()
    if len(shape) >= 1 and grid == (shape[0],) + (1,) * (len(shape) - 1):
        return Granularity.per_channel()
    if len(shape) == 2 and len(grid) == 2:
        for size in (128, 64, 32, 256):
            g = Granularity.block(size, size)
            if g.grid_shape(shape) == grid:
                return g
    raise FormatError(f"cannot infer granularity of scale grid {list(grid)} for shape {list(shape)}")


def read_quantized_layer(ckpt: Checkpoint, name: str) -> QuantizedLayer:
    info = ckpt.info(name)
    if info.dtype != "F8_E4M3":
        raise FormatError(f"expected F8_E4M3 codes, found {info.dtype}", name)
    scale_name = name + SCALE_SUFFIX
    if scale_name not in ckpt:
        raise FormatError(f"FP8 tensor has no {SCALE_SUFFIX} companion", name)
    scale_inv = np.asarray(ckpt.array(scale_name), dtype=np.float32)
    gran_text = ckpt.metadata.get(f"{name}.granularity")
    if gran_text is not None:
        gran = Granularity.parse(gran_text)
    else:
        gran = _infer_granularity(info.shape, tuple(scale_inv.shape))
    if gran.grid_shape(info.shape) != scale_inv.shape:
        raise FormatError(f"scale_inv shape {list(scale_inv.shape)} does not fit {gran}", name)
    alpha = float(ckpt.metadata.get(f"{name}.alpha", "nan"))
    return QuantizedLayer(name, np.array(ckpt.array(name)), scale_inv, gran, alpha)


# ---------------------------------------------------------------------------
# pairing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantPolicy:
    """Which post-checkpoint tensors get quantized; everything else is copied as-is.

    A tensor is quantized when it has a floating-point dtype, rank >= ``min_rank``,
    at least ``min_elements`` elements, matches one ``include`` glob and no
    ``exclude`` glob. Embeddings are excluded by default.
    """

    include: tuple[str, ...] = ("*",)
    exclude: tuple[str, ...] = ("*embed*",)
    min_rank: int = 2
    min_elements: int = 4096

    def __post_init__(self):
        if self.min_rank < 1:
            raise ValueError("min_rank must be >= 1")
        object.__setattr__(self, "include", tuple(self.include))
        object.__setattr__(self, "exclude", tuple(self.exclude))

    def selects(self, info: TensorInfo) -> bool:
        if info.dtype not in FLOAT_DTYPES or info.name.endswith(SCALE_SUFFIX):
            return False
        if len(info.shape) < self.min_rank or info.numel < self.min_elements:
            return False
        if not any(fnmatch.fnmatchcase(info.name, p) for p in self.include):
            return False
        return not any(fnmatch.fnmatchcase(info.name, p) for p in self.exclude)


def pair_layers(
    base: Checkpoint, post: Checkpoint, policy: QuantPolicy = QuantPolicy()
) -> tuple[list[LayerPair], list[str]]:
    """Split the post checkpoint into quantizable (base, post) pairs and passthrough names.

    Tensors only in ``base`` are ignored.

    Raises:
        PairingError: a shared name has different shapes, or a tensor the
            policy would quantize has no counterpart in ``base``.
    """
    pairs, passthrough = [], []
    for name in post:
        info = post.info(name)
        if name in base and base.info(name).shape != info.shape:
            raise PairingError(
                f"shape mismatch: base {list(base.info(name).shape)} vs post {list(info.shape)}", name
            )
        if not policy.selects(info):
            passthrough.append(name)
            continue
        if name not in base:
            raise PairingError("quantizable tensor missing from base checkpoint", name)
        pairs.append(LayerPair(name, base.weights(name), post.weights(name)))
    return pairs, passthrough
