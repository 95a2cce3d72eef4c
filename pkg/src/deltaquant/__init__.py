"""Delta-aware FP8 (E4M3) weight quantization.

Quantizes a post-trained checkpoint while keeping the post-training delta
``w_post - w_base`` pointing the same way, by searching a per-layer scale
multiplier against sign-agreement or cosine objectives (or plain MSE).
"""

from .checkpoint import (
    Checkpoint,
    QuantPolicy,
    RawTensor,
    load_checkpoint,
    pair_layers,
    save_checkpoint,
    write_quantized_checkpoint,
)
from .errors import (
    DeltaQuantError,
    FormatError,
    InvalidConfig,
    InvalidValue,
    IoError,
    ManifestError,
    PairingError,
    ShapeError,
)
from .fp8 import E4M3_MAX, decode, encode
from .metrics import (
    DeltaPair,
    LayerPair,
    MetricKind,
    compute_delta,
    cos_sim,
    delta_l2,
    evaluate,
    mse,
    sign_rate,
)
from .quantizer import (
    Granularity,
    QuantizedLayer,
    ScaleGrid,
    default_scales,
    dequantize,
    partition_groups,
    quant_dequant,
    quantize_store,
)
from .search import SearchConfig, SearchOutcome, linspace, search_layer, search_model

__version__ = "0.1.0"
