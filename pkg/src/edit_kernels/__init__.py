"""Linear compressed attention (EDiT) and hybrid joint attention (MM-EDiT) kernels.

Forward-only float32 reference kernels with brute-force oracles, an analytic
FLOP model and a latency-scaling benchmark CLI.
"""

from .attention import (
    QKV,
    FeatureMapKind,
    SimilarityFn,
    apply_feature_map,
    generalized_attention,
    kv_compress,
    linear_attention,
    sdpa,
)
from .config import AttentionConfig
from .edit import (
    ConvFusionWeights,
    EditWeights,
    SpatialCompressorWeights,
    conv_fusion,
    edit_attention,
    edit_keys_values,
    spatial_compressor,
)
from .errors import (
    ConfigError,
    DegenerateAttentionError,
    MissingWeightError,
    ShapeError,
    WeightFormatError,
)
from .flops import flop_model
from .mmedit import (
    EtaMode,
    JointQKV,
    MultimodalTokens,
    eta,
    eta_lin,
    hybrid_attention,
    joint_attention_decomposed,
    joint_attention_direct,
)
from .tokens import ImageTokenGrid
from .weights import WeightStore

__version__ = "0.1.0"
