"""Batch-free streaming normalization, reference normalizers, and experiments."""

from .emulation import EmulationState, VarianceEmulationState, batched_mean, batched_variance
from .net import (
    DivergenceError,
    MetricsRecord,
    TrainConfig,
    scale_hyperparams,
    sgd_momentum_step,
    train,
)
from .config import ConfigError, parse_config, serialize_config
from .datasets import Dataset, DatasetSpec, generate_dataset
from .online import (
    AffineParams,
    ForwardCache,
    InterleaveError,
    OnlineNorm,
    OnlineNormState,
    affine_backward,
    affine_forward,
    backward_sample,
    forward_inference,
    forward_sample,
    layer_scale_backward,
    layer_scale_forward,
    load_state,
    save_state,
)
from .reference import (
    BatchNorm,
    DegenerateBatchError,
    LayerNorm,
    exact_backward,
    exact_normalize,
    jacobian_dense,
    layer_norm_backward,
    layer_norm_forward,
)
from .tensor import (
    SIGMA_FLOOR,
    FeatureMap,
    ShapeError,
    add,
    dot,
    feature_mean,
    feature_var,
    l2_norm,
    make_rng,
    matmul,
    relu,
    relu_backward,
    scale,
)

__version__ = "0.1.0"
