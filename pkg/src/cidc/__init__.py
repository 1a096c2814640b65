"""Channel-independent directional temporal convolutions, from primitives to a
trainable multi-scale video network, with analytic gradients throughout."""
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    ClipRecord,
    gen_synthetic_clip,
    make_dataset,
    read_clip_file,
    square_centers,
    write_clip_file,
)
from .errors import ArgumentError, DegenerateMaskError, DimensionError, DivergenceError
from .network import (
    FUSION_MODES,
    TEMPORAL_MODES,
    Model,
    attention_propagate,
    backbone_forward,
    build_model,
    cross_scale_aggregate,
    fuse,
    multiscale_cidc_forward,
    spatial_attention_map,
)
from .ops import (
    DualResult,
    GradCheckReport,
    grad_check,
    masked_softmax_rows,
    softmax_cross_entropy,
)
from .tensor import Tensor, bilinear_resize_2d, flip_axis, tensor_create
# The training entry point stays at cidc.train.train: re-exporting a name
# that matches its own submodule would shadow the module object.
from .train import (
    TrainConfig,
    TrainResult,
    ablate_directions,
    ablation_table,
    evaluate,
    history_csv,
    sgd_step,
)
from .unit import (
    CIDCParams,
    bidirectional_cidc,
    build_directional_mask,
    cidc_apply,
    cidc_unit_forward,
    init_unit_params,
    normalize_kernel,
    zero_mask,
)

__version__ = "0.1.0"

__all__ = [
    "ArgumentError",
    "CIDCParams",
    "ClipRecord",
    "DegenerateMaskError",
    "DimensionError",
    "DivergenceError",
    "DualResult",
    "FUSION_MODES",
    "GradCheckReport",
    "Model",
    "TEMPORAL_MODES",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "ablate_directions",
    "ablation_table",
    "attention_propagate",
    "backbone_forward",
    "bidirectional_cidc",
    "bilinear_resize_2d",
    "build_directional_mask",
    "build_model",
    "cidc_apply",
    "cidc_unit_forward",
    "cross_scale_aggregate",
    "evaluate",
    "flip_axis",
    "fuse",
    "gen_synthetic_clip",
    "grad_check",
    "history_csv",
    "init_unit_params",
    "load_checkpoint",
    "make_dataset",
    "masked_softmax_rows",
    "multiscale_cidc_forward",
    "normalize_kernel",
    "read_clip_file",
    "save_checkpoint",
    "sgd_step",
    "softmax_cross_entropy",
    "spatial_attention_map",
    "square_centers",
    "tensor_create",
    "write_clip_file",
    "zero_mask",
]
