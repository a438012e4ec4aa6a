from .adam import AdamState
from .siren import (
    CheckpointFormatError,
    DomainScale,
    SirenModel,
    init_siren,
    load_checkpoint,
    save_checkpoint,
    scale_from_bounds,
)
from .tensor import NumericalFailure, Tensor, conv1d, maximum, minimum, smooth_l1

__all__ = [
    "AdamState",
    "CheckpointFormatError",
    "DomainScale",
    "NumericalFailure",
    "SirenModel",
    "Tensor",
    "conv1d",
    "init_siren",
    "load_checkpoint",
    "maximum",
    "minimum",
    "save_checkpoint",
    "scale_from_bounds",
    "smooth_l1",
]
