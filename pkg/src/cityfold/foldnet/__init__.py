from .autodiff import BranchTape, NumericError, Tensor, frozen_branches
from .network import (
    ArchSpec,
    DESK_ARCH,
    NetworkParams,
    TrainConfig,
    batch_loss,
    chamfer,
    decode,
    encode,
    knn_indices,
    loss_and_gradients,
)
from .train import (
    AdamState,
    CheckpointError,
    adam_step,
    checkpoint_load,
    checkpoint_save,
    train,
)

__all__ = [
    "AdamState",
    "ArchSpec",
    "BranchTape",
    "CheckpointError",
    "DESK_ARCH",
    "NetworkParams",
    "NumericError",
    "Tensor",
    "TrainConfig",
    "adam_step",
    "batch_loss",
    "chamfer",
    "checkpoint_load",
    "checkpoint_save",
    "decode",
    "encode",
    "frozen_branches",
    "knn_indices",
    "loss_and_gradients",
    "train",
]
