"""Large-margin training mechanics: AAM-softmax, CLR, hard prototype mining."""

from .aam import (
    DEFAULT_SCALE,
    AamConfigError,
    AamHead,
    aam_grad,
    aam_loss,
    aam_loss_and_grad,
    similarity_matrix,
)
from .clr import ClrSchedule, clr_lr
from .hpm import (
    HardPrototypeSampler,
    HpmConfig,
    HpmConfigError,
    hpm_pass,
    most_similar,
    random_pass,
)
from .toy import (
    AblationKind,
    DivergenceError,
    SamplerKind,
    ToyExtractor,
    ToyModel,
    TrainPlan,
    TrainStage,
    load_toy_model,
    load_train_plan,
    save_toy_model,
    train_toy,
)

__all__ = [
    "DEFAULT_SCALE",
    "AamConfigError",
    "AamHead",
    "AblationKind",
    "ClrSchedule",
    "DivergenceError",
    "HardPrototypeSampler",
    "HpmConfig",
    "HpmConfigError",
    "SamplerKind",
    "ToyExtractor",
    "ToyModel",
    "TrainPlan",
    "TrainStage",
    "aam_grad",
    "aam_loss",
    "aam_loss_and_grad",
    "clr_lr",
    "hpm_pass",
    "load_toy_model",
    "load_train_plan",
    "most_similar",
    "random_pass",
    "save_toy_model",
    "similarity_matrix",
    "train_toy",
]
