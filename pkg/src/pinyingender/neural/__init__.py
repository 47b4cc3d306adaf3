"""Neural student/teacher models with hand-written reverse mode.

The hot encoder kernel lives behind :mod:`.backend`, which picks the
compiled extension when built and the numpy fallback otherwise.
"""

from .backend import BACKEND, available_backends
from .model import (
    ABLATION_VARIANTS,
    Batch,
    LossBreakdown,
    LossSwitches,
    encode,
    forward_student,
    forward_teacher,
    kl_divergence,
    log_softmax,
    run_batch,
    softmax,
)
from .params import EncoderParams, StudentModel, TeacherModel

__all__ = [
    "ABLATION_VARIANTS",
    "BACKEND",
    "Batch",
    "EncoderParams",
    "LossBreakdown",
    "LossSwitches",
    "StudentModel",
    "TeacherModel",
    "available_backends",
    "encode",
    "forward_student",
    "forward_teacher",
    "kl_divergence",
    "log_softmax",
    "run_batch",
    "softmax",
]
