"""Dense float64 math with reverse-mode gradients, Adam and Kaiming init."""

from cian.numerics.autodiff import (
    SUPPORTED_OPS,
    GradRecord,
    Tensor,
    add,
    as_tensor,
    dot,
    exp,
    gradient_of,
    hinge,
    l2_normalize,
    linear,
    mean,
    mul,
    neg,
    opaque,
    reshape,
    softmax as softmax_t,
    take,
    tanh,
    tsum,
    value_and_grad,
)
from cian.numerics.gradcheck import finite_difference_check
from cian.numerics.init import kaiming_init
from cian.numerics.ops import cosine_similarity, linear_forward, softmax
from cian.numerics.optim import AdamState, adam_step

__all__ = [
    "SUPPORTED_OPS",
    "AdamState",
    "GradRecord",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "cosine_similarity",
    "dot",
    "exp",
    "finite_difference_check",
    "gradient_of",
    "hinge",
    "kaiming_init",
    "l2_normalize",
    "linear",
    "linear_forward",
    "mean",
    "mul",
    "neg",
    "opaque",
    "reshape",
    "softmax",
    "softmax_t",
    "take",
    "tanh",
    "tsum",
    "value_and_grad",
]
