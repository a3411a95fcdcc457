"""Small dense-array autodiff core used by the networks and losses."""

from .core import DtypeError, Function, Graph, GraphError, ShapeError, Tensor, as_tensor, backward, no_grad
from .gradcheck import gradcheck
from .ops import (
    add,
    add_const,
    concat,
    conv2d,
    conv_transpose2d,
    exp,
    l2_loss,
    mean,
    relu,
    scale,
    sum,
    sum_squares,
)
from .params import ParamStore, adam_step, load_checkpoint, save_checkpoint
from .serialize import ContainerError

__all__ = [
    "ContainerError",
    "DtypeError",
    "Function",
    "Graph",
    "GraphError",
    "ParamStore",
    "ShapeError",
    "Tensor",
    "adam_step",
    "add",
    "add_const",
    "as_tensor",
    "backward",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "exp",
    "gradcheck",
    "l2_loss",
    "load_checkpoint",
    "mean",
    "no_grad",
    "relu",
    "save_checkpoint",
    "scale",
    "sum",
    "sum_squares",
]
