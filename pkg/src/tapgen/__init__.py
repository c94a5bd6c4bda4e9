"""tapgen: temporal action proposal generation from two-stream video features.

A feature sequence goes through a dual-stream temporal-convolution backbone,
a differentiable proposal feature sampler, and two map heads that score every
(start, end) cell of the L x L grid for boundary plausibility and action
completeness.  Training, post-processing (score fusion + Soft-NMS), and
average-recall evaluation are included, along with a small reverse-mode
autodiff core the network is built on.
"""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, finite_difference_check  # noqa: F401
from .model import ModelConfig, init_parameters, full_forward  # noqa: F401
