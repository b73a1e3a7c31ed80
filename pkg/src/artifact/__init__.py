"""Layerwise training of residual networks on hierarchical targets, with the
Hermite, random-features and threshold-polynomial tools behind it."""

__version__ = "0.1.0"

from .hermite import make_activation, kernel_analytic, kernel_mc, beta_threshold, delta_bound  # noqa: E402
from .ptf import SparsePoly, PtfClaim, ptf_check, multilinear_extension  # noqa: E402
from .hierarchy import gen_junta_hierarchy, gen_braindump, sample_dataset  # noqa: E402
from .resnet import init_network, forward  # noqa: E402
from .train import LossParams, TrainConfig, train_all, train_layer  # noqa: E402
