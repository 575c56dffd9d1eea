"""Highway and Residual networks as unrolled iterative estimators."""

from .blocks import (
    BlockVariant,
    Network,
    NetworkSpec,
    StageSpec,
    backward,
    forward,
    forward_block,
    init_network,
    lesion,
    shuffle_stage,
)

__version__ = "0.1.0"
