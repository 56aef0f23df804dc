"""Lightweight multipath bidirectional-skip vessel segmentation.

Thin python surface over the C++ core: network construction and inference,
parameter accounting, dice loss, and segmentation metrics.
"""

try:
    from ._lmbis import (
        Network,
        binarize,
        count_parameters,
        dice_loss,
        metrics,
        softmax_channels,
    )
except ImportError:  # running against an in-tree build on PYTHONPATH
    from _lmbis import (
        Network,
        binarize,
        count_parameters,
        dice_loss,
        metrics,
        softmax_channels,
    )

__all__ = [
    "Network",
    "binarize",
    "count_parameters",
    "dice_loss",
    "metrics",
    "softmax_channels",
]
