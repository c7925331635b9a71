"""Python bindings for the ddspseg C++ core.

Volumes are numpy arrays indexed [z, y, x]; spacings are (x, y, z) in mm.
"""

from ._core import (
    ConfigError,
    FormatError,
    config_keys,
    dsc_loss,
    dsc_loss_nosquare,
    evaluate,
    gradcheck,
    jaccard_loss,
    kl_divergence,
    read_volume,
    reweighted_ce_loss,
    synth_case,
    train,
    tv_distance,
    write_vvf,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "config_keys",
    "dsc_loss",
    "dsc_loss_nosquare",
    "evaluate",
    "gradcheck",
    "jaccard_loss",
    "kl_divergence",
    "read_volume",
    "reweighted_ce_loss",
    "synth_case",
    "train",
    "tv_distance",
    "write_vvf",
]
