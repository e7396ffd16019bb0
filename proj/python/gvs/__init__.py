"""Generator-versus-segmentor pseudo-healthy synthesis.

Thin re-export of the compiled module; see `_gvs` docstrings for the
operation signatures.
"""

from _gvs import (  # noqa: F401
    GvsError,
    adice,
    adv_fool_loss,
    counterfeit_meanfill,
    counterfeit_noisefill,
    dice_score,
    difference_aware_loss,
    difference_weight_map,
    enhance,
    generator_total,
    make_phantom,
    mpsnr,
    mssim,
    residual_loss,
    seg_ce_loss,
    synthesize,
    train_gvs,
)

__all__ = [
    "GvsError",
    "adice",
    "adv_fool_loss",
    "counterfeit_meanfill",
    "counterfeit_noisefill",
    "dice_score",
    "difference_aware_loss",
    "difference_weight_map",
    "enhance",
    "generator_total",
    "make_phantom",
    "mpsnr",
    "mssim",
    "residual_loss",
    "seg_ce_loss",
    "synthesize",
    "train_gvs",
]
