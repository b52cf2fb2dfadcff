"""Transform-domain dynamic soft-threshold denoising of feature maps."""
from .groupfc import DeGroFc, GroupFc, coefficients, degrofc_forward, group_fc_forward, offsets
from .pipeline import (
    TransDenoConfig,
    TransDenoParams,
    attention_map,
    init_params,
    pooled_spectrum,
    transdeno_forward,
    transdeno_forward_gated,
)
from .shrinkage import gate_to_threshold, soft, soft_map
from .spectral import dct2_forward, dct2_inverse, flatten, unflatten

__version__ = "0.1.0"
