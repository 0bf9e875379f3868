"""Latent heads and the causal refinement of deep representations.

Deep representations split into a stable factor (ELU head) shared across
domains and a variant factor (sigmoid head) in (0, 1) that acts as the
sampling scale. Cross-domain refinement keeps the stable factor bit-identical
on both sides and transports only the variant factor through the flow,
so with noise disabled both refined representations collapse to the stable
factor exactly.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import flow as flow_mod

__all__ = ["LatentFactors", "latent_heads", "reparameterize", "refine_pair",
           "VARIANT_EPS"]

# Keeps variant codes strictly inside (0, 1) so the logit wrapper stays finite.
VARIANT_EPS = 1e-12


@dataclass
class LatentFactors:
    """Stable and variant factors, plus the transported variant when present."""

    z_s: object
    z_v: object
    z_v_transformed: object = None
    direction: str = ""


def latent_heads(deep, w_s, b_s, w_v, b_v) -> LatentFactors:
    """Stable factor ELU(D W_s + b_s); variant factor Sigmoid(D W_v + b_v).

    The sigmoid output is nudged into [eps, 1-eps] so that downstream logit
    transforms and scale positivity hold even under saturation.
    """
    z_s = ad.elu(ad.add(ad.matmul(deep, w_s), b_s))
    z_v = ad.clip(ad.sigmoid(ad.add(ad.matmul(deep, w_v), b_v)),
                  VARIANT_EPS, 1.0 - VARIANT_EPS)
    return LatentFactors(z_s=z_s, z_v=z_v)


def reparameterize(z_s, scale, noise):
    """Refined representation z_s + scale * noise (noise = 0 in eval mode)."""
    if np.any(ad.detach(scale) <= 0):
        raise ValueError("reparameterize requires strictly positive scales")
    if noise is None:
        return z_s
    return ad.add(z_s, ad.mul(scale, noise))


def refine_pair(deep_src, params, latent_flow, direction: str,
                noise_src=None, noise_tgt=None, flow_bypass: bool = False):
    """Source-side latents, transported variant, and both refined deep reps.

    Returns ``(refined_src, refined_tgt, LatentFactors)``. The stable factor
    feeding both refined representations is the same tape node, which makes
    the minimal-change property an object identity rather than a numeric
    coincidence. ``flow_bypass`` short-circuits the transport to the
    identity (ablation use).
    """
    factors = latent_heads(deep_src, params["head_ws"], params["head_bs"],
                           params["head_wv"], params["head_bv"])
    if flow_bypass:
        z_v_t = factors.z_v
    else:
        transported, _ = flow_mod.flow_forward(latent_flow, params, factors.z_v)
        z_v_t = ad.clip(transported, VARIANT_EPS, 1.0 - VARIANT_EPS)
    factors.z_v_transformed = z_v_t
    factors.direction = direction
    refined_src = reparameterize(factors.z_s, factors.z_v, noise_src)
    refined_tgt = reparameterize(factors.z_s, z_v_t, noise_tgt)
    return refined_src, refined_tgt, factors
