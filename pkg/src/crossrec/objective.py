"""Scoring, the binary cross-entropy reconstruction bound, and the total loss.

The reconstruction bound is the sum of log score over positives plus
log(1 - score) over negatives; the bound itself is what the functions
return, and the trainer negates it inside the total. The total therefore
minimizes w_s * alignment + w_g * flow_nll - w_x * bound_x - w_y * bound_y,
the one sign convention under which every component moves in its intended
direction.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import NumericError

__all__ = ["LossReport", "LossWeights", "score", "score_rows", "vib_bce",
           "total_loss", "SCORE_EPS"]

SCORE_EPS = 1e-7


@dataclass
class LossWeights:
    alignment: float = 1.0
    flow: float = 1.0
    recon_x: float = 1.0
    recon_y: float = 1.0


@dataclass
class LossReport:
    """Component values of one loss evaluation (bounds stored un-negated)."""

    l_s: float
    l_g: float
    vib_x: float
    vib_y: float
    total: float
    weights: LossWeights

    def as_row(self):
        return {"l_s": self.l_s, "l_g": self.l_g, "vib_x": self.vib_x,
                "vib_y": self.vib_y, "total": self.total}


def score(user_rep, item_rep) -> float:
    """Sigmoid of the inner product of two equal-length vectors."""
    u = np.asarray(user_rep, dtype=np.float64).ravel()
    v = np.asarray(item_rep, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(ad.sigmoid(np.dot(u, v)))


def score_rows(user_rows, item_rows):
    """Row-wise sigmoid inner products; differentiable when given Vars."""
    return ad.sigmoid(ad.vsum(ad.mul(user_rows, item_rows), axis=1))


def vib_bce(user_reps, item_reps, positives, negatives):
    """Reconstruction bound: sum log s over positives + sum log(1-s) over negatives.

    ``positives`` and ``negatives`` are (user_index, item_index) edge lists
    indexing rows of ``user_reps`` / ``item_reps``. Scores are clamped to
    [SCORE_EPS, 1 - SCORE_EPS] before the logarithm. Empty edge lists
    contribute zero.
    """
    total = None
    for edges, is_positive in ((positives, True), (negatives, False)):
        if len(edges) == 0:
            continue
        u_idx = np.fromiter((e[0] for e in edges), dtype=np.int64, count=len(edges))
        i_idx = np.fromiter((e[1] for e in edges), dtype=np.int64, count=len(edges))
        s = score_rows(ad.take_rows(user_reps, u_idx), ad.take_rows(item_reps, i_idx))
        s = ad.clip(s, SCORE_EPS, 1.0 - SCORE_EPS)
        term = ad.vsum(ad.log(s if is_positive else ad.sub(1.0, s)))
        total = term if total is None else ad.add(total, term)
    if total is None:
        return 0.0
    return total


def total_loss(l_s, l_g_nll, vib_x, vib_y, weights: LossWeights = LossWeights()):
    """Weighted multi-task objective; see the module docstring for signs.

    Accepts floats or tape variables. Returns ``(total, LossReport)`` where
    the report carries plain float component values.
    """
    components = {"l_s": l_s, "l_g": l_g_nll, "vib_x": vib_x, "vib_y": vib_y}
    for name, component in components.items():
        if not np.all(np.isfinite(ad.detach(component))):
            raise NumericError(f"non-finite loss component {name}")
    total = ad.add(
        ad.add(ad.mul(weights.alignment, l_s), ad.mul(weights.flow, l_g_nll)),
        ad.add(ad.mul(weights.recon_x, ad.neg(vib_x)),
               ad.mul(weights.recon_y, ad.neg(vib_y))),
    )
    report = LossReport(
        l_s=float(ad.detach(l_s)),
        l_g=float(ad.detach(l_g_nll)),
        vib_x=float(ad.detach(vib_x)),
        vib_y=float(ad.detach(vib_y)),
        total=float(ad.detach(total)),
        weights=weights,
    )
    return total, report
