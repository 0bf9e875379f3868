"""Invertible transforms between variant latent factors.

A :class:`FlowStack` chains bijections with exact inverses and analytic
per-row log-determinants. Two trainable families are provided:

* ``affine_coupling``: alternating contiguous masks; the conditioned half is
  scaled and shifted by a two-layer tanh conditioner. With a width-1 input
  the conditioning half is empty and the layer degenerates to a learnable
  elementwise affine map.
* ``masked_autoregressive``: MADE-style masked conditioner producing per-dim
  scale and shift from strictly lower-ordered dims; orderings alternate
  between layers. The inverse runs one conditioner pass per dimension.

Conditioner output layers are zero-initialized, so a fresh stack is the
identity map with zero log-determinant. Parameterless ``logit`` and
``sigmoid`` bijections let a stack transport codes living in (0, 1) through
an unconstrained core while tracking the wrapper log-determinants.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import NumericError

__all__ = ["Bijection", "AffineCoupling", "MaskedAutoregressive",
           "LogitBijection", "SigmoidBijection", "FlowStack", "build_flow",
           "wrap_unit_interval", "flow_forward", "flow_inverse", "flow_nll",
           "gaussian_nll_terms"]

FLOW_KINDS = ("affine_coupling", "masked_autoregressive")
SCALE_CLAMP = 7.0


class Bijection:
    kind = "base"

    def param_shapes(self) -> dict:
        return {}

    def init_params(self, rng) -> dict:
        return {}

    def forward(self, params: dict, x):
        raise NotImplementedError

    def inverse(self, params: dict, y):
        raise NotImplementedError


@dataclass
class AffineCoupling(Bijection):
    dim: int
    layer_index: int
    hidden: int = 64
    prefix: str = ""
    kind: str = field(default="affine_coupling", init=False)

    def __post_init__(self):
        half = self.dim // 2
        if half == 0 or self.dim - half == 0:
            a_idx, b_idx = [], list(range(self.dim))
        elif self.layer_index % 2 == 0:
            a_idx, b_idx = list(range(half)), list(range(half, self.dim))
        else:
            a_idx, b_idx = list(range(half, self.dim)), list(range(half))
        self.a_idx = np.array(a_idx, dtype=np.int64)
        self.b_idx = np.array(b_idx, dtype=np.int64)
        perm = list(a_idx) + list(b_idx)
        self.inv_perm = np.argsort(np.array(perm, dtype=np.int64))

    def _names(self):
        p = f"{self.prefix}cpl{self.layer_index}"
        return f"{p}_w1", f"{p}_b1", f"{p}_w2", f"{p}_b2"

    def param_shapes(self):
        na, nb = len(self.a_idx), len(self.b_idx)
        w1, b1, w2, b2 = self._names()
        return {w1: (na, self.hidden), b1: (self.hidden,),
                w2: (self.hidden, 2 * nb), b2: (2 * nb,)}

    def init_params(self, rng):
        na = max(len(self.a_idx), 1)
        shapes = self.param_shapes()
        w1, b1, w2, b2 = self._names()
        bound = 1.0 / np.sqrt(na)
        return {
            w1: rng.uniform(-bound, bound, size=shapes[w1]),
            b1: np.zeros(shapes[b1]),
            w2: np.zeros(shapes[w2]),
            b2: np.zeros(shapes[b2]),
        }

    def _conditioner(self, params, xa):
        w1, b1, w2, b2 = self._names()
        hidden = ad.tanh(ad.add(ad.matmul(xa, params[w1]), params[b1]))
        out = ad.add(ad.matmul(hidden, params[w2]), params[b2])
        nb = len(self.b_idx)
        scale = ad.clip(ad.take_cols(out, np.arange(nb)), -SCALE_CLAMP, SCALE_CLAMP)
        shift = ad.take_cols(out, np.arange(nb, 2 * nb))
        return scale, shift

    def forward(self, params, x):
        xa = ad.take_cols(x, self.a_idx)
        xb = ad.take_cols(x, self.b_idx)
        scale, shift = self._conditioner(params, xa)
        yb = ad.add(ad.mul(xb, ad.exp(scale)), shift)
        y = ad.take_cols(ad.concat_cols([xa, yb]), self.inv_perm)
        return y, ad.vsum(scale, axis=1)

    def inverse(self, params, y):
        y = np.asarray(y, dtype=np.float64)
        ya = y[:, self.a_idx]
        yb = y[:, self.b_idx]
        scale, shift = self._conditioner(params, ya)
        xb = (yb - shift) * np.exp(-scale)
        x = np.concatenate([ya, xb], axis=1)[:, self.inv_perm]
        return x, -np.sum(scale, axis=1)


@dataclass
class MaskedAutoregressive(Bijection):
    dim: int
    layer_index: int
    hidden: int = 64
    prefix: str = ""
    kind: str = field(default="masked_autoregressive", init=False)

    def __post_init__(self):
        d, h = self.dim, self.hidden
        if self.layer_index % 2 == 0:
            self.order = np.arange(1, d + 1, dtype=np.int64)
        else:
            self.order = np.arange(d, 0, -1, dtype=np.int64)
        max_deg = max(d - 1, 1)
        hidden_deg = (np.arange(h, dtype=np.int64) % max_deg) + 1
        self.mask_in = (hidden_deg[None, :] >= self.order[:, None]).astype(np.float64)
        out_mask = (self.order[None, :] > hidden_deg[:, None]).astype(np.float64)
        self.mask_out = np.concatenate([out_mask, out_mask], axis=1)
        if d == 1:
            self.mask_in = np.zeros_like(self.mask_in)
            self.mask_out = np.zeros_like(self.mask_out)

    def _names(self):
        p = f"{self.prefix}maf{self.layer_index}"
        return f"{p}_w1", f"{p}_b1", f"{p}_w2", f"{p}_b2"

    def param_shapes(self):
        w1, b1, w2, b2 = self._names()
        return {w1: (self.dim, self.hidden), b1: (self.hidden,),
                w2: (self.hidden, 2 * self.dim), b2: (2 * self.dim,)}

    def init_params(self, rng):
        shapes = self.param_shapes()
        w1, b1, w2, b2 = self._names()
        bound = 1.0 / np.sqrt(self.dim)
        return {
            w1: rng.uniform(-bound, bound, size=shapes[w1]),
            b1: np.zeros(shapes[b1]),
            w2: np.zeros(shapes[w2]),
            b2: np.zeros(shapes[b2]),
        }

    def _conditioner(self, params, x):
        w1, b1, w2, b2 = self._names()
        hidden = ad.tanh(ad.add(ad.matmul(x, ad.mul(params[w1], self.mask_in)), params[b1]))
        out = ad.add(ad.matmul(hidden, ad.mul(params[w2], self.mask_out)), params[b2])
        scale = ad.clip(ad.take_cols(out, np.arange(self.dim)), -SCALE_CLAMP, SCALE_CLAMP)
        shift = ad.take_cols(out, np.arange(self.dim, 2 * self.dim))
        return scale, shift

    def forward(self, params, x):
        scale, shift = self._conditioner(params, x)
        y = ad.add(ad.mul(x, ad.exp(scale)), shift)
        return y, ad.vsum(scale, axis=1)

    def inverse(self, params, y):
        y = np.asarray(y, dtype=np.float64)
        x = np.zeros_like(y)
        logdet = np.zeros(y.shape[0])
        for degree in range(1, self.dim + 1):
            j = int(np.flatnonzero(self.order == degree)[0])
            scale, shift = self._conditioner(params, x)
            x[:, j] = (y[:, j] - shift[:, j]) * np.exp(-scale[:, j])
            logdet -= scale[:, j]
        return x, logdet


class LogitBijection(Bijection):
    """x in (0,1) -> log(x / (1 - x)); tracked log-determinant."""

    kind = "logit"

    def forward(self, params, x):
        one_minus = ad.sub(1.0, x)
        y = ad.sub(ad.log(x), ad.log(one_minus))
        logdet = ad.vsum(ad.sub(ad.neg(ad.log(x)), ad.log(one_minus)), axis=1)
        return y, logdet

    def inverse(self, params, y):
        y = np.asarray(y, dtype=np.float64)
        x = ad.sigmoid(y)
        logdet = np.sum(np.log(x) + np.log1p(-x), axis=1)
        return x, logdet


class SigmoidBijection(Bijection):
    """x -> sigmoid(x); the inverse of the logit bijection."""

    kind = "sigmoid"

    def forward(self, params, x):
        y = ad.sigmoid(x)
        logdet = ad.vsum(ad.sub(ad.neg(ad.softplus(x)), ad.softplus(ad.neg(x))), axis=1)
        return y, logdet

    def inverse(self, params, y):
        y = np.asarray(y, dtype=np.float64)
        x = np.log(y) - np.log1p(-y)
        logdet = np.sum(np.log(y) + np.log1p(-y), axis=1)
        return x, -logdet


@dataclass
class FlowStack:
    """Ordered bijection chain with additive log-determinant tracking."""

    bijections: list
    dim: int
    base_mean: np.ndarray | None = None
    base_var: np.ndarray | None = None

    def init_params(self, rng) -> dict:
        params = {}
        for bij in self.bijections:
            params.update(bij.init_params(rng))
        return params

    def param_shapes(self) -> dict:
        shapes = {}
        for bij in self.bijections:
            shapes.update(bij.param_shapes())
        return shapes


def build_flow(kind: str, depth: int, dim: int, hidden: int = 64,
               prefix: str = "flow_") -> FlowStack:
    """Core stack of ``depth`` trainable bijections of one family."""
    if kind not in FLOW_KINDS:
        raise ValueError(f"flow kind must be one of {FLOW_KINDS}, got {kind!r}")
    if depth < 1:
        raise ValueError(f"flow depth must be >= 1, got {depth}")
    cls = AffineCoupling if kind == "affine_coupling" else MaskedAutoregressive
    bijections = [cls(dim=dim, layer_index=l, hidden=hidden, prefix=prefix)
                  for l in range(depth)]
    return FlowStack(bijections=bijections, dim=dim)


def wrap_unit_interval(stack: FlowStack) -> FlowStack:
    """Logit in, sigmoid out: transports (0,1)-valued codes through the core."""
    return FlowStack(
        bijections=[LogitBijection()] + list(stack.bijections) + [SigmoidBijection()],
        dim=stack.dim, base_mean=stack.base_mean, base_var=stack.base_var,
    )


def flow_forward(stack: FlowStack, params: dict, z):
    """Apply the chain; returns (transformed, per-row log-determinant)."""
    current = z
    logdet = None
    for index, bij in enumerate(stack.bijections):
        current, ld = bij.forward(params, current)
        values = ad.detach(current)
        if not np.all(np.isfinite(values)):
            raise NumericError(f"non-finite flow output at layer {index} ({bij.kind})")
        logdet = ld if logdet is None else ad.add(logdet, ld)
    return current, logdet


def flow_inverse(stack: FlowStack, params: dict, z_tilde):
    """Exact inverse of :func:`flow_forward`; log-determinant negated."""
    current = np.asarray(ad.detach(z_tilde), dtype=np.float64)
    logdet = np.zeros(current.shape[0])
    for index, bij in enumerate(reversed(stack.bijections)):
        current, ld = bij.inverse(params, current)
        if not np.all(np.isfinite(current)):
            raise NumericError(
                f"non-finite flow inverse at layer {len(stack.bijections) - 1 - index} "
                f"({bij.kind})"
            )
        logdet = logdet + ld
    return current, logdet


def gaussian_nll_terms(z, mean, var):
    """Per-row negative log-density under a diagonal Gaussian."""
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise ValueError("target variance entries must be positive")
    diff = ad.sub(z, mean)
    quad = ad.vsum(ad.div(ad.square(diff), var), axis=1)
    const = float(mean.size * np.log(2.0 * np.pi) + np.sum(np.log(var)))
    return 0.5 * (quad + const)


def flow_nll(stack: FlowStack, params: dict, z_v, target_stats=None):
    """Mean negative log-likelihood of the transported codes.

    Computes -(1/N) sum_i [log p(T(z_i)) + logdet_i] where p is the diagonal
    Gaussian given by ``target_stats`` (falling back to the stack's stored
    base statistics). Minimizing this fits the pushforward of the source
    codes to the target-side density.
    """
    if target_stats is not None:
        mean, var = target_stats
    else:
        mean, var = stack.base_mean, stack.base_var
    if mean is None or var is None:
        raise ValueError("flow_nll requires target statistics (mean, variance)")
    transformed, logdet = flow_forward(stack, params, z_v)
    neg_logp = gaussian_nll_terms(transformed, mean, var)
    return ad.vmean(ad.sub(neg_logp, logdet))
