"""Stacked variational bipartite graph encoder and subspace decoupling.

Each layer propagates the opposite side's features through the normalized
adjacency (users aggregate item features via A, items aggregate user
features via A^T) and emits a mean head, a clamped log-variance head, and a
reparameterized sample. Training mode consumes externally supplied standard
normal noise so a whole step is a deterministic function of its inputs;
evaluation mode returns the mean.

All forward code is written with :mod:`crossrec.autodiff` ops, so it runs on
plain arrays (fast evaluation) or tape variables (training) unchanged.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

__all__ = [
    "LayeredRepresentation", "init_embeddings", "encoder_layer",
    "encode_domain", "decouple", "LOGVAR_MIN", "LOGVAR_MAX",
]

LOGVAR_MIN = -5.0
LOGVAR_MAX = 5.0


@dataclass
class LayeredRepresentation:
    """Per-layer outputs and their shallow/deep concatenations."""

    layers: list          # K per-layer outputs (arrays or Vars)
    shallow_depth: int    # k

    @property
    def shallow(self):
        return ad.concat_cols(self.layers[: self.shallow_depth])

    @property
    def deep(self):
        return ad.concat_cols(self.layers[self.shallow_depth:])

    @property
    def full(self):
        return ad.concat_cols(self.layers)


def init_embeddings(count: int, d: int, seed) -> np.ndarray:
    """Uniform initialization in [-1/sqrt(d), 1/sqrt(d)]."""
    if count < 1 or d < 1:
        raise ValueError(f"count and d must be >= 1, got count={count}, d={d}")
    bound = 1.0 / np.sqrt(d)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return rng.uniform(-bound, bound, size=(count, d))


def encoder_layer(graph, side_features, w_mean, w_logvar, noise=None,
                  activation: str = "tanh"):
    """One propagation layer: (mean, log_variance, sample).

    ``graph`` is the sparse propagation operator for the target side (A for
    users, A^T for items); ``side_features`` live on the source side. With
    ``noise=None`` the sample equals the mean (evaluation mode).
    """
    propagated = ad.sparse_dot(graph, side_features)
    pre_mean = ad.matmul(propagated, w_mean)
    if activation == "tanh":
        mean = ad.tanh(pre_mean)
    elif activation == "linear":
        mean = pre_mean
    else:
        raise ValueError(f"unknown activation {activation!r}")
    log_variance = ad.clip(ad.matmul(propagated, w_logvar), LOGVAR_MIN, LOGVAR_MAX)
    if noise is None:
        sample = mean
    else:
        sample = ad.add(mean, ad.mul(ad.exp(ad.mul(log_variance, 0.5)), noise))
    return mean, log_variance, sample


def encode_domain(graph, user_emb, item_emb, params, prefix: str, depth: int,
                  shallow_depth: int, noise: dict | None = None,
                  activation: str = "tanh"):
    """Run the K-layer stack for one domain.

    Layer 1 consumes the initial embeddings of the opposite side; layer k
    consumes the opposite side's layer k-1 sample. ``params`` maps
    ``{prefix}_{side}_{layer}_{wm|wv}`` to weight matrices. ``noise`` maps
    the same ``{side}_{layer}`` keys to standard normal draws (training) or
    is None (evaluation).
    """
    if depth < 2:
        raise ValueError(f"encoder depth must be >= 2, got {depth}")
    if not (1 <= shallow_depth < depth):
        raise ValueError(
            f"shallow depth must satisfy 1 <= k < K, got k={shallow_depth}, K={depth}"
        )
    adj = graph.adjacency
    adj_t = graph.transpose
    user_layers, item_layers = [], []
    user_in, item_in = item_emb, user_emb
    for layer in range(depth):
        u_noise = noise.get(f"user_{layer}") if noise is not None else None
        i_noise = noise.get(f"item_{layer}") if noise is not None else None
        _, _, u_sample = encoder_layer(
            adj, user_in, params[f"{prefix}_user_{layer}_wm"],
            params[f"{prefix}_user_{layer}_wv"], u_noise, activation)
        _, _, i_sample = encoder_layer(
            adj_t, item_in, params[f"{prefix}_item_{layer}_wm"],
            params[f"{prefix}_item_{layer}_wv"], i_noise, activation)
        user_layers.append(u_sample)
        item_layers.append(i_sample)
        user_in, item_in = i_sample, u_sample
    return (LayeredRepresentation(user_layers, shallow_depth),
            LayeredRepresentation(item_layers, shallow_depth))


def decouple(layers, k: int):
    """Split a layer stack into shallow and deep concatenations."""
    if not (1 <= k < len(layers)):
        raise ValueError(f"k must satisfy 1 <= k < {len(layers)}, got {k}")
    return ad.concat_cols(layers[:k]), ad.concat_cols(layers[k:])
