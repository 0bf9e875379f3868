"""Per-direction model assembly: parameters, forward passes, loss wiring.

One :class:`DirectionModel` owns every parameter needed to transfer from its
source domain to its target domain: embeddings and encoder stacks for both
domains, one pair of latent heads applied to either domain's deep subspace,
and the flow transporting source variant codes to the target side.

Ablation variants gate the structure:

* ``A``  encoding plus own-domain reconstruction only.
* ``B``  alignment applied to both the shallow and the refined deep
         subspace; no flow, no cross reconstruction.
* ``C``  cross reconstruction with the transport bypassed to the identity.
* ``D``  no shallow subspace (the heads consume the full layer stack);
         alignment disabled, flow and cross reconstruction active.

A component whose effective weight is zero is skipped and reported as 0, so
an ablation's loss report equals the full model's report under the matching
zeroed weights.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import alignment, disentangle, encoder, objective
from . import flow as flow_mod

__all__ = ["ModelConfig", "DirectionModel", "StepBatch", "init_direction_model",
           "training_losses", "eval_state", "user_scoring_rows", "effective_weights",
           "VARIANTS"]

VARIANTS = ("full", "A", "B", "C", "D")


@dataclass
class ModelConfig:
    encoder_layers: int = 3          # K
    shallow_layers: int = 2          # k
    embed_dim: int = 64              # d
    flow_kind: str = "affine_coupling"
    flow_layers: int = 3             # L
    flow_hidden: int = 64
    variant: str = "full"
    score_mode: str = "full"         # "full" pairs [S || D-hat] with the whole
                                     # item stack; "deep_only" pairs D-hat with
                                     # the deep item slice only
    activation: str = "tanh"

    def validate(self):
        if self.encoder_layers < 2:
            raise ValueError("encoder_layers must be >= 2")
        if not (1 <= self.shallow_layers < self.encoder_layers):
            raise ValueError("shallow_layers must satisfy 1 <= k < K")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.score_mode not in ("full", "deep_only"):
            raise ValueError("score_mode must be 'full' or 'deep_only'")
        if self.flow_layers < 1:
            raise ValueError("flow_layers must be >= 1")

    @property
    def uses_shallow(self) -> bool:
        return self.variant != "D"

    @property
    def deep_width(self) -> int:
        if self.variant == "D":
            return self.encoder_layers * self.embed_dim
        return (self.encoder_layers - self.shallow_layers) * self.embed_dim


@dataclass
class DirectionModel:
    direction: str                   # "xy" or "yx"
    cfg: ModelConfig
    params: dict
    core_flow: flow_mod.FlowStack
    latent_flow: flow_mod.FlowStack
    base_mean: np.ndarray | None = None
    base_var: np.ndarray | None = None

    @property
    def source(self) -> str:
        return "x" if self.direction == "xy" else "y"

    @property
    def target(self) -> str:
        return "y" if self.direction == "xy" else "x"


@dataclass
class StepBatch:
    """Everything one gradient step consumes, with all randomness frozen.

    Edge lists are (user, item) pairs in their domain's index space.
    ``cross_overlap`` aligns source and target indices of the overlapped
    users whose target-domain edges are reconstructed from transported
    source latents; None disables the cross path.
    """

    pos_edges: dict                  # domain -> list[(u, i)]
    neg_edges: dict                  # domain -> list[(u, i)]
    group_idx: dict                  # domain -> np.ndarray group user indices
    enc_noise: dict | None           # domain -> {"user_0": arr, ...} or None
    refine_noise: dict | None        # keys: own_<dom>, cross
    cross_overlap: tuple | None      # (src_idx array, tgt_idx array) or None
    sigma: float = 1.0
    base_stats: tuple | None = None  # (mean, var) for the flow NLL


def effective_weights(cfg: ModelConfig, weights: objective.LossWeights) -> objective.LossWeights:
    """Apply the variant's structural gating to the configured weights."""
    w = replace(weights)
    if cfg.variant in ("A", "D"):
        w.alignment = 0.0
    if cfg.variant in ("A", "B", "C"):
        w.flow = 0.0
    return w


def init_direction_model(cfg: ModelConfig, n_users: dict, n_items: dict,
                         direction: str, seed: int) -> DirectionModel:
    cfg.validate()
    d = cfg.embed_dim
    params = {}

    def rng_for(tag):
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 20, tag])))

    for dom in ("x", "y"):
        tag_base = 0 if dom == "x" else 1000
        params[f"emb_user_{dom}"] = encoder.init_embeddings(
            n_users[dom], d, [seed, 20, tag_base + 1])
        params[f"emb_item_{dom}"] = encoder.init_embeddings(
            n_items[dom], d, [seed, 20, tag_base + 2])
        counter = tag_base + 10
        for side in ("user", "item"):
            for layer in range(cfg.encoder_layers):
                bound = 1.0 / np.sqrt(d)
                for suffix in ("wm", "wv"):
                    counter += 1
                    params[f"enc_{dom}_{side}_{layer}_{suffix}"] = (
                        rng_for(counter).uniform(-bound, bound, size=(d, d)))

    dw = cfg.deep_width
    bound = 1.0 / np.sqrt(dw)
    params["head_ws"] = rng_for(5001).uniform(-bound, bound, size=(dw, dw))
    params["head_bs"] = np.zeros(dw)
    params["head_wv"] = rng_for(5002).uniform(-bound, bound, size=(dw, dw))
    params["head_bv"] = np.zeros(dw)

    core = flow_mod.build_flow(cfg.flow_kind, cfg.flow_layers, dw, cfg.flow_hidden)
    params.update(core.init_params(rng_for(6001)))
    return DirectionModel(
        direction=direction, cfg=cfg, params=params, core_flow=core,
        latent_flow=flow_mod.wrap_unit_interval(core),
    )


# ---------------------------------------------------------------------------
# forward passes

def _encode_both(params, graphs, cfg: ModelConfig, enc_noise):
    reps = {}
    for dom in ("x", "y"):
        noise = enc_noise.get(dom) if enc_noise is not None else None
        u_rep, i_rep = encoder.encode_domain(
            graphs[dom], params[f"emb_user_{dom}"], params[f"emb_item_{dom}"],
            params, prefix=f"enc_{dom}", depth=cfg.encoder_layers,
            shallow_depth=cfg.shallow_layers, noise=noise,
            activation=cfg.activation)
        reps[dom] = (u_rep, i_rep)
    return reps


def _user_subspaces(u_rep, cfg: ModelConfig):
    if cfg.variant == "D":
        return None, u_rep.full
    return u_rep.shallow, u_rep.deep


def _item_vectors(i_rep, cfg: ModelConfig):
    full = i_rep.full
    deep = full if cfg.variant == "D" else i_rep.deep
    return full, deep


def user_scoring_rows(shallow_rows, deep_rows, item_full_rows, item_deep_rows,
                      cfg: ModelConfig):
    """Dimension-matched (user, item) row pairs per the scoring mode."""
    if cfg.variant == "D" or shallow_rows is None:
        return deep_rows, item_full_rows
    if cfg.score_mode == "deep_only":
        return deep_rows, item_deep_rows
    return ad.concat_cols([shallow_rows, deep_rows]), item_full_rows


def training_losses(model: DirectionModel, params, graphs, batch: StepBatch,
                    weights: objective.LossWeights):
    """One step's total loss as a tape variable plus its component report.

    ``params`` maps names to tape Vars (training) or plain arrays (useful
    for component-equality checks). All stochastic inputs come frozen inside
    ``batch``, so this function is deterministic and differentiable.
    """
    cfg = model.cfg
    src, tgt = model.source, model.target
    w = effective_weights(cfg, weights)
    reps = _encode_both(params, graphs, cfg, batch.enc_noise)

    shallow, deep, item_full, item_deep = {}, {}, {}, {}
    for dom in ("x", "y"):
        shallow[dom], deep[dom] = _user_subspaces(reps[dom][0], cfg)
        item_full[dom], item_deep[dom] = _item_vectors(reps[dom][1], cfg)

    factors = {
        dom: disentangle.latent_heads(
            deep[dom], params["head_ws"], params["head_bs"],
            params["head_wv"], params["head_bv"])
        for dom in ("x", "y")
    }

    refine_noise = batch.refine_noise or {}

    def own_refined(dom):
        return disentangle.reparameterize(
            factors[dom].z_s, factors[dom].z_v, refine_noise.get(f"own_{dom}"))

    cross_active = (cfg.variant in ("full", "C", "D")
                    and batch.cross_overlap is not None
                    and len(batch.cross_overlap[0]) > 0)

    z_v_transported = None
    if cross_active:
        if cfg.variant == "C":
            z_v_transported = factors[src].z_v
        else:
            transported, _ = flow_mod.flow_forward(
                model.latent_flow, params, factors[src].z_v)
            z_v_transported = ad.clip(transported, disentangle.VARIANT_EPS,
                                      1.0 - disentangle.VARIANT_EPS)

    # Reconstruction bounds. The target matrix mixes cross-refined rows for
    # overlapped users with own-refined rows for everyone else.
    refined = {src: own_refined(src)}
    if cross_active:
        src_idx, tgt_idx = batch.cross_overlap
        cross_rows = disentangle.reparameterize(
            ad.take_rows(factors[src].z_s, src_idx),
            ad.take_rows(z_v_transported, src_idx),
            refine_noise.get("cross"))
        own_rows = own_refined(tgt)
        n_tgt = ad.detach(own_rows).shape[0]
        # selector[u] picks the cross row for overlapped u, its own row otherwise
        selector = np.arange(n_tgt, dtype=np.int64) + len(src_idx)
        selector[tgt_idx] = np.arange(len(src_idx), dtype=np.int64)
        refined[tgt] = ad.take_rows(ad.concat_rows([cross_rows, own_rows]), selector)
    else:
        refined[tgt] = own_refined(tgt)

    bounds = {}
    for dom in ("x", "y"):
        u_rows, i_rows = user_scoring_rows(
            shallow[dom], refined[dom], item_full[dom], item_deep[dom], cfg)
        bounds[dom] = objective.vib_bce(
            u_rows, i_rows, batch.pos_edges[dom], batch.neg_edges[dom])

    # Shallow-subspace alignment.
    l_s = 0.0
    if w.alignment != 0.0:
        g_src = ad.take_rows(shallow[src], batch.group_idx[src])
        g_tgt = ad.take_rows(shallow[tgt], batch.group_idx[tgt])
        l_s = alignment.mmd2_from_features(g_src, g_tgt, batch.sigma)
        if cfg.variant == "B":
            d_src = ad.take_rows(refined[src], batch.group_idx[src])
            d_tgt = ad.take_rows(refined[tgt], batch.group_idx[tgt])
            l_s = ad.add(l_s, alignment.mmd2_from_features(d_src, d_tgt, batch.sigma))

    # Flow likelihood on the transported group codes.
    l_g = 0.0
    if w.flow != 0.0:
        stats = batch.base_stats
        if stats is None:
            stats = (model.base_mean, model.base_var)
        z_group = ad.take_rows(factors[src].z_v, batch.group_idx[src])
        l_g = flow_mod.flow_nll(model.latent_flow, params, z_group, stats)

    total, report = objective.total_loss(l_s, l_g, bounds["x"], bounds["y"], w)
    return total, report, factors


def eval_state(model: DirectionModel, graphs) -> dict:
    """Deterministic evaluation-mode tensors for scoring and probing.

    Returns plain arrays: shallow/deep user subspaces, item vectors, the
    latent factors of both domains, and the transported source codes.
    """
    cfg = model.cfg
    reps = _encode_both(model.params, graphs, cfg, None)
    out = {"shallow": {}, "deep": {}, "item_full": {}, "item_deep": {},
           "z_s": {}, "z_v": {}}
    for dom in ("x", "y"):
        sh, dp = _user_subspaces(reps[dom][0], cfg)
        out["shallow"][dom] = None if sh is None else np.asarray(sh)
        out["deep"][dom] = np.asarray(dp)
        full, deep_items = _item_vectors(reps[dom][1], cfg)
        out["item_full"][dom] = np.asarray(full)
        out["item_deep"][dom] = np.asarray(deep_items)
        factors = disentangle.latent_heads(
            dp, model.params["head_ws"], model.params["head_bs"],
            model.params["head_wv"], model.params["head_bv"])
        out["z_s"][dom] = np.asarray(factors.z_s)
        out["z_v"][dom] = np.asarray(factors.z_v)
    src = model.source
    if cfg.variant == "C":
        out["z_v_transported"] = out["z_v"][src].copy()
    else:
        transported, _ = flow_mod.flow_forward(
            model.latent_flow, model.params, out["z_v"][src])
        out["z_v_transported"] = np.clip(
            transported, disentangle.VARIANT_EPS, 1.0 - disentangle.VARIANT_EPS)
    return out
