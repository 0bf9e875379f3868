"""Training orchestration: configs, Adam, epochs, checkpoints.

A fit is deterministic given (config, dataset, seed): every random draw is
keyed on the master seed plus structural counters (epoch, step, purpose), so
two single-threaded runs produce byte-identical training logs. Validation
MRR on the direction's target domain drives early stopping and best-epoch
selection.

Stop-gradient quantities are recomputed numerically before each step and
frozen into the batch: the median-heuristic MMD bandwidth and the running
base statistics of the target-side variant codes. Every step also audits
that no held-out positive enters a training batch and, in the non-overlap
scenario, that no overlapped user does.
"""

import copy
from dataclasses import dataclass

import numpy as np

from . import alignment, data, disentangle, evaluation, objective, serialization
from . import autodiff as ad
from . import model as model_mod
from .errors import ConfigError, DataError, NumericError

__all__ = ["TrainConfig", "Adam", "Checkpoint", "TrainState", "train_step",
           "fit", "save_checkpoint", "load_checkpoint", "parse_config_file",
           "write_config_file", "build_graphs", "format_log_rows"]

CHECKPOINT_VERSION = 1

_CONFIG_FIELDS = {
    "encoder_layers": int, "shallow_layers": int, "embed_dim": int,
    "group_size": int, "flow_layers": int, "flow_kind": str, "flow_hidden": int,
    "bandwidth": str, "learning_rate": float, "epochs": int, "batch_size": int,
    "seed": int, "variant": str, "scenario": str, "direction": str,
    "align_weight": float, "flow_weight": float, "recon_weight_x": float,
    "recon_weight_y": float, "negative_ratio": int, "patience": int,
    "score_mode": str, "activation": str, "normalization": str,
}


@dataclass
class TrainConfig:
    encoder_layers: int = 3
    shallow_layers: int = 2
    embed_dim: int = 64
    group_size: int = 16
    flow_layers: int = 3
    flow_kind: str = "affine_coupling"
    flow_hidden: int = 64
    bandwidth: str = "median"        # "median" or a positive float literal
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 0              # 0 selects full-batch steps
    seed: int = 0
    variant: str = "full"
    scenario: str = "overlapped"
    direction: str = "both"          # xy | yx | both
    align_weight: float = 1.0
    flow_weight: float = 1.0
    recon_weight_x: float = 1.0
    recon_weight_y: float = 1.0
    negative_ratio: int = 1
    patience: int = 10
    score_mode: str = "full"
    activation: str = "tanh"
    normalization: str = "symmetric"

    def validate(self):
        if not (1 <= self.shallow_layers < self.encoder_layers):
            raise ConfigError("shallow_layers must satisfy 1 <= k < encoder_layers")
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2")
        if self.flow_layers < 1:
            raise ConfigError("flow_layers must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.variant not in model_mod.VARIANTS:
            raise ConfigError(f"variant must be one of {model_mod.VARIANTS}")
        if self.scenario not in ("overlapped", "non_overlapped"):
            raise ConfigError("scenario must be 'overlapped' or 'non_overlapped'")
        if self.direction not in ("xy", "yx", "both"):
            raise ConfigError("direction must be 'xy', 'yx', or 'both'")
        if self.bandwidth != "median":
            try:
                if float(self.bandwidth) <= 0:
                    raise ValueError
            except ValueError:
                raise ConfigError("bandwidth must be 'median' or a positive number") from None
        if self.negative_ratio < 0:
            raise ConfigError("negative_ratio must be >= 0")
        if self.normalization not in ("symmetric", "row"):
            raise ConfigError("normalization must be 'symmetric' or 'row'")

    def model_config(self) -> model_mod.ModelConfig:
        return model_mod.ModelConfig(
            encoder_layers=self.encoder_layers, shallow_layers=self.shallow_layers,
            embed_dim=self.embed_dim, flow_kind=self.flow_kind,
            flow_layers=self.flow_layers, flow_hidden=self.flow_hidden,
            variant=self.variant, score_mode=self.score_mode,
            activation=self.activation)

    def loss_weights(self) -> objective.LossWeights:
        return objective.LossWeights(
            alignment=self.align_weight, flow=self.flow_weight,
            recon_x=self.recon_weight_x, recon_y=self.recon_weight_y)


def parse_config_file(path) -> TrainConfig:
    """Flat ``key = value`` text; unknown keys are rejected by name."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_FIELDS:
                raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
            caster = _CONFIG_FIELDS[key]
            try:
                values[key] = caster(value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg


def write_config_file(path, cfg: TrainConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in _CONFIG_FIELDS:
            fh.write(f"{key} = {getattr(cfg, key)}\n")


class Adam:
    """Standard Adam over a named parameter dict."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for key, grad in grads.items():
            if grad is None:
                continue
            m = self.m[key] = b1 * self.m[key] + (1 - b1) * grad
            v = self.v[key] = b2 * self.v[key] + (1 - b2) * grad * grad
            params[key] -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


@dataclass
class TrainState:
    model: model_mod.DirectionModel
    optimizer: Adam
    epoch: int = 0
    step: int = 0


@dataclass
class Checkpoint:
    """Best-epoch parameter snapshots, one entry per trained direction."""

    models: dict                     # direction -> DirectionModel
    config: TrainConfig
    epochs_run: int
    best_epoch: dict                 # direction -> int
    best_val_mrr: dict               # direction -> float
    seed: int


# ---------------------------------------------------------------------------
# dataset plumbing

def build_graphs(interactions: dict, split: data.DatasetSplit,
                 normalization: str, which: str) -> dict:
    """Per-domain normalized adjacencies from train or context edges."""
    edge_source = split.train_edges if which == "train" else split.context_edges
    return {
        dom: data.build_adjacency(interactions[dom], normalization,
                                  edges=edge_source[dom])
        for dom in ("x", "y")
    }


def _rng(seed_parts) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed_parts)))


@dataclass
class _DomainData:
    edges_by_user: dict
    positives: list                  # full observed positives per user
    train_users: np.ndarray          # users with >= 1 training edge
    n_users: int
    n_items: int


def _prepare_domains(interactions: dict, split: data.DatasetSplit) -> dict:
    prepared = {}
    for dom in ("x", "y"):
        by_user = {}
        for u, i in split.train_edges[dom]:
            by_user.setdefault(u, []).append(i)
        prepared[dom] = _DomainData(
            edges_by_user=by_user,
            positives=interactions[dom].positives_by_user(),
            train_users=np.array(sorted(by_user), dtype=np.int64),
            n_users=interactions[dom].n_users,
            n_items=interactions[dom].n_items,
        )
    return prepared


def _held_out_pairs(split: data.DatasetSplit) -> dict:
    held = {dom: set() for dom in ("x", "y")}
    for dom in ("x", "y"):
        for queries in (split.test_queries[dom], split.validation_queries[dom]):
            for q in queries:
                held[dom].add((q.user, q.positive))
    return held


def _user_chunks(domains: dict, cfg: TrainConfig, epoch: int) -> dict:
    """Shuffled per-domain user chunks; domains cycle to the longest chunking."""
    chunked = {}
    for dom_pos, dom in enumerate(("x", "y")):
        users = domains[dom].train_users
        rng = _rng([cfg.seed, 35, epoch, dom_pos])
        order = users[rng.permutation(users.size)]
        size = cfg.batch_size if cfg.batch_size > 0 else users.size
        chunked[dom] = [order[i:i + size] for i in range(0, users.size, size)]
    steps = max(len(chunked["x"]), len(chunked["y"]))
    for dom in ("x", "y"):
        chunks = chunked[dom]
        chunked[dom] = [chunks[s % len(chunks)] for s in range(steps)]
    return chunked


def _sample_step_negatives(dom_data: _DomainData, pos_edges, ratio, rng):
    negs = []
    for u, _ in pos_edges:
        pos_set = dom_data.positives[u]
        for _ in range(ratio):
            j = int(rng.integers(dom_data.n_items))
            while j in pos_set:
                j = int(rng.integers(dom_data.n_items))
            negs.append((u, j))
    return negs


def build_step_batch(cfg: TrainConfig, mdl: model_mod.DirectionModel,
                     domains: dict, split: data.DatasetSplit,
                     epoch: int, step: int, batch_users: dict) -> model_mod.StepBatch:
    """Assemble one step's edges, groups, and frozen noise draws."""
    seed = cfg.seed
    src, tgt = mdl.source, mdl.target

    cross_pairs = None
    cross_tgt_users = set()
    if cfg.scenario == "overlapped" and cfg.variant in ("full", "C", "D"):
        src_over, tgt_over = split.overlap_users[src], split.overlap_users[tgt]
        in_batch = np.isin(src_over, batch_users[src])
        if np.any(in_batch):
            cross_pairs = (src_over[in_batch], tgt_over[in_batch])
            cross_tgt_users = set(cross_pairs[1].tolist())

    pos_edges = {}
    for dom in ("x", "y"):
        edges = []
        for u in batch_users[dom]:
            u = int(u)
            if dom == tgt and u in cross_tgt_users:
                continue  # reconstructed through the cross path below
            edges.extend((u, i) for i in domains[dom].edges_by_user.get(u, ()))
        pos_edges[dom] = edges
    if cross_pairs is not None:
        cross_edges = []
        for t_u in cross_pairs[1]:
            t_u = int(t_u)
            cross_edges.extend((t_u, i) for i in domains[tgt].edges_by_user.get(t_u, ()))
        pos_edges[tgt] = pos_edges[tgt] + cross_edges

    neg_edges = {}
    for dom_pos, dom in enumerate(("x", "y")):
        rng = _rng([seed, 30, epoch, step, dom_pos])
        neg_edges[dom] = _sample_step_negatives(
            domains[dom], pos_edges[dom], cfg.negative_ratio, rng)

    group_idx = {}
    for dom_pos, dom in enumerate(("x", "y")):
        rng = _rng([seed, 31, epoch, step, dom_pos])
        pool = domains[dom].train_users
        n = min(cfg.group_size, pool.size)
        group_idx[dom] = np.sort(rng.choice(pool, size=n, replace=False))

    enc_noise = {}
    for dom_pos, dom in enumerate(("x", "y")):
        rng = _rng([seed, 32, epoch, step, dom_pos])
        per_layer = {}
        for layer in range(cfg.encoder_layers):
            per_layer[f"user_{layer}"] = rng.standard_normal(
                (domains[dom].n_users, cfg.embed_dim))
            per_layer[f"item_{layer}"] = rng.standard_normal(
                (domains[dom].n_items, cfg.embed_dim))
        enc_noise[dom] = per_layer

    dw = mdl.cfg.deep_width
    rng = _rng([seed, 33, epoch, step])
    refine_noise = {
        "own_x": rng.standard_normal((domains["x"].n_users, dw)),
        "own_y": rng.standard_normal((domains["y"].n_users, dw)),
    }
    if cross_pairs is not None:
        refine_noise["cross"] = rng.standard_normal((len(cross_pairs[0]), dw))

    return model_mod.StepBatch(
        pos_edges=pos_edges, neg_edges=neg_edges, group_idx=group_idx,
        enc_noise=enc_noise, refine_noise=refine_noise,
        cross_overlap=cross_pairs, sigma=1.0, base_stats=None)


def _update_base_stats(mdl: model_mod.DirectionModel, codes: np.ndarray,
                       momentum: float = 0.9) -> None:
    mean = codes.mean(axis=0)
    var = codes.var(axis=0) + 1e-6
    if mdl.base_mean is None:
        mdl.base_mean, mdl.base_var = mean, var
    else:
        mdl.base_mean = momentum * mdl.base_mean + (1 - momentum) * mean
        mdl.base_var = momentum * mdl.base_var + (1 - momentum) * var


def _freeze_step_constants(mdl: model_mod.DirectionModel, cfg: TrainConfig,
                           graphs, batch: model_mod.StepBatch) -> None:
    """Numeric pre-pass for stop-gradient quantities (bandwidth, base stats)."""
    eff = model_mod.effective_weights(mdl.cfg, cfg.loss_weights())
    need_median = eff.alignment != 0.0 and cfg.bandwidth == "median"
    if cfg.bandwidth != "median":
        batch.sigma = float(cfg.bandwidth)
    if not (need_median or eff.flow != 0.0):
        return
    reps = model_mod._encode_both(mdl.params, graphs, mdl.cfg, batch.enc_noise)
    src, tgt = mdl.source, mdl.target
    if need_median:
        sh_src = np.asarray(model_mod._user_subspaces(reps[src][0], mdl.cfg)[0])
        sh_tgt = np.asarray(model_mod._user_subspaces(reps[tgt][0], mdl.cfg)[0])
        batch.sigma = alignment.median_bandwidth(
            sh_src[batch.group_idx[src]], sh_tgt[batch.group_idx[tgt]])
    if eff.flow != 0.0:
        deep_tgt = np.asarray(model_mod._user_subspaces(reps[tgt][0], mdl.cfg)[1])
        factors = disentangle.latent_heads(
            deep_tgt, mdl.params["head_ws"], mdl.params["head_bs"],
            mdl.params["head_wv"], mdl.params["head_bv"])
        _update_base_stats(mdl, np.asarray(factors.z_v)[batch.group_idx[tgt]])
        batch.base_stats = (mdl.base_mean.copy(), mdl.base_var.copy())


def train_step(state: TrainState, batch: model_mod.StepBatch, cfg: TrainConfig,
               graphs) -> objective.LossReport:
    """One gradient update; the batch carries all frozen randomness."""
    mdl = state.model
    _freeze_step_constants(mdl, cfg, graphs, batch)
    params_vars = {name: ad.parameter(v) for name, v in mdl.params.items()}
    total, report, _ = model_mod.training_losses(
        mdl, params_vars, graphs, batch, cfg.loss_weights())
    if not np.isfinite(report.total):
        raise NumericError(
            f"non-finite total loss: l_s={report.l_s} l_g={report.l_g} "
            f"vib_x={report.vib_x} vib_y={report.vib_y}")
    if isinstance(total, ad.Var):
        ad.backward(total)
        grads = {name: var.grad for name, var in params_vars.items()}
        state.optimizer.step(mdl.params, grads)
    state.step += 1
    return report


def _audit_batch(batch: model_mod.StepBatch, held_out: dict, split, cfg) -> None:
    for dom in ("x", "y"):
        overlap = set(split.overlap_users[dom].tolist())
        for u, i in batch.pos_edges[dom]:
            if (u, i) in held_out[dom]:
                raise DataError(f"held-out positive ({u}, {i}) leaked into a "
                                f"domain-{dom} training batch")
            if cfg.scenario == "non_overlapped" and u in overlap:
                raise DataError(f"overlapped user {u} appeared in a domain-{dom} "
                                f"training batch under the non-overlap scenario")


def fit(cfg: TrainConfig, interactions: dict, split: data.DatasetSplit,
        progress=None):
    """Train the configured direction(s); returns (Checkpoint, logs).

    ``logs`` maps direction to a list of per-epoch records with keys epoch,
    l_s, l_g, vib_x, vib_y, total, val_mrr. The checkpoint carries each
    direction's best-validation-MRR parameters.
    """
    cfg.validate()
    if split.scenario != cfg.scenario:
        raise ConfigError(
            f"config scenario {cfg.scenario!r} does not match split scenario "
            f"{split.scenario!r}")
    domains = _prepare_domains(interactions, split)
    held_out = _held_out_pairs(split)
    train_graphs = build_graphs(interactions, split, cfg.normalization, "train")
    eval_graphs = build_graphs(interactions, split, cfg.normalization, "context")

    directions = ("xy", "yx") if cfg.direction == "both" else (cfg.direction,)
    n_users = {dom: interactions[dom].n_users for dom in ("x", "y")}
    n_items = {dom: interactions[dom].n_items for dom in ("x", "y")}

    models, best_epoch, best_mrr, logs = {}, {}, {}, {}
    epochs_run = 0
    for direction in directions:
        mdl = model_mod.init_direction_model(
            cfg.model_config(), n_users, n_items, direction, cfg.seed)
        state = TrainState(model=mdl, optimizer=Adam(mdl.params, cfg.learning_rate))
        best = {"mrr": -1.0, "epoch": 0, "params": None, "stats": None}
        rows = []
        stall = 0
        for epoch in range(1, cfg.epochs + 1):
            chunks = _user_chunks(domains, cfg, epoch)
            step_reports = []
            for step_index in range(len(chunks["x"])):
                batch_users = {dom: chunks[dom][step_index] for dom in ("x", "y")}
                batch = build_step_batch(cfg, mdl, domains, split, epoch,
                                         step_index, batch_users)
                _audit_batch(batch, held_out, split, cfg)
                step_reports.append(train_step(state, batch, cfg, train_graphs))
            state.epoch = epoch
            epochs_run = max(epochs_run, epoch)
            val_mrr = evaluation.evaluate(
                mdl, interactions, split, eval_graphs, which="validation").mrr
            rows.append({
                "epoch": epoch,
                "l_s": float(np.mean([r.l_s for r in step_reports])),
                "l_g": float(np.mean([r.l_g for r in step_reports])),
                "vib_x": float(np.mean([r.vib_x for r in step_reports])),
                "vib_y": float(np.mean([r.vib_y for r in step_reports])),
                "total": float(np.mean([r.total for r in step_reports])),
                "val_mrr": val_mrr,
            })
            if progress is not None:
                progress(direction, rows[-1])
            if val_mrr > best["mrr"]:
                best = {"mrr": val_mrr, "epoch": epoch,
                        "params": {k: v.copy() for k, v in mdl.params.items()},
                        "stats": (None if mdl.base_mean is None else
                                  (mdl.base_mean.copy(), mdl.base_var.copy()))}
                stall = 0
            else:
                stall += 1
                if stall > cfg.patience:
                    break
        if best["params"] is not None:
            mdl.params = best["params"]
            if best["stats"] is not None:
                mdl.base_mean, mdl.base_var = best["stats"]
        models[direction] = mdl
        best_epoch[direction] = best["epoch"]
        best_mrr[direction] = best["mrr"]
        logs[direction] = rows

    checkpoint = Checkpoint(models=models, config=cfg, epochs_run=epochs_run,
                            best_epoch=best_epoch, best_val_mrr=best_mrr,
                            seed=cfg.seed)
    return checkpoint, logs


def format_log_rows(rows) -> str:
    """Tab-separated training log, one row per epoch, full-precision floats."""
    header = "epoch\tl_s\tl_g\tvib_x\tvib_y\ttotal\tval_mrr"
    lines = [header]
    for row in rows:
        lines.append("\t".join([
            str(row["epoch"]), repr(row["l_s"]), repr(row["l_g"]),
            repr(row["vib_x"]), repr(row["vib_y"]), repr(row["total"]),
            repr(row["val_mrr"]),
        ]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoint container

def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    arrays = {}
    meta_models = {}
    for direction, mdl in checkpoint.models.items():
        for name, value in mdl.params.items():
            arrays[f"{direction}/{name}"] = value
        if mdl.base_mean is not None:
            arrays[f"{direction}/base_mean"] = mdl.base_mean
            arrays[f"{direction}/base_var"] = mdl.base_var
        meta_models[direction] = {
            "best_epoch": checkpoint.best_epoch[direction],
            "best_val_mrr": checkpoint.best_val_mrr[direction],
            "has_base_stats": mdl.base_mean is not None,
        }
    meta = {
        "kind": "checkpoint",
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": {key: getattr(checkpoint.config, key) for key in _CONFIG_FIELDS},
        "epochs_run": checkpoint.epochs_run,
        "seed": checkpoint.seed,
        "models": meta_models,
    }
    serialization.save_arrays(path, arrays, meta)


def load_checkpoint(path) -> Checkpoint:
    arrays, meta = serialization.load_arrays(path)
    if meta.get("kind") != "checkpoint":
        raise DataError(f"{path}: not a checkpoint file")
    version = meta.get("checkpoint_version")
    if version != CHECKPOINT_VERSION:
        from .errors import VersionError
        raise VersionError(
            f"{path}: checkpoint version {version!r} unsupported "
            f"(expected {CHECKPOINT_VERSION})")
    raw_cfg = dict(meta["config"])
    cfg = TrainConfig(**{key: _CONFIG_FIELDS[key](value)
                         for key, value in raw_cfg.items()})
    models = {}
    for direction, info in meta["models"].items():
        prefix = f"{direction}/"
        params = {name[len(prefix):]: arr for name, arr in arrays.items()
                  if name.startswith(prefix) and not name.endswith("base_mean")
                  and not name.endswith("base_var")}
        n_users = {dom: params[f"emb_user_{dom}"].shape[0] for dom in ("x", "y")}
        n_items = {dom: params[f"emb_item_{dom}"].shape[0] for dom in ("x", "y")}
        mdl = model_mod.init_direction_model(
            cfg.model_config(), n_users, n_items, direction, cfg.seed)
        if set(mdl.params) != set(params):
            raise DataError(f"{path}: parameter set mismatch for direction {direction}")
        mdl.params = params
        if info["has_base_stats"]:
            mdl.base_mean = arrays[f"{direction}/base_mean"]
            mdl.base_var = arrays[f"{direction}/base_var"]
        models[direction] = mdl
    return Checkpoint(
        models=models, config=cfg,
        epochs_run=int(meta["epochs_run"]),
        best_epoch={d: int(v["best_epoch"]) for d, v in meta["models"].items()},
        best_val_mrr={d: float(v["best_val_mrr"]) for d, v in meta["models"].items()},
        seed=int(meta["seed"]),
    )
