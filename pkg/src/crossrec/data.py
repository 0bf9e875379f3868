"""Interaction ingestion, bipartite graphs, splits, and synthetic data.

Interaction files are UTF-8 text with one ``user<TAB>item`` pair per line.
Users and items are indexed densely in first-appearance order, which makes
every downstream index deterministic given the input file bytes.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import serialization
from .errors import DataError, ParseError

__all__ = [
    "InteractionSet", "NormalizedBipartiteGraph", "Query", "DatasetSplit",
    "SyntheticConfig", "SyntheticGroundTruth",
    "load_interactions", "write_interactions", "build_adjacency",
    "split_overlapped", "sample_negatives", "generate_synthetic",
    "write_split_manifest", "load_split_manifest",
    "write_ground_truth", "load_ground_truth",
]

MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# core containers

@dataclass
class InteractionSet:
    """Per-domain users, items, and observed user-item edges."""

    domain_id: str
    users: list
    items: list
    edges: list  # list of (user_index, item_index)
    user_index: dict = field(repr=False, default_factory=dict)
    item_index: dict = field(repr=False, default_factory=dict)

    @property
    def n_users(self):
        return len(self.users)

    @property
    def n_items(self):
        return len(self.items)

    def positives_by_user(self):
        """Item-index sets keyed by user index."""
        out = [set() for _ in range(self.n_users)]
        for u, i in self.edges:
            out[u].add(i)
        return out


@dataclass
class NormalizedBipartiteGraph:
    """Sparse normalized adjacency of one domain plus its transpose."""

    adjacency: sp.csr_matrix
    normalization: str

    @property
    def transpose(self):
        return self.adjacency.T.tocsr()


@dataclass
class Query:
    """One leave-one-out ranking query: a held-out positive plus negatives."""

    user: int
    positive: int
    negatives: np.ndarray


@dataclass
class DatasetSplit:
    """Training edges, per-domain queries, and the overlap bookkeeping.

    ``context_edges`` are the edges available to evaluation-time graph
    propagation. In the overlapped scenario they equal ``train_edges``; in
    the non-overlap scenario they additionally carry the query users'
    non-held-out edges, which never enter training batches.
    """

    scenario: str
    seed: int
    ratios: tuple
    negatives_per_query: int
    overlap_users: dict          # domain -> np.ndarray of user indices (aligned)
    train_edges: dict            # domain -> list[(u, i)]
    context_edges: dict          # domain -> list[(u, i)]
    test_queries: dict           # domain -> list[Query]
    validation_queries: dict     # domain -> list[Query]
    train_group_users: dict      # domain -> np.ndarray of overlapped train users


# ---------------------------------------------------------------------------
# ingestion

def load_interactions(path, domain_id: str) -> InteractionSet:
    """Parse a ``user<TAB>item`` file into a de-duplicated InteractionSet."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"interaction file not found: {path}")
    users, items = [], []
    user_index, item_index = {}, {}
    edges = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if line == "":
                # A trailing newline produces no extra iteration, so any
                # empty line we do see is genuinely malformed.
                raise ParseError("empty line in interaction file", lineno)
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ParseError(f"expected 'user<TAB>item', got {line!r}", lineno)
            u_id, i_id = parts
            if u_id not in user_index:
                user_index[u_id] = len(users)
                users.append(u_id)
            if i_id not in item_index:
                item_index[i_id] = len(items)
                items.append(i_id)
            edge = (user_index[u_id], item_index[i_id])
            if edge not in seen:
                seen.add(edge)
                edges.append(edge)
    if not edges:
        raise DataError(f"{path}: empty dataset (no interactions)")
    return InteractionSet(domain_id, users, items, edges, user_index, item_index)


def write_interactions(path, interactions: InteractionSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in interactions.edges:
            fh.write(f"{interactions.users[u]}\t{interactions.items[i]}\n")


# ---------------------------------------------------------------------------
# adjacency

def build_adjacency(s: InteractionSet, normalization: str = "symmetric",
                    edges=None) -> NormalizedBipartiteGraph:
    """Degree-normalized sparse user-item adjacency.

    ``symmetric`` entries are 1/sqrt(deg(u) * deg(v)); ``row`` entries are
    1/deg(u). The optional ``edges`` argument restricts the graph to a
    subset of the interaction set's edges (used for train-time graphs).
    """
    if normalization not in ("symmetric", "row"):
        raise ValueError(f"unknown normalization {normalization!r}")
    edge_list = s.edges if edges is None else list(edges)
    if not edge_list:
        raise DataError(f"domain {s.domain_id}: no edges to build adjacency from")
    rows = np.array([e[0] for e in edge_list], dtype=np.int64)
    cols = np.array([e[1] for e in edge_list], dtype=np.int64)
    deg_u = np.bincount(rows, minlength=s.n_users).astype(np.float64)
    deg_v = np.bincount(cols, minlength=s.n_items).astype(np.float64)
    touched_u = np.unique(rows)
    touched_v = np.unique(cols)
    if np.any(deg_u[touched_u] == 0) or np.any(deg_v[touched_v] == 0):
        raise DataError("zero-degree entity in adjacency edge set")
    if normalization == "symmetric":
        vals = 1.0 / np.sqrt(deg_u[rows] * deg_v[cols])
    else:
        vals = 1.0 / deg_u[rows]
    adj = sp.csr_matrix((vals, (rows, cols)), shape=(s.n_users, s.n_items))
    return NormalizedBipartiteGraph(adj, normalization)


# ---------------------------------------------------------------------------
# negative sampling

def sample_negatives(user: int, domain_id: str, count: int, seed, data: dict) -> np.ndarray:
    """Uniform without-replacement negatives from the user's non-interacted items.

    ``data`` maps domain id to its InteractionSet; positives are the user's
    full observed edge set in that domain (held-out positives included), so
    emitted negatives can never be observed positives.
    """
    interactions = data[domain_id]
    positives = {i for u, i in interactions.edges if u == user}
    candidates = np.array(
        [i for i in range(interactions.n_items) if i not in positives], dtype=np.int64
    )
    if count > candidates.size:
        raise DataError(
            f"domain {domain_id} user {user}: requested {count} negatives but only "
            f"{candidates.size} non-interacted items exist"
        )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return rng.choice(candidates, size=count, replace=False)


def _negatives_from_positives(n_items, positives, count, rng):
    candidates = np.setdiff1d(np.arange(n_items, dtype=np.int64),
                              np.fromiter(positives, dtype=np.int64, count=len(positives)))
    if count > candidates.size:
        raise DataError(
            f"requested {count} negatives but only {candidates.size} candidates exist"
        )
    return rng.choice(candidates, size=count, replace=False)


# ---------------------------------------------------------------------------
# splitting

def split_overlapped(sx: InteractionSet, sy: InteractionSet, ratios=(0.6, 0.2, 0.2),
                     seed: int = 0, negatives: int = 999,
                     non_overlap: bool = False) -> DatasetSplit:
    """Leave-one-out split over overlapped users.

    Overlapped users (matched by id) are shuffled deterministically and cut
    into train/test/validation groups by exact floor proportions. Each test
    and validation user gets one held-out positive per domain, removed from
    that domain's training edges, plus sampled negatives. With
    ``non_overlap=True`` every overlapped user's edges are excluded from
    training entirely; query users' remaining edges are kept as evaluation
    context only.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three values summing to 1, got {ratios}")
    shared_ids = [uid for uid in sx.users if uid in sy.user_index]
    if not shared_ids:
        raise DataError("no overlapped users between the two domains")
    n_overlap = len(shared_ids)
    n_test = int(np.floor(ratios[1] * n_overlap))
    n_val = int(np.floor(ratios[2] * n_overlap))
    n_train = n_overlap - n_test - n_val
    if n_test == 0 or n_val == 0:
        raise DataError(
            f"overlap of {n_overlap} users is too small to fill ratios {ratios}"
        )

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    order = rng.permutation(n_overlap)
    shuffled = [shared_ids[i] for i in order]
    train_ids = shuffled[:n_train]
    test_ids = shuffled[n_train:n_train + n_test]
    val_ids = shuffled[n_train + n_test:]

    domains = {"x": sx, "y": sy}
    overlap_users = {
        dom: np.array([s.user_index[uid] for uid in shared_ids], dtype=np.int64)
        for dom, s in domains.items()
    }
    train_group_users = {
        dom: np.array(sorted(s.user_index[uid] for uid in train_ids), dtype=np.int64)
        for dom, s in domains.items()
    }

    positives = {dom: s.positives_by_user() for dom, s in domains.items()}
    held_out = {dom: {} for dom in domains}
    test_queries = {dom: [] for dom in domains}
    validation_queries = {dom: [] for dom in domains}

    for kind, ids, sink in (("test", test_ids, test_queries), ("val", val_ids, validation_queries)):
        for uid in ids:
            for dom, s in domains.items():
                u = s.user_index[uid]
                user_pos = sorted(positives[dom][u])
                if len(user_pos) < 2 and not non_overlap:
                    raise DataError(
                        f"{kind} user {uid!r} has only {len(user_pos)} edge(s) in domain "
                        f"{s.domain_id}; holding one out would empty its training edges"
                    )
                pick_rng = np.random.Generator(np.random.PCG64(
                    np.random.SeedSequence([seed, 1, _dom_tag(dom), u])))
                pos = int(user_pos[pick_rng.integers(len(user_pos))])
                neg_rng = np.random.Generator(np.random.PCG64(
                    np.random.SeedSequence([seed, 2, _dom_tag(dom), u])))
                negs = _negatives_from_positives(s.n_items, positives[dom][u], negatives, neg_rng)
                held_out[dom][u] = pos
                sink[dom].append(Query(user=u, positive=pos, negatives=negs))

    overlap_idx = {dom: set(overlap_users[dom].tolist()) for dom in domains}
    train_edges = {}
    context_edges = {}
    for dom, s in domains.items():
        held = held_out[dom]
        kept = [(u, i) for u, i in s.edges if held.get(u) != i]
        if non_overlap:
            train_edges[dom] = [(u, i) for u, i in kept if u not in overlap_idx[dom]]
            if not train_edges[dom]:
                raise DataError(
                    f"domain {s.domain_id}: no non-overlapped training edges remain"
                )
            query_users = set(held)
            context_edges[dom] = train_edges[dom] + [
                (u, i) for u, i in kept if u in query_users
            ]
        else:
            train_edges[dom] = kept
            context_edges[dom] = kept

    return DatasetSplit(
        scenario="non_overlapped" if non_overlap else "overlapped",
        seed=seed,
        ratios=tuple(float(r) for r in ratios),
        negatives_per_query=negatives,
        overlap_users=overlap_users,
        train_edges=train_edges,
        context_edges=context_edges,
        test_queries=test_queries,
        validation_queries=validation_queries,
        train_group_users=train_group_users,
    )


def _dom_tag(dom: str) -> int:
    return 0 if dom == "x" else 1


# ---------------------------------------------------------------------------
# split manifest I/O

def write_split_manifest(path, split: DatasetSplit, sx: InteractionSet,
                         sy: InteractionSet, command: str = "") -> None:
    """Byte-stable text manifest carrying the full split."""
    domains = {"x": sx, "y": sy}
    lines = []
    lines.append("# crossrec split manifest")
    lines.append(f"version = {MANIFEST_VERSION}")
    lines.append(f"seed = {split.seed}")
    lines.append(f"ratios = {split.ratios[0]!r} {split.ratios[1]!r} {split.ratios[2]!r}")
    lines.append(f"scenario = {split.scenario}")
    lines.append(f"negatives_per_query = {split.negatives_per_query}")
    lines.append(f"command = {command}")
    for dom in ("x", "y"):
        s = domains[dom]
        lines.append(f"[overlap_users {dom}]")
        lines.append(" ".join(s.users[u] for u in split.overlap_users[dom]))
        lines.append(f"[train_group_users {dom}]")
        lines.append(" ".join(s.users[u] for u in split.train_group_users[dom]))
        lines.append(f"[train_edges {dom}]")
        for u, i in split.train_edges[dom]:
            lines.append(f"{s.users[u]}\t{s.items[i]}")
        if split.scenario == "non_overlapped":
            lines.append(f"[context_edges {dom}]")
            for u, i in split.context_edges[dom]:
                lines.append(f"{s.users[u]}\t{s.items[i]}")
        for tag, queries in (("test", split.test_queries[dom]),
                             ("validation", split.validation_queries[dom])):
            lines.append(f"[{tag}_queries {dom}]")
            for q in queries:
                negs = " ".join(s.items[j] for j in q.negatives)
                lines.append(f"{s.users[q.user]}\t{s.items[q.positive]}\t{negs}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_split_manifest(path, sx: InteractionSet, sy: InteractionSet) -> DatasetSplit:
    domains = {"x": sx, "y": sy}
    header = {}
    sections = {}
    current = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                sections[current] = []
                continue
            if current is None:
                if " = " not in line:
                    raise ParseError(f"expected 'key = value', got {line!r}", lineno)
                key, value = line.split(" = ", 1)
                header[key] = value
            else:
                sections[current].append(line)
    try:
        version = int(header["version"])
        seed = int(header["seed"])
        ratios = tuple(float(v) for v in header["ratios"].split())
        scenario = header["scenario"]
        negatives = int(header["negatives_per_query"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad split manifest header: {exc}") from exc
    if version != MANIFEST_VERSION:
        raise ParseError(f"unsupported split manifest version {version}")

    def users_of(dom, section):
        s = domains[dom]
        rows = sections.get(f"{section} {dom}", [])
        ids = rows[0].split() if rows and rows[0] else []
        return np.array([s.user_index[uid] for uid in ids], dtype=np.int64)

    def edges_of(dom, section):
        s = domains[dom]
        out = []
        for line in sections.get(f"{section} {dom}", []):
            u_id, i_id = line.split("\t")
            out.append((s.user_index[u_id], s.item_index[i_id]))
        return out

    def queries_of(dom, section):
        s = domains[dom]
        out = []
        for line in sections.get(f"{section} {dom}", []):
            u_id, pos_id, negs = line.split("\t")
            negatives_idx = np.array([s.item_index[j] for j in negs.split()], dtype=np.int64)
            out.append(Query(user=s.user_index[u_id], positive=s.item_index[pos_id],
                             negatives=negatives_idx))
        return out

    train_edges = {dom: edges_of(dom, "train_edges") for dom in domains}
    context_edges = {
        dom: (edges_of(dom, "context_edges") if scenario == "non_overlapped"
              else train_edges[dom])
        for dom in domains
    }
    return DatasetSplit(
        scenario=scenario,
        seed=seed,
        ratios=ratios,
        negatives_per_query=negatives,
        overlap_users={dom: users_of(dom, "overlap_users") for dom in domains},
        train_edges=train_edges,
        context_edges=context_edges,
        test_queries={dom: queries_of(dom, "test_queries") for dom in domains},
        validation_queries={dom: queries_of(dom, "validation_queries") for dom in domains},
        train_group_users={dom: users_of(dom, "train_group_users") for dom in domains},
    )


# ---------------------------------------------------------------------------
# synthetic two-domain generator with known ground truth

@dataclass
class SyntheticConfig:
    users_per_domain: int = 100
    overlap: int = 50
    items_per_domain: int = 80
    d_shared: int = 4
    d_variant: int = 2
    map_family: str = "affine"      # "affine" or "monotone"
    map_scale: float = 1.0
    map_shift: float = 0.0
    shared_weight: float = 1.0      # correlation knob: weight on shared dims
    variant_weight: float = 1.0
    temperature: float = 1.0
    bias: float = 1.2               # subtracted from logits; controls density
    bias_y: float | None = None     # optional domain-Y override (sparser target)
    noise: float = 0.0              # additive noise on mapped variants

    def validate(self):
        if self.users_per_domain < 1 or self.items_per_domain < 1:
            raise ValueError("users_per_domain and items_per_domain must be >= 1")
        if not (0 < self.overlap <= self.users_per_domain):
            raise ValueError(
                f"overlap must be in (0, users_per_domain]; got overlap={self.overlap}, "
                f"users_per_domain={self.users_per_domain}"
            )
        if self.d_shared < 1 or self.d_variant < 1:
            raise ValueError("latent dims must be >= 1")
        if self.map_family not in ("affine", "monotone"):
            raise ValueError(f"unknown map family {self.map_family!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class SyntheticGroundTruth:
    """Generator-side latents and the invertible map linking variant factors."""

    config: SyntheticConfig
    shared_latents: np.ndarray        # overlap x d_shared
    variant_latents_x: np.ndarray     # overlap x d_variant
    variant_latents_y: np.ndarray     # overlap x d_variant
    true_map_params: dict             # {"family", "scale", "shift"}
    user_latents: dict                # domain -> users x (d_shared + d_variant)
    item_latents: dict                # domain -> items x (d_shared + d_variant)
    overlap_ids: list


def apply_true_map(params: dict, v: np.ndarray) -> np.ndarray:
    """Evaluate the generator's invertible variant-factor map."""
    if params["family"] == "affine":
        return params["scale"] * v + params["shift"]
    if params["family"] == "monotone":
        # Strictly increasing nonlinear map with a closed-form inverse.
        return params["scale"] * v + np.tanh(v) + params["shift"]
    raise ValueError(f"unknown map family {params['family']!r}")


def generate_synthetic(config: SyntheticConfig, seed: int = 0):
    """Two InteractionSets plus ground truth; overlapped users share latents.

    Edges follow a logistic observation model: the interaction probability is
    sigmoid((w_s * <shared, item_shared> + w_v * <variant, item_variant> - bias)
    / temperature). Every user and item is guaranteed at least one edge by
    adding its highest-probability pair when sampling leaves it empty.
    """
    config.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 10])))
    n, m = config.users_per_domain, config.items_per_domain
    n_over = config.overlap
    ds, dv = config.d_shared, config.d_variant

    shared_over = rng.standard_normal((n_over, ds))
    variant_over_x = rng.standard_normal((n_over, dv))
    map_params = {"family": config.map_family, "scale": float(config.map_scale),
                  "shift": float(config.map_shift)}
    variant_over_y = apply_true_map(map_params, variant_over_x)
    if config.noise > 0:
        variant_over_y = variant_over_y + config.noise * rng.standard_normal((n_over, dv))

    user_latents = {}
    interactions = {}
    overlap_ids = [f"u{j:04d}" for j in range(n_over)]
    item_latents = {}
    for dom_pos, dom in enumerate(("x", "y")):
        shared_rest = rng.standard_normal((n - n_over, ds))
        variant_rest = rng.standard_normal((n - n_over, dv))
        shared_all = np.vstack([shared_over, shared_rest])
        variant_all = np.vstack([variant_over_x if dom == "x" else variant_over_y,
                                 variant_rest])
        lat = np.hstack([shared_all, variant_all])
        user_latents[dom] = lat
        items = rng.standard_normal((m, ds + dv))
        item_latents[dom] = items

        weights = np.concatenate([
            np.full(ds, config.shared_weight), np.full(dv, config.variant_weight)
        ])
        bias = config.bias if (dom == "x" or config.bias_y is None) else config.bias_y
        logits = ((lat * weights) @ items.T - bias) / config.temperature
        probs = 1.0 / (1.0 + np.exp(-logits))
        draws = rng.random((n, m)) < probs

        # Guarantee nonzero degree everywhere.
        for u in np.flatnonzero(~draws.any(axis=1)):
            draws[u, int(np.argmax(probs[u]))] = True
        for i in np.flatnonzero(~draws.any(axis=0)):
            draws[int(np.argmax(probs[:, i])), i] = True

        user_ids = overlap_ids + [f"{dom}u{j:04d}" for j in range(n - n_over)]
        item_ids = [f"{dom}i{j:04d}" for j in range(m)]
        edges = [(int(u), int(i)) for u, i in zip(*np.nonzero(draws))]
        interactions[dom] = InteractionSet(
            domain_id=dom,
            users=user_ids,
            items=item_ids,
            edges=edges,
            user_index={uid: j for j, uid in enumerate(user_ids)},
            item_index={iid: j for j, iid in enumerate(item_ids)},
        )

    truth = SyntheticGroundTruth(
        config=config,
        shared_latents=shared_over,
        variant_latents_x=variant_over_x,
        variant_latents_y=variant_over_y,
        true_map_params=map_params,
        user_latents=user_latents,
        item_latents=item_latents,
        overlap_ids=overlap_ids,
    )
    return interactions["x"], interactions["y"], truth


def write_ground_truth(path, truth: SyntheticGroundTruth, command: str = "") -> None:
    cfg = truth.config
    meta = {
        "kind": "synthetic_ground_truth",
        "command": command,
        "config": {
            "users_per_domain": cfg.users_per_domain, "overlap": cfg.overlap,
            "items_per_domain": cfg.items_per_domain, "d_shared": cfg.d_shared,
            "d_variant": cfg.d_variant, "map_family": cfg.map_family,
            "map_scale": cfg.map_scale, "map_shift": cfg.map_shift,
            "shared_weight": cfg.shared_weight, "variant_weight": cfg.variant_weight,
            "temperature": cfg.temperature, "bias": cfg.bias, "bias_y": cfg.bias_y,
            "noise": cfg.noise,
        },
        "true_map_params": truth.true_map_params,
        "overlap_ids": truth.overlap_ids,
    }
    arrays = {
        "shared_latents": truth.shared_latents,
        "variant_latents_x": truth.variant_latents_x,
        "variant_latents_y": truth.variant_latents_y,
        "user_latents_x": truth.user_latents["x"],
        "user_latents_y": truth.user_latents["y"],
        "item_latents_x": truth.item_latents["x"],
        "item_latents_y": truth.item_latents["y"],
    }
    serialization.save_arrays(path, arrays, meta)


def load_ground_truth(path) -> SyntheticGroundTruth:
    arrays, meta = serialization.load_arrays(path)
    if meta.get("kind") != "synthetic_ground_truth":
        raise DataError(f"{path}: not a synthetic ground-truth file")
    cfg = SyntheticConfig(**meta["config"])
    return SyntheticGroundTruth(
        config=cfg,
        shared_latents=arrays["shared_latents"],
        variant_latents_x=arrays["variant_latents_x"],
        variant_latents_y=arrays["variant_latents_y"],
        true_map_params=meta["true_map_params"],
        user_latents={"x": arrays["user_latents_x"], "y": arrays["user_latents_y"]},
        item_latents={"x": arrays["item_latents_x"], "y": arrays["item_latents_y"]},
        overlap_ids=list(meta["overlap_ids"]),
    )
