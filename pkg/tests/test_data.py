import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossrec import data
from crossrec.errors import DataError, ParseError


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# ingestion

def test_load_interactions_counts(tmp_path):
    f = tmp_path / "edges.tsv"
    write_lines(f, ["a\t1", "a\t2", "b\t1"])
    s = data.load_interactions(f, "x")
    assert s.n_users == 2 and s.n_items == 2 and len(s.edges) == 3
    assert s.users == ["a", "b"] and s.items == ["1", "2"]


def test_load_interactions_dedup(tmp_path):
    f = tmp_path / "edges.tsv"
    write_lines(f, ["a\t1", "a\t1"])
    s = data.load_interactions(f, "x")
    assert len(s.edges) == 1


def test_load_interactions_malformed_line_number(tmp_path):
    f = tmp_path / "edges.tsv"
    write_lines(f, ["a\t1", "broken line", "b\t2"])
    with pytest.raises(ParseError, match="line 2"):
        data.load_interactions(f, "x")


def test_load_interactions_empty_file(tmp_path):
    f = tmp_path / "edges.tsv"
    f.write_text("", encoding="utf-8")
    with pytest.raises(DataError, match="empty dataset"):
        data.load_interactions(f, "x")


@pytest.mark.skipif("CROSSREC_AMAZON_GAME_FILE" not in os.environ,
                    reason="full-scale interaction file not available at desk scale")
def test_load_interactions_full_scale_counts():
    s = data.load_interactions(os.environ["CROSSREC_AMAZON_GAME_FILE"], "x")
    assert (s.n_users, s.n_items, len(s.edges)) == (25025, 12319, 157721)


def test_write_then_load_round_trip(tmp_path):
    f = tmp_path / "edges.tsv"
    write_lines(f, ["a\t1", "a\t2", "b\t1"])
    s = data.load_interactions(f, "x")
    g = tmp_path / "copy.tsv"
    data.write_interactions(g, s)
    assert f.read_text() == g.read_text()


# ---------------------------------------------------------------------------
# adjacency

def make_set(edges, n_users, n_items):
    users = [f"u{i}" for i in range(n_users)]
    items = [f"i{i}" for i in range(n_items)]
    return data.InteractionSet("x", users, items, edges,
                               {u: i for i, u in enumerate(users)},
                               {v: i for i, v in enumerate(items)})


def test_adjacency_symmetric_degrees():
    s = make_set([(0, 0), (1, 0), (1, 1)], 2, 2)
    adj = data.build_adjacency(s, "symmetric").adjacency.toarray()
    assert abs(adj[0, 0] - 1.0 / np.sqrt(1 * 2)) < 1e-12
    assert abs(adj[1, 0] - 0.5) < 1e-12
    assert abs(adj[1, 1] - 1.0 / np.sqrt(2 * 1)) < 1e-12


def test_adjacency_single_edge():
    s = make_set([(0, 0)], 1, 1)
    adj = data.build_adjacency(s, "symmetric").adjacency.toarray()
    assert adj[0, 0] == 1.0


def test_adjacency_row_normalization():
    s = make_set([(0, 0), (0, 1)], 1, 2)
    adj = data.build_adjacency(s, "row").adjacency.toarray()
    assert np.allclose(adj, [[0.5, 0.5]])


def test_adjacency_unknown_normalization():
    s = make_set([(0, 0)], 1, 1)
    with pytest.raises(ValueError):
        data.build_adjacency(s, "weird")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 9)),
                min_size=1, max_size=40, unique=True))
def test_adjacency_spectral_bound(edges):
    n_u = max(e[0] for e in edges) + 1
    n_i = max(e[1] for e in edges) + 1
    s = make_set(list(edges), n_u, n_i)
    adj = data.build_adjacency(s, "symmetric").adjacency.toarray()
    largest = np.linalg.svd(adj, compute_uv=False)[0]
    assert largest <= 1.0 + 1e-9


# ---------------------------------------------------------------------------
# splits and negatives

def test_split_exact_floor_counts(tiny_dataset):
    interactions, _ = tiny_dataset
    split = data.split_overlapped(interactions["x"], interactions["y"],
                                  seed=3, negatives=8)
    n_over = split.overlap_users["x"].size
    assert n_over == 16
    assert len(split.test_queries["x"]) == 3   # floor(0.2 * 16)
    assert len(split.validation_queries["x"]) == 3
    assert split.train_group_users["x"].size == 10


def test_split_deterministic(tiny_dataset):
    interactions, _ = tiny_dataset
    a = data.split_overlapped(interactions["x"], interactions["y"], seed=3, negatives=8)
    b = data.split_overlapped(interactions["x"], interactions["y"], seed=3, negatives=8)
    assert a.train_edges == b.train_edges
    for dom in ("x", "y"):
        for qa, qb in zip(a.test_queries[dom], b.test_queries[dom]):
            assert qa.user == qb.user and qa.positive == qb.positive
            assert np.array_equal(qa.negatives, qb.negatives)


def test_split_partition_and_negative_purity(tiny_dataset):
    interactions, _ = tiny_dataset
    split = data.split_overlapped(interactions["x"], interactions["y"],
                                  seed=3, negatives=8)
    for dom in ("x", "y"):
        s = interactions[dom]
        positives = s.positives_by_user()
        held = {}
        for queries in (split.test_queries[dom], split.validation_queries[dom]):
            for q in queries:
                held[q.user] = q.positive
                # negatives never observed positives
                assert not (set(q.negatives.tolist()) & positives[q.user])
                # held-out positive is a real positive
                assert q.positive in positives[q.user]
        train_by_user = {}
        for u, i in split.train_edges[dom]:
            train_by_user.setdefault(u, set()).add(i)
        for u in range(s.n_users):
            expected = set(positives[u])
            got = set(train_by_user.get(u, set()))
            if u in held:
                assert held[u] not in got
                got.add(held[u])
            assert got == expected


def test_split_bad_ratios(tiny_dataset):
    interactions, _ = tiny_dataset
    with pytest.raises(ValueError):
        data.split_overlapped(interactions["x"], interactions["y"],
                              ratios=(0.5, 0.2, 0.2))


def test_split_overlap_too_small():
    # Two users overlap; 20% of 2 floors to zero test users.
    sx = make_set([(0, 0), (0, 1), (1, 0), (1, 1)], 2, 2)
    sy = data.InteractionSet("y", ["u0", "u1"], ["j0", "j1"],
                             [(0, 0), (0, 1), (1, 1), (1, 0)],
                             {"u0": 0, "u1": 1}, {"j0": 0, "j1": 1})
    with pytest.raises(DataError, match="too small"):
        data.split_overlapped(sx, sy, seed=0, negatives=1)


def test_non_overlap_mode_removes_overlap_from_training(tiny_dataset):
    interactions, _ = tiny_dataset
    split = data.split_overlapped(interactions["x"], interactions["y"],
                                  seed=3, negatives=8, non_overlap=True)
    assert split.scenario == "non_overlapped"
    for dom in ("x", "y"):
        overlap = set(split.overlap_users[dom].tolist())
        train_users = {u for u, _ in split.train_edges[dom]}
        assert not (train_users & overlap)
        # context edges add the query users' non-held-out edges
        context_users = {u for u, _ in split.context_edges[dom]}
        query_users = {q.user for q in split.test_queries[dom]}
        assert query_users <= context_users


def test_sample_negatives_forced_set():
    s = make_set([(0, i) for i in range(5)], 1, 1004)
    negs = data.sample_negatives(0, "x", 999, 7, {"x": s})
    assert negs.size == 999 and len(set(negs.tolist())) == 999
    assert not (set(negs.tolist()) & set(range(5)))


def test_sample_negatives_deterministic():
    s = make_set([(0, i) for i in range(5)], 1, 50)
    a = data.sample_negatives(0, "x", 20, 7, {"x": s})
    b = data.sample_negatives(0, "x", 20, 7, {"x": s})
    assert np.array_equal(a, b)


def test_sample_negatives_insufficient():
    s = make_set([(0, i) for i in range(5)], 1, 10)
    with pytest.raises(DataError, match="negatives"):
        data.sample_negatives(0, "x", 6, 7, {"x": s})


# ---------------------------------------------------------------------------
# synthetic generator

def test_synthetic_overlap_ids_shared(tiny_dataset):
    interactions, truth = tiny_dataset
    common = set(interactions["x"].users) & set(interactions["y"].users)
    assert common == set(truth.overlap_ids)
    assert len(common) == truth.config.overlap


def test_synthetic_identity_map():
    config = data.SyntheticConfig(users_per_domain=20, overlap=10,
                                  items_per_domain=15, d_shared=2, d_variant=2)
    _, _, truth = data.generate_synthetic(config, seed=0)
    assert np.array_equal(truth.variant_latents_x, truth.variant_latents_y)


def test_synthetic_scale_two_map():
    config = data.SyntheticConfig(users_per_domain=20, overlap=10,
                                  items_per_domain=15, d_shared=2, d_variant=2,
                                  map_scale=2.0)
    _, _, truth = data.generate_synthetic(config, seed=0)
    assert np.allclose(truth.variant_latents_y, 2.0 * truth.variant_latents_x)


def test_synthetic_every_entity_has_edge(tiny_dataset):
    interactions, _ = tiny_dataset
    for dom in ("x", "y"):
        s = interactions[dom]
        assert {u for u, _ in s.edges} == set(range(s.n_users))
        assert {i for _, i in s.edges} == set(range(s.n_items))


def test_synthetic_degenerate_config():
    with pytest.raises(ValueError, match="overlap"):
        data.SyntheticConfig(users_per_domain=100, overlap=200).validate()
    with pytest.raises(ValueError):
        data.SyntheticConfig(items_per_domain=0).validate()


def test_monotone_map_is_monotone():
    params = {"family": "monotone", "scale": 1.5, "shift": 0.2}
    grid = np.linspace(-4, 4, 101)
    mapped = data.apply_true_map(params, grid)
    assert np.all(np.diff(mapped) > 0)


# ---------------------------------------------------------------------------
# manifests and ground-truth files

def test_split_manifest_round_trip(tmp_path, tiny_dataset, tiny_split):
    interactions, _ = tiny_dataset
    path = tmp_path / "split.txt"
    data.write_split_manifest(path, tiny_split, interactions["x"], interactions["y"],
                              command="test")
    loaded = data.load_split_manifest(path, interactions["x"], interactions["y"])
    assert loaded.scenario == tiny_split.scenario
    assert loaded.seed == tiny_split.seed
    assert loaded.train_edges == tiny_split.train_edges
    for dom in ("x", "y"):
        assert np.array_equal(loaded.overlap_users[dom], tiny_split.overlap_users[dom])
        for qa, qb in zip(loaded.test_queries[dom], tiny_split.test_queries[dom]):
            assert qa.user == qb.user and qa.positive == qb.positive
            assert np.array_equal(qa.negatives, qb.negatives)


def test_split_manifest_byte_stable(tmp_path, tiny_dataset, tiny_split):
    interactions, _ = tiny_dataset
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    data.write_split_manifest(p1, tiny_split, interactions["x"], interactions["y"], "c")
    data.write_split_manifest(p2, tiny_split, interactions["x"], interactions["y"], "c")
    assert p1.read_bytes() == p2.read_bytes()


def test_ground_truth_round_trip(tmp_path, tiny_dataset):
    _, truth = tiny_dataset
    path = tmp_path / "truth.bin"
    data.write_ground_truth(path, truth)
    loaded = data.load_ground_truth(path)
    assert np.array_equal(loaded.shared_latents, truth.shared_latents)
    assert np.array_equal(loaded.variant_latents_y, truth.variant_latents_y)
    assert loaded.true_map_params == truth.true_map_params
    assert loaded.overlap_ids == truth.overlap_ids
    for dom in ("x", "y"):
        assert np.array_equal(loaded.item_latents[dom], truth.item_latents[dom])
