import copy

import numpy as np
import pytest

from crossrec import data, evaluation, training
from crossrec.errors import ConfigError, DataError, IntegrityError, VersionError


def test_config_file_round_trip(tmp_path, tiny_config):
    path = tmp_path / "train.cfg"
    training.write_config_file(path, tiny_config)
    loaded = training.parse_config_file(path)
    assert loaded == tiny_config


def test_config_file_rejects_unknown_key(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("epochs = 3\nwarp_speed = 9\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="warp_speed"):
        training.parse_config_file(path)


def test_config_file_rejects_bad_value(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("epochs = soon\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="epochs"):
        training.parse_config_file(path)


def test_config_validation():
    with pytest.raises(ConfigError):
        training.TrainConfig(shallow_layers=5).validate()
    with pytest.raises(ConfigError):
        training.TrainConfig(learning_rate=0.0).validate()
    with pytest.raises(ConfigError):
        training.TrainConfig(bandwidth="sometimes").validate()
    training.TrainConfig(bandwidth="2.5").validate()


def test_adam_matches_reference_step():
    params = {"w": np.array([1.0, 2.0])}
    opt = training.Adam(params, lr=0.1)
    grads = {"w": np.array([0.5, -1.0])}
    opt.step(params, grads)
    # first Adam step moves each coordinate by lr * g / (|g| + eps)
    expected = np.array([1.0, 2.0]) - 0.1 * np.array([0.5, -1.0]) / (
        np.abs(np.array([0.5, -1.0])) + 1e-8)
    assert np.allclose(params["w"], expected, atol=1e-9)


def test_fit_bookkeeping(tiny_checkpoint, tiny_config):
    checkpoint, logs = tiny_checkpoint
    assert checkpoint.epochs_run == tiny_config.epochs
    assert len(logs["xy"]) == tiny_config.epochs
    assert set(logs["xy"][0]) == {"epoch", "l_s", "l_g", "vib_x", "vib_y",
                                  "total", "val_mrr"}
    assert "xy" in checkpoint.models and "yx" not in checkpoint.models


def test_fit_deterministic_repeat(tiny_dataset, tiny_split, tiny_config):
    interactions, _ = tiny_dataset
    ckpt_a, logs_a = training.fit(tiny_config, interactions, tiny_split)
    ckpt_b, logs_b = training.fit(tiny_config, interactions, tiny_split)
    assert training.format_log_rows(logs_a["xy"]) == training.format_log_rows(logs_b["xy"])
    for name in ckpt_a.models["xy"].params:
        assert np.array_equal(ckpt_a.models["xy"].params[name],
                              ckpt_b.models["xy"].params[name])


def test_fit_rejects_scenario_mismatch(tiny_dataset, tiny_split, tiny_config):
    interactions, _ = tiny_dataset
    cfg = copy.deepcopy(tiny_config)
    cfg.scenario = "non_overlapped"
    with pytest.raises(ConfigError, match="scenario"):
        training.fit(cfg, interactions, tiny_split)


def test_fit_audits_leaked_positive(tiny_dataset, tiny_config):
    interactions, _ = tiny_dataset
    split = data.split_overlapped(interactions["x"], interactions["y"],
                                  seed=3, negatives=8)
    q = split.test_queries["x"][0]
    split.train_edges["x"] = split.train_edges["x"] + [(q.user, q.positive)]
    cfg = copy.deepcopy(tiny_config)
    cfg.epochs = 1
    with pytest.raises(DataError, match="leaked"):
        training.fit(cfg, interactions, split)


def test_fit_non_overlap_scenario(tiny_dataset, tiny_config):
    interactions, _ = tiny_dataset
    split = data.split_overlapped(interactions["x"], interactions["y"],
                                  seed=3, negatives=8, non_overlap=True)
    cfg = copy.deepcopy(tiny_config)
    cfg.scenario = "non_overlapped"
    cfg.epochs = 2
    checkpoint, logs = training.fit(cfg, interactions, split)
    assert all(np.isfinite(row["total"]) for row in logs["xy"])
    graphs = training.build_graphs(interactions, split, "symmetric", "context")
    report = evaluation.evaluate(checkpoint.models["xy"], interactions, split, graphs)
    assert 0.0 <= report.mrr <= 1.0
    assert report.scenario == "non_overlapped"


def test_fit_non_overlap_audit_catches_overlap_user(tiny_dataset, tiny_config):
    interactions, _ = tiny_dataset
    split = data.split_overlapped(interactions["x"], interactions["y"],
                                  seed=3, negatives=8, non_overlap=True)
    overlapped_user = int(split.overlap_users["x"][0])
    victim_item = next(i for u, i in interactions["x"].edges if u == overlapped_user)
    split.train_edges["x"] = split.train_edges["x"] + [(overlapped_user, victim_item)]
    cfg = copy.deepcopy(tiny_config)
    cfg.scenario = "non_overlapped"
    cfg.epochs = 1
    with pytest.raises(DataError, match="non-overlap"):
        training.fit(cfg, interactions, split)


def test_training_loss_decreases_on_synthetic(tiny_dataset, tiny_split, tiny_config):
    interactions, _ = tiny_dataset
    successes = 0
    for seed in (1, 2, 3):
        cfg = copy.deepcopy(tiny_config)
        cfg.seed = seed
        cfg.epochs = 10
        _, logs = training.fit(cfg, interactions, tiny_split)
        totals = [row["total"] for row in logs["xy"]]
        if totals[-1] < totals[0]:
            successes += 1
    assert successes >= 2


def test_variant_c_logs_zero_flow_component(tiny_dataset, tiny_split, tiny_config):
    interactions, _ = tiny_dataset
    cfg = copy.deepcopy(tiny_config)
    cfg.variant = "C"
    cfg.epochs = 2
    _, logs = training.fit(cfg, interactions, tiny_split)
    assert all(row["l_g"] == 0.0 for row in logs["xy"])


def test_checkpoint_round_trip_bit_exact(tmp_path, tiny_checkpoint, tiny_dataset,
                                         tiny_split):
    from crossrec import model as model_mod
    interactions, _ = tiny_dataset
    checkpoint, _ = tiny_checkpoint
    path = tmp_path / "model.ckpt"
    training.save_checkpoint(checkpoint, path)
    loaded = training.load_checkpoint(path)
    assert loaded.config == checkpoint.config
    assert loaded.best_epoch == checkpoint.best_epoch
    graphs = training.build_graphs(interactions, tiny_split, "symmetric", "context")
    s_orig = model_mod.eval_state(checkpoint.models["xy"], graphs)
    s_load = model_mod.eval_state(loaded.models["xy"], graphs)
    # 100 probe scores must match bit for bit
    rng = np.random.default_rng(0)
    users = rng.integers(0, interactions["y"].n_users, 100)
    items = rng.integers(0, interactions["y"].n_items, 100)
    for u, i in zip(users, items):
        a = float(s_orig["item_full"]["y"][i] @ np.concatenate(
            [s_orig["shallow"]["y"][u], s_orig["z_s"]["x"][u]]))
        b = float(s_load["item_full"]["y"][i] @ np.concatenate(
            [s_load["shallow"]["y"][u], s_load["z_s"]["x"][u]]))
        assert a == b


def test_checkpoint_truncated_file(tmp_path, tiny_checkpoint):
    checkpoint, _ = tiny_checkpoint
    path = tmp_path / "model.ckpt"
    training.save_checkpoint(checkpoint, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 64])
    with pytest.raises(IntegrityError):
        training.load_checkpoint(path)


def test_checkpoint_corrupted_payload(tmp_path, tiny_checkpoint):
    checkpoint, _ = tiny_checkpoint
    path = tmp_path / "model.ckpt"
    training.save_checkpoint(checkpoint, path)
    blob = bytearray(path.read_bytes())
    blob[-8] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(IntegrityError):
        training.load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path, tiny_checkpoint, monkeypatch):
    checkpoint, _ = tiny_checkpoint
    path = tmp_path / "model.ckpt"
    monkeypatch.setattr(training, "CHECKPOINT_VERSION", 99)
    training.save_checkpoint(checkpoint, path)
    monkeypatch.setattr(training, "CHECKPOINT_VERSION", 1)
    with pytest.raises(VersionError, match="version"):
        training.load_checkpoint(path)


def test_checkpoint_save_byte_stable(tmp_path, tiny_checkpoint):
    checkpoint, _ = tiny_checkpoint
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    training.save_checkpoint(checkpoint, p1)
    training.save_checkpoint(checkpoint, p2)
    assert p1.read_bytes() == p2.read_bytes()
