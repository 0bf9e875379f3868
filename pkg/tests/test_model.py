import numpy as np
import pytest

import crossrec.autodiff as ad
from crossrec import checks, objective
from crossrec import model as model_mod


def test_model_config_validation():
    with pytest.raises(ValueError):
        model_mod.ModelConfig(encoder_layers=1).validate()
    with pytest.raises(ValueError):
        model_mod.ModelConfig(shallow_layers=3, encoder_layers=3).validate()
    with pytest.raises(ValueError):
        model_mod.ModelConfig(variant="E").validate()


def test_deep_width_per_variant():
    cfg = model_mod.ModelConfig(encoder_layers=3, shallow_layers=2, embed_dim=4)
    assert cfg.deep_width == 4
    cfg_d = model_mod.ModelConfig(encoder_layers=3, shallow_layers=2, embed_dim=4,
                                  variant="D")
    assert cfg_d.deep_width == 12


def test_init_is_deterministic():
    cfg = model_mod.ModelConfig(embed_dim=4, flow_hidden=8)
    a = model_mod.init_direction_model(cfg, {"x": 5, "y": 6}, {"x": 7, "y": 8},
                                       "xy", seed=3)
    b = model_mod.init_direction_model(cfg, {"x": 5, "y": 6}, {"x": 7, "y": 8},
                                       "xy", seed=3)
    assert set(a.params) == set(b.params)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])


def test_direction_labels():
    cfg = model_mod.ModelConfig(embed_dim=2, flow_hidden=4)
    xy = model_mod.init_direction_model(cfg, {"x": 3, "y": 3}, {"x": 3, "y": 3},
                                        "xy", 0)
    yx = model_mod.init_direction_model(cfg, {"x": 3, "y": 3}, {"x": 3, "y": 3},
                                        "yx", 0)
    assert (xy.source, xy.target) == ("x", "y")
    assert (yx.source, yx.target) == ("y", "x")


def test_effective_weights_gating():
    weights = objective.LossWeights()
    for variant, align, flow_w in (("full", 1.0, 1.0), ("A", 0.0, 0.0),
                                   ("B", 1.0, 0.0), ("C", 1.0, 0.0),
                                   ("D", 0.0, 1.0)):
        cfg = model_mod.ModelConfig(variant=variant)
        eff = model_mod.effective_weights(cfg, weights)
        assert (eff.alignment, eff.flow) == (align, flow_w), variant


def _loss_for_variant(variant, batch_override=None, weights=None):
    mdl, graphs, batch = checks.toy_instance(variant=variant)
    if batch_override:
        for key, value in batch_override.items():
            setattr(batch, key, value)
    w = weights or objective.LossWeights()
    total, report, _ = model_mod.training_losses(mdl, mdl.params, graphs, batch, w)
    return float(ad.detach(total)), report


def test_variant_a_equals_zero_weighted_full_without_cross():
    # the ablation-nesting invariant, component by component
    total_a, report_a = _loss_for_variant("A")
    total_full, report_full = _loss_for_variant(
        "full",
        batch_override={"cross_overlap": None},
        weights=objective.LossWeights(alignment=0.0, flow=0.0))
    assert total_a == total_full
    assert report_a.l_s == report_full.l_s == 0.0
    assert report_a.l_g == report_full.l_g == 0.0
    assert report_a.vib_x == report_full.vib_x
    assert report_a.vib_y == report_full.vib_y


def test_variant_gating_of_components():
    _, report_full = _loss_for_variant("full")
    assert report_full.l_s != 0.0 and report_full.l_g != 0.0

    _, report_a = _loss_for_variant("A")
    assert report_a.l_s == 0.0 and report_a.l_g == 0.0

    _, report_b = _loss_for_variant("B")
    assert report_b.l_g == 0.0 and report_b.l_s != 0.0

    _, report_c = _loss_for_variant("C")
    assert report_c.l_g == 0.0 and report_c.l_s != 0.0

    _, report_d = _loss_for_variant("D")
    assert report_d.l_s == 0.0


def test_variant_b_aligns_both_subspaces():
    _, report_b = _loss_for_variant("B")
    _, report_c = _loss_for_variant("C")
    # B adds a second (deep-subspace) alignment term on top of the shallow one
    assert report_b.l_s != report_c.l_s


def test_variant_c_bypasses_flow():
    mdl, graphs, batch = checks.toy_instance()
    mdl.cfg.variant = "C"
    # make the flow non-identity; the bypass must ignore it
    mdl.params["flow_cpl0_b2"] = mdl.params["flow_cpl0_b2"] + np.array([2.0, 1.0])
    _, _, factors = model_mod.training_losses(mdl, mdl.params, graphs, batch,
                                              objective.LossWeights())
    src = mdl.source
    state = model_mod.eval_state(mdl, graphs)
    assert np.array_equal(state["z_v_transported"], state["z_v"][src])


def test_eval_state_deterministic_and_pure(tiny_checkpoint, tiny_dataset, tiny_split):
    from crossrec import training
    interactions, _ = tiny_dataset
    checkpoint, _ = tiny_checkpoint
    graphs = training.build_graphs(interactions, tiny_split, "symmetric", "context")
    mdl = checkpoint.models["xy"]
    s1 = model_mod.eval_state(mdl, graphs)
    s2 = model_mod.eval_state(mdl, graphs)
    for dom in ("x", "y"):
        assert np.array_equal(s1["z_s"][dom], s2["z_s"][dom])
        assert np.array_equal(s1["item_full"][dom], s2["item_full"][dom])
    assert np.all(s1["z_v"]["x"] > 0) and np.all(s1["z_v"]["x"] < 1)


def test_scoring_rows_dimension_matching():
    cfg = model_mod.ModelConfig(encoder_layers=3, shallow_layers=2, embed_dim=2)
    shallow = np.ones((2, 4))
    deep = np.ones((2, 2))
    item_full = np.ones((2, 6))
    item_deep = np.ones((2, 2))
    u, v = model_mod.user_scoring_rows(shallow, deep, item_full, item_deep, cfg)
    assert u.shape[1] == v.shape[1] == 6

    cfg.score_mode = "deep_only"
    u, v = model_mod.user_scoring_rows(shallow, deep, item_full, item_deep, cfg)
    assert u.shape[1] == v.shape[1] == 2
