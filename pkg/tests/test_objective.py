import math

import numpy as np
import pytest

import crossrec.autodiff as ad
from crossrec import objective
from crossrec.errors import NumericError


def test_score_orthogonal_vectors():
    assert objective.score([1.0, 0.0], [0.0, 1.0]) == 0.5


def test_score_log3_values():
    u = np.array([math.log(3.0)])
    v = np.array([1.0])
    assert abs(objective.score(u, v) - 0.75) < 1e-12
    assert abs(objective.score(-u, v) - 0.25) < 1e-12


def test_score_range_and_validation():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = objective.score(rng.standard_normal(4), rng.standard_normal(4))
        assert 0.0 < s < 1.0
    with pytest.raises(ValueError):
        objective.score([1.0], [1.0, 2.0])


def test_vib_bce_half_half():
    user = np.array([[1.0, 0.0]])
    items = np.array([[0.0, 1.0], [0.0, 2.0]])
    bound = objective.vib_bce(user, items, [(0, 0)], [(0, 1)])
    assert abs(float(ad.detach(bound)) - 2 * math.log(0.5)) < 1e-12
    assert abs(float(ad.detach(bound)) - (-1.386294)) < 1e-6


def test_vib_bce_perfect_fit_limit():
    user = np.array([[30.0]])
    items = np.array([[1.0], [-1.0]])
    bound = float(ad.detach(objective.vib_bce(user, items, [(0, 0)], [(0, 1)])))
    assert -1e-6 < bound < 0.0


def test_vib_bce_empty_edges():
    user = np.zeros((1, 2))
    items = np.zeros((1, 2))
    assert objective.vib_bce(user, items, [], []) == 0.0


def test_vib_bce_clamps_extreme_scores():
    user = np.array([[1000.0]])
    items = np.array([[1.0]])
    bound = float(ad.detach(objective.vib_bce(user, items, [], [(0, 0)])))
    assert np.isfinite(bound)
    assert abs(bound - math.log(objective.SCORE_EPS)) < 1e-9


def test_vib_bce_monotonicity():
    items = np.array([[1.0]])
    base_pos = float(ad.detach(objective.vib_bce(np.array([[0.2]]), items, [(0, 0)], [])))
    higher_pos = float(ad.detach(objective.vib_bce(np.array([[0.4]]), items, [(0, 0)], [])))
    assert higher_pos > base_pos
    base_neg = float(ad.detach(objective.vib_bce(np.array([[0.2]]), items, [], [(0, 0)])))
    higher_neg = float(ad.detach(objective.vib_bce(np.array([[0.4]]), items, [], [(0, 0)])))
    assert higher_neg < base_neg


def test_total_loss_zero_components():
    total, report = objective.total_loss(0.0, 0.0, 0.0, 0.0)
    assert float(ad.detach(total)) == 0.0
    assert report.total == 0.0


def test_total_loss_sign_convention():
    total, report = objective.total_loss(0.1, 2.0, -1.0, -1.5)
    assert abs(report.total - 4.6) < 1e-12
    assert report.l_s == 0.1 and report.l_g == 2.0
    assert report.vib_x == -1.0 and report.vib_y == -1.5


def test_total_loss_weighted_additivity():
    rng = np.random.default_rng(1)
    for _ in range(10):
        l_s, l_g, vx, vy = rng.standard_normal(4)
        w = objective.LossWeights(alignment=0.3, flow=1.7, recon_x=0.5, recon_y=2.0)
        _, report = objective.total_loss(l_s, l_g, vx, vy, w)
        expected = 0.3 * l_s + 1.7 * l_g + 0.5 * (-vx) + 2.0 * (-vy)
        assert abs(report.total - expected) < 1e-15


def test_total_loss_zero_flow_weight_removes_term():
    w = objective.LossWeights(flow=0.0)
    _, report = objective.total_loss(0.5, 123.0, -1.0, -1.0, w)
    assert abs(report.total - (0.5 + 1.0 + 1.0)) < 1e-12


def test_total_loss_rejects_non_finite():
    with pytest.raises(NumericError, match="l_g"):
        objective.total_loss(0.0, float("nan"), 0.0, 0.0)
    with pytest.raises(NumericError, match="vib_x"):
        objective.total_loss(0.0, 0.0, float("inf"), 0.0)
