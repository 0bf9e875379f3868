import math

import numpy as np
import pytest

import crossrec.autodiff as ad
from crossrec import alignment


def double_loop_mmd2(x, y, sigma, mode):
    """Independent oracle: explicit loops over the definitions."""
    n = x.shape[0]
    k = alignment.gaussian_kernel
    sxx = sum(k(x[i], x[j], sigma) for i in range(n) for j in range(n))
    syy = sum(k(y[i], y[j], sigma) for i in range(n) for j in range(n))
    sxy = sum(k(x[i], y[j], sigma) for i in range(n) for j in range(n))
    sxx_off = sxx - sum(k(x[i], x[i], sigma) for i in range(n))
    syy_off = syy - sum(k(y[i], y[i], sigma) for i in range(n))
    sxy_off = sxy - sum(k(x[i], y[i], sigma) for i in range(n))
    h = 1.0 / (n * (n - 1))
    if mode == "unbiased":
        return h * (sxx_off - 2.0 * sxy_off + syy_off)
    return h * (sxx - sxy + syy)


def test_gaussian_kernel_values():
    assert alignment.gaussian_kernel([1.0, 2.0], [1.0, 2.0], 3.0) == 1.0
    a, b = np.array([0.0]), np.array([1.0])
    assert abs(alignment.gaussian_kernel(a, b, 1.0) - math.exp(-0.5)) < 1e-12
    assert abs(alignment.gaussian_kernel(a, b, 10.0) - math.exp(-1 / 200)) < 1e-12
    assert abs(alignment.gaussian_kernel(a, b, 1.0) - 0.606531) < 1e-6
    assert abs(alignment.gaussian_kernel(a, b, 10.0) - 0.995012) < 1e-6


def test_gaussian_kernel_symmetry_and_range():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.standard_normal(4), rng.standard_normal(4)
        v = alignment.gaussian_kernel(a, b, 1.3)
        assert 0.0 < v <= 1.0
        assert v == alignment.gaussian_kernel(b, a, 1.3)


def test_gaussian_kernel_validation():
    with pytest.raises(ValueError):
        alignment.gaussian_kernel([1.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        alignment.gaussian_kernel([1.0, 2.0], [1.0], 1.0)


def test_sample_group_exhaustion_and_determinism():
    rng = np.random.default_rng(1)
    feats = rng.standard_normal((10, 3))
    g = alignment.sample_group(feats, 10, 7)
    assert sorted(g.indices.tolist()) == list(range(10))
    g2 = alignment.sample_group(feats, 10, 7)
    assert np.array_equal(g.indices, g2.indices)
    g16 = alignment.sample_group(rng.standard_normal((32, 3)), 16, 0)
    assert g16.rows.shape == (16, 3)
    with pytest.raises(ValueError):
        alignment.sample_group(feats, 11, 0)


def test_mmd2_hand_values():
    gx = np.array([[0.0], [0.0]])
    gy = np.array([[1.0], [1.0]])
    unbiased = alignment.mmd2(gx, gy, alignment.KernelConfig(1.0, "unbiased"))
    assert abs(unbiased - (2.0 - 2.0 * math.exp(-0.5))) < 1e-12
    assert abs(unbiased - 0.786939) < 1e-6
    inclusive = alignment.mmd2(gx, gy, alignment.KernelConfig(1.0, "inclusive"))
    assert abs(inclusive - 0.5 * (8.0 - 4.0 * math.exp(-0.5))) < 1e-12
    assert abs(inclusive - 2.786939) < 1e-6


def test_mmd2_nullity_unbiased_only():
    rng = np.random.default_rng(2)
    g = rng.standard_normal((16, 4))
    assert abs(alignment.mmd2(g, g.copy(), alignment.KernelConfig(1.0, "unbiased"))) < 1e-10
    # the diagonal-inclusive mode provably cannot vanish on identical groups
    assert alignment.mmd2(g, g.copy(), alignment.KernelConfig(1.0, "inclusive")) > 1e-3


def test_mmd2_matches_double_loop_oracle():
    rng = np.random.default_rng(3)
    for n in (2, 3, 5, 8):
        for mode in ("unbiased", "inclusive"):
            x = rng.standard_normal((n, 4))
            y = rng.standard_normal((n, 4))
            fast = alignment.mmd2(x, y, alignment.KernelConfig(0.9, mode))
            slow = double_loop_mmd2(x, y, 0.9, mode)
            assert abs(fast - slow) < 1e-12


def test_mmd2_symmetry_both_modes():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, 3))
    y = rng.standard_normal((6, 3))
    for mode in ("unbiased", "inclusive"):
        cfg = alignment.KernelConfig(1.1, mode)
        assert abs(alignment.mmd2(x, y, cfg) - alignment.mmd2(y, x, cfg)) < 1e-12


def test_mmd2_unbiased_in_expectation():
    values = []
    for seed in range(150):
        rng = np.random.default_rng(10_000 + seed)
        x = rng.standard_normal((16, 4))
        y = rng.standard_normal((16, 4))
        values.append(alignment.mmd2(x, y, alignment.KernelConfig(1.0, "unbiased")))
    values = np.array(values)
    stderr = values.std(ddof=1) / math.sqrt(values.size)
    assert abs(values.mean()) < 3.0 * stderr


def test_mmd2_validation():
    cfg = alignment.KernelConfig(1.0, "unbiased")
    with pytest.raises(ValueError):
        alignment.mmd2(np.zeros((1, 2)), np.zeros((1, 2)), cfg)
    with pytest.raises(ValueError):
        alignment.mmd2(np.zeros((3, 2)), np.zeros((4, 2)), cfg)
    with pytest.raises(ValueError):
        alignment.KernelConfig(-1.0, "unbiased").validate()
    with pytest.raises(ValueError):
        alignment.KernelConfig(1.0, "bogus").validate()


def test_differentiable_path_matches_numeric():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((8, 3))
    y = rng.standard_normal((8, 3))
    for mode in ("unbiased", "inclusive"):
        numeric = alignment.mmd2(x, y, alignment.KernelConfig(0.8, mode))
        graph_val = float(ad.detach(alignment.mmd2_from_features(x, y, 0.8, mode)))
        assert abs(numeric - graph_val) < 1e-10


def test_differentiable_mmd_gradient():
    rng = np.random.default_rng(6)
    x0 = rng.standard_normal((4, 2))
    y0 = rng.standard_normal((4, 2))
    x = ad.parameter(x0.copy())
    out = alignment.mmd2_from_features(x, y0, 1.0)
    ad.backward(out)
    step = 1e-6
    flat = x0.reshape(-1)
    grad = x.grad.reshape(-1)
    for pos in range(flat.size):
        orig = flat[pos]
        flat[pos] = orig + step
        up = float(ad.detach(alignment.mmd2_from_features(x0, y0, 1.0)))
        flat[pos] = orig - step
        down = float(ad.detach(alignment.mmd2_from_features(x0, y0, 1.0)))
        flat[pos] = orig
        fd = (up - down) / (2 * step)
        assert abs(grad[pos] - fd) < 1e-6


def test_median_bandwidth_positive():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((5, 3))
    y = rng.standard_normal((6, 3))
    sigma = alignment.median_bandwidth(x, y)
    assert sigma > 0
    # degenerate pooled set still yields a usable bandwidth
    z = np.zeros((4, 3))
    assert alignment.median_bandwidth(z, z) == 1.0
