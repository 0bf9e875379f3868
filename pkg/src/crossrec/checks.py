"""Named invariant checks wired to the ``check`` CLI subcommand.

Each check is a callable returning (passed, detail). Families group related
checks so ``--only flow`` style filters work. The suite covers alignment
nullity and oracle agreement, flow round trips and Jacobian/log-determinant
consistency, the change-of-variables normalization, ranking-metric oracles,
and gradient integrity of the composed objective on a toy instance.
"""

import math

import numpy as np

from . import alignment, data, evaluation, flow, objective
from . import autodiff as ad
from . import model as model_mod

__all__ = ["all_checks", "run_checks", "toy_instance", "toy_loss_closure",
           "fd_jacobian_logdet", "pushforward_integral", "brute_force_rank"]


# ---------------------------------------------------------------------------
# reusable oracles

def brute_force_rank(scores: np.ndarray, positive_index: int) -> int:
    """Full-sort rank with ties ordered against the positive."""
    keys = [(-s, 0 if j != positive_index else 1, j)
            for j, s in enumerate(scores)]
    keys.sort()
    for position, (_, _, j) in enumerate(keys, start=1):
        if j == positive_index:
            return position
    raise AssertionError("positive index not found")


def fd_jacobian_logdet(stack, params, point: np.ndarray, step: float = 1e-6) -> float:
    """log|det| of the finite-difference Jacobian of the flow at one point."""
    dim = point.size
    jac = np.zeros((dim, dim))
    for j in range(dim):
        up = point.copy()
        up[j] += step
        down = point.copy()
        down[j] -= step
        f_up, _ = flow.flow_forward(stack, params, up[None, :])
        f_down, _ = flow.flow_forward(stack, params, down[None, :])
        jac[:, j] = (f_up[0] - f_down[0]) / (2.0 * step)
    sign, logabsdet = np.linalg.slogdet(jac)
    if sign == 0:
        raise AssertionError("finite-difference Jacobian is singular")
    return float(logabsdet)


def pushforward_integral(stack, params, mean, var, half_width: float = 8.0,
                         n_grid: int = 4001) -> float:
    """Integral of the implied 1-D source density p(z) = p_base(G(z)) |det DG|."""
    sigma = math.sqrt(float(var[0]))
    # Integrate over the source-side preimage of +-half_width target sigmas.
    lo, _ = flow.flow_inverse(stack, params,
                              np.array([[float(mean[0]) - half_width * sigma]]))
    hi, _ = flow.flow_inverse(stack, params,
                              np.array([[float(mean[0]) + half_width * sigma]]))
    grid = np.linspace(min(lo[0, 0], hi[0, 0]), max(lo[0, 0], hi[0, 0]), n_grid)
    transformed, logdet = flow.flow_forward(stack, params, grid[:, None])
    log_density = (-0.5 * (np.log(2 * np.pi * var[0])
                           + (transformed[:, 0] - mean[0]) ** 2 / var[0])
                   + logdet)
    return float(np.trapezoid(np.exp(log_density), grid))


# ---------------------------------------------------------------------------
# toy instance for end-to-end gradient checking

def toy_instance(seed: int = 7, variant: str = "full"):
    """Deterministic 5-user/6-item two-domain instance plus a frozen batch."""
    edges_x = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 3), (2, 0), (3, 4),
               (3, 5), (4, 2), (4, 5), (0, 3), (2, 5)]
    edges_y = [(0, 5), (0, 2), (1, 0), (1, 3), (2, 1), (2, 4), (3, 3),
               (3, 0), (4, 4), (4, 1), (1, 5), (4, 0)]
    sets = {}
    for dom, edges in (("x", edges_x), ("y", edges_y)):
        users = [f"u{j}" for j in range(5)]
        items = [f"{dom}i{j}" for j in range(6)]
        sets[dom] = data.InteractionSet(
            domain_id=dom, users=users, items=items, edges=edges,
            user_index={u: j for j, u in enumerate(users)},
            item_index={i: j for j, i in enumerate(items)})

    cfg = model_mod.ModelConfig(encoder_layers=3, shallow_layers=2, embed_dim=2,
                                flow_kind="affine_coupling", flow_layers=1,
                                flow_hidden=4, variant=variant)
    mdl = model_mod.init_direction_model(
        cfg, {"x": 5, "y": 5}, {"x": 6, "y": 6}, "xy", seed)
    graphs = {dom: data.build_adjacency(sets[dom]) for dom in ("x", "y")}

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 50])))
    # Nudge the zero-initialized conditioner output layers off their saddle so
    # every flow coordinate carries a nonzero gradient.
    for name in list(mdl.params):
        if name.startswith("flow_") and (name.endswith("w2") or name.endswith("b2")):
            mdl.params[name] = mdl.params[name] + 0.1 * rng.standard_normal(
                mdl.params[name].shape)

    enc_noise = {}
    for dom in ("x", "y"):
        enc_noise[dom] = {}
        for layer in range(cfg.encoder_layers):
            enc_noise[dom][f"user_{layer}"] = rng.standard_normal((5, 2))
            enc_noise[dom][f"item_{layer}"] = rng.standard_normal((6, 2))
    dw = cfg.deep_width
    # User 4 stays own-domain on the target side so that path is exercised too.
    overlap = (np.array([0, 1, 2, 3]), np.array([0, 1, 2, 3]))
    refine_noise = {
        "own_x": rng.standard_normal((5, dw)),
        "own_y": rng.standard_normal((5, dw)),
        "cross": rng.standard_normal((4, dw)),
    }
    neg = {
        "x": [(0, 2), (1, 4), (2, 1), (3, 0), (4, 3)],
        "y": [(0, 4), (1, 2), (2, 0), (3, 5), (4, 2)],
    }
    batch = model_mod.StepBatch(
        pos_edges={"x": edges_x, "y": edges_y},
        neg_edges=neg,
        group_idx={"x": np.array([0, 1, 2, 3]), "y": np.array([1, 2, 3, 4])},
        enc_noise=enc_noise,
        refine_noise=refine_noise,
        cross_overlap=overlap,
        sigma=1.0,
        base_stats=(np.full(dw, 0.5), np.full(dw, 0.05)),
    )
    return mdl, graphs, batch


def toy_loss_closure(mdl, graphs, batch):
    """(value_fn, grads_fn) evaluating the full training loss on the toy."""
    weights = objective.LossWeights()

    def value_fn(params):
        total, _, _ = model_mod.training_losses(mdl, params, graphs, batch, weights)
        return float(ad.detach(total))

    def grads_fn(params):
        params_vars = {k: ad.parameter(v) for k, v in params.items()}
        total, _, _ = model_mod.training_losses(mdl, params_vars, graphs, batch, weights)
        ad.backward(total)
        return {k: (np.zeros_like(params[k]) if v.grad is None else v.grad)
                for k, v in params_vars.items()}

    return value_fn, grads_fn


# ---------------------------------------------------------------------------
# the named checks

def _check_mmd_nullity():
    rng = np.random.default_rng(11)
    g = rng.standard_normal((16, 4))
    value = alignment.mmd2(g, g.copy(), alignment.KernelConfig(1.0, "unbiased"))
    return abs(value) < 1e-10, f"|MMD^2| on identical groups = {abs(value):.3e}"


def _check_mmd_inclusive_nullity():
    # Designed-to-fail demonstration: the diagonal-inclusive estimator cannot
    # vanish on identical groups.
    rng = np.random.default_rng(11)
    g = rng.standard_normal((16, 4))
    value = alignment.mmd2(g, g.copy(), alignment.KernelConfig(1.0, "inclusive"))
    return abs(value) < 1e-10, f"|MMD^2| inclusive mode on identical groups = {value:.6f}"


def _check_mmd_hand_value():
    value = alignment.mmd2(np.array([[0.0], [0.0]]), np.array([[1.0], [1.0]]),
                           alignment.KernelConfig(1.0, "unbiased"))
    expected = 2.0 - 2.0 * math.exp(-0.5)
    return abs(value - expected) < 1e-12, f"hand case = {value:.6f} vs {expected:.6f}"


def _check_mmd_oracle():
    rng = np.random.default_rng(12)
    worst = 0.0
    for n in (2, 4, 8):
        x = rng.standard_normal((n, 3))
        y = rng.standard_normal((n, 3))
        sigma = 0.8
        fast = alignment.mmd2(x, y, alignment.KernelConfig(sigma, "unbiased"))
        sxx = sum(alignment.gaussian_kernel(x[i], x[j], sigma)
                  for i in range(n) for j in range(n) if i != j)
        syy = sum(alignment.gaussian_kernel(y[i], y[j], sigma)
                  for i in range(n) for j in range(n) if i != j)
        sxy = sum(alignment.gaussian_kernel(x[i], y[j], sigma)
                  for i in range(n) for j in range(n))
        slow = sxx / (n * (n - 1)) - 2.0 * sxy / (n * n) + syy / (n * (n - 1))
        worst = max(worst, abs(fast - slow))
    return worst < 1e-12, f"max |fast - double loop| = {worst:.3e}"


def _check_flow_round_trips():
    rng = np.random.default_rng(13)
    worst = 0.0
    for kind in flow.FLOW_KINDS:
        for depth in (1, 2, 3, 5):
            for dim in (2, 4, 8):
                stack = flow.build_flow(kind, depth, dim, hidden=16)
                params = stack.init_params(np.random.default_rng(14))
                for key in params:
                    params[key] = params[key] + 0.2 * rng.standard_normal(params[key].shape)
                z = rng.standard_normal((200, dim))
                z_t, _ = flow.flow_forward(stack, params, z)
                z_back, _ = flow.flow_inverse(stack, params, z_t)
                worst = max(worst, float(np.max(np.abs(z_back - z))))
    return worst < 1e-6, f"max round-trip error = {worst:.3e}"


def _check_flow_jacobian():
    rng = np.random.default_rng(15)
    worst = 0.0
    for kind in flow.FLOW_KINDS:
        for dim in (1, 2, 4):
            stack = flow.build_flow(kind, 2, dim, hidden=8)
            params = stack.init_params(np.random.default_rng(16))
            for key in params:
                params[key] = params[key] + 0.3 * rng.standard_normal(params[key].shape)
            for _ in range(3):
                point = rng.standard_normal(dim)
                _, logdet = flow.flow_forward(stack, params, point[None, :])
                fd = fd_jacobian_logdet(stack, params, point)
                worst = max(worst, abs(float(logdet[0]) - fd))
    return worst < 1e-4, f"max |analytic - FD| log-determinant = {worst:.3e}"


def _check_flow_pushforward():
    rng = np.random.default_rng(17)
    stack = flow.build_flow("masked_autoregressive", 2, 1, hidden=8)
    params = stack.init_params(np.random.default_rng(18))
    for key in params:
        params[key] = params[key] + 0.4 * rng.standard_normal(params[key].shape)
    integral = pushforward_integral(stack, params, np.zeros(1), np.ones(1))
    return abs(integral - 1.0) < 1e-3, f"pushforward integral = {integral:.6f}"


def _check_metric_oracle():
    rng = np.random.default_rng(19)
    for _ in range(300):
        scores = rng.standard_normal(50)
        pos = int(rng.integers(50))
        got = evaluation.rank_metrics(scores, pos)["rank"]
        want = brute_force_rank(scores, pos)
        if got != want:
            return False, f"rank mismatch {got} vs {want}"
    return True, "300 random queries agree with full sort"


def _check_metric_closed_forms():
    scores = np.zeros(1000)
    scores[0] = 10.0
    top = evaluation.rank_metrics(scores, 0)
    cases_ok = (abs(top["mrr"] - 1.0) < 1e-9 and top["hr"][10] == 1.0
                and abs(top["ndcg"][10] - 1.0) < 1e-9)
    scores = -np.arange(1000.0)
    third = evaluation.rank_metrics(scores, 2)
    cases_ok &= (abs(third["mrr"] - 1.0 / 3.0) < 1e-9
                 and abs(third["ndcg"][10] - 0.5) < 1e-9)
    rank25 = evaluation.rank_metrics(scores, 24)
    cases_ok &= (rank25["hr"][20] == 0.0 and rank25["hr"][30] == 1.0
                 and abs(rank25["ndcg"][30] - 1.0 / math.log2(26)) < 1e-9)
    return bool(cases_ok), "closed-form ranks 1, 3, 25 reproduced"


def _check_metric_monotone_invariance():
    rng = np.random.default_rng(20)
    scores = rng.standard_normal(100)
    pos = 7
    base = evaluation.rank_metrics(scores, pos)
    for transform in (lambda s: 3.0 * s + 2.0, np.exp, np.tanh):
        other = evaluation.rank_metrics(transform(scores), pos)
        if other != base:
            return False, f"metrics changed under {transform}"
    return True, "metrics invariant under strictly increasing transforms"


def _check_grad_quadratic():
    params = {"w": np.array([3.0])}

    def value_fn(p):
        return float(p["w"][0] ** 2)

    err = evaluation.grad_check(value_fn, {"w": np.array([6.0])}, params)
    return err < 1e-8, f"quadratic gradient error = {err:.3e}"


def _check_grad_total_loss():
    mdl, graphs, batch = toy_instance()
    value_fn, grads_fn = toy_loss_closure(mdl, graphs, batch)
    err = evaluation.grad_check(value_fn, grads_fn(mdl.params), mdl.params)
    return err < 1e-4, f"composed-loss gradient error = {err:.3e}"


def all_checks(inject_fault: str | None = None):
    checks = [
        ("mmd/nullity", _check_mmd_nullity),
        ("mmd/hand_value", _check_mmd_hand_value),
        ("mmd/oracle", _check_mmd_oracle),
        ("flow/round_trips", _check_flow_round_trips),
        ("flow/jacobian", _check_flow_jacobian),
        ("flow/pushforward", _check_flow_pushforward),
        ("metrics/oracle", _check_metric_oracle),
        ("metrics/closed_forms", _check_metric_closed_forms),
        ("metrics/monotone_invariance", _check_metric_monotone_invariance),
        ("grad/quadratic", _check_grad_quadratic),
        ("grad/total_loss", _check_grad_total_loss),
    ]
    if inject_fault == "mmd-inclusive-nullity":
        checks.append(("mmd/inclusive_nullity[injected]", _check_mmd_inclusive_nullity))
    elif inject_fault is not None:
        raise ValueError(f"unknown fault injection {inject_fault!r}")
    return checks


def run_checks(only: str | None = None, inject_fault: str | None = None):
    """Run (a family filter of) the suite; returns (all_passed, report lines)."""
    lines = []
    passed_all = True
    for name, fn in all_checks(inject_fault):
        family = name.split("/", 1)[0]
        if only is not None and family != only:
            continue
        passed, detail = fn()
        passed_all &= passed
        lines.append(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    if not lines:
        raise ValueError(f"no checks matched family {only!r}")
    return passed_all, lines
