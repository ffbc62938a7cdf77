import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from approxopt.datagen import RpcaConfig, gen_rpca
from approxopt.errors import NumericError, ParameterError, RankDeficientError
from approxopt.larpca import (LarpcaApprox, LarpcaParams, LarpcaSolver, RpcaFactors, RpcaInstance, factor_update_l,
                              factor_update_r, grad_l, grad_r, larpca_flops, larpca_init, larpca_run, recovery_error,
                              relative_error, rpca_objective, sparse_update, unsup_rpca_loss)
from approxopt.linalg import fd_gradient, soft_threshold, truncated_svd
from oracles import straight_line_rpca


def random_factors(rng, n1, n2, r):
    return RpcaFactors(l=rng.standard_normal((n1, r)), r_f=rng.standard_normal((n2, r)),
                       y=rng.standard_normal((n1, n2)) * (rng.random((n1, n2)) < 0.2))


def scalar_case():
    return RpcaFactors(l=np.array([[1.0]]), r_f=np.array([[1.0]]), y=np.array([[0.0]])), np.array([[3.0]])


# ---------------------------------------------------------------- objective and gradients

def test_objective_examples():
    f, x = scalar_case()
    assert rpca_objective(f, x) == 2.0
    zero = RpcaFactors(l=np.zeros((3, 1)), r_f=np.zeros((4, 1)), y=np.zeros((3, 4)))
    x = np.arange(12.0).reshape(3, 4)
    assert rpca_objective(zero, x) == pytest.approx(0.5 * np.sum(x**2))
    exact = RpcaFactors(l=np.ones((3, 1)), r_f=np.ones((4, 1)), y=x - 1)
    assert rpca_objective(exact, x) == 0


def test_sparse_update_examples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 4))
    assert np.array_equal(sparse_update(x, np.zeros((5, 2)), np.zeros((4, 2)), 0.0), x)
    assert np.all(sparse_update(x, np.zeros((5, 2)), np.zeros((4, 2)), np.abs(x).max() + 1) == 0)
    l, r = rng.standard_normal((5, 2)), rng.standard_normal((4, 2))
    assert np.array_equal(sparse_update(x, l, r, 0.3), soft_threshold(x - l @ r.T, 0.3))


def test_gradients_scalar_and_stationary():
    f, x = scalar_case()
    assert grad_l(f, x)[0, 0] == -2.0
    assert grad_r(f, x)[0, 0] == -2.0
    rng = np.random.default_rng(1)
    f = random_factors(rng, 6, 5, 2)
    x = f.l @ f.r_f.T + f.y
    assert np.all(grad_l(f, x) == 0) and np.all(grad_r(f, x) == 0)


def fd_rel_error(analytic, numeric):
    return np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic)


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_fd(seed):
    rng = np.random.default_rng(seed)
    f = random_factors(rng, 10, 10, 3)
    x = rng.standard_normal((10, 10))
    fd_l = fd_gradient(lambda l: float(rpca_objective(RpcaFactors(l, f.r_f, f.y), x)), f.l)
    fd_r = fd_gradient(lambda r: float(rpca_objective(RpcaFactors(f.l, r, f.y), x)), f.r_f)
    assert fd_rel_error(grad_l(f, x), fd_l) <= 1e-6
    assert fd_rel_error(grad_r(f, x), fd_r) <= 1e-6


# ---------------------------------------------------------------- factor updates

def test_factor_updates_trivial():
    rng = np.random.default_rng(2)
    f = random_factors(rng, 6, 5, 2)
    x = rng.standard_normal((6, 5))
    assert np.array_equal(factor_update_l(f, x, np.zeros((6, 2))), f.l)
    assert np.array_equal(factor_update_r(f, x, np.zeros((5, 2))), f.r_f)
    exact = f.l @ f.r_f.T + f.y
    assert np.allclose(factor_update_l(f, exact, np.full((6, 2), 0.7)), f.l, atol=1e-14)


def test_factor_update_r_scalar():
    # L = 2, R = 1, Y = 0, X = 3: grad_r = (2 - 3) * 2 = -2, (L^T L)^-1 = 1/4, R' = 1 + 0.5 * 0.5
    f = RpcaFactors(l=np.array([[2.0]]), r_f=np.array([[1.0]]), y=np.array([[0.0]]))
    assert factor_update_r(f, np.array([[3.0]]), np.array([[0.5]]))[0, 0] == pytest.approx(1.25)


def test_factor_update_rank_deficient():
    f = RpcaFactors(l=np.ones((4, 2)), r_f=np.ones((3, 2)), y=np.zeros((4, 3)))
    with pytest.raises(RankDeficientError):
        factor_update_l(f, np.ones((4, 3)), np.full((4, 2), 0.1))


def test_small_factor_steps_descend():
    rng = np.random.default_rng(3)
    for _ in range(100):
        f = random_factors(rng, 8, 7, 2)
        x = rng.standard_normal((8, 7))
        before = rpca_objective(f, x)
        l = factor_update_l(f, x, np.full((8, 2), 1e-3))
        after_l = rpca_objective(RpcaFactors(l, f.r_f, f.y), x)
        r = factor_update_r(RpcaFactors(l, f.r_f, f.y), x, np.full((7, 2), 1e-3))
        assert after_l <= before + 1e-10
        assert rpca_objective(RpcaFactors(l, r, f.y), x) <= after_l + 1e-10


# ---------------------------------------------------------------- init

def test_init_exact_rank_and_zero():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((9, 3)) @ rng.standard_normal((3, 7))
    f = larpca_init(x, np.abs(x).max(), 3)  # threshold clears nothing into Y
    assert np.all(f.y == 0)
    assert np.allclose(f.l @ f.r_f.T, x, atol=1e-8)
    z = larpca_init(np.zeros((5, 4)), 0.1, 2)
    assert np.all(z.l == 0) and np.all(z.r_f == 0) and np.all(z.y == 0)


def test_init_best_rank_residual():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((12, 10))
    f = larpca_init(x, 0.5, 3)
    resid = x - f.y
    s = np.linalg.svd(resid, compute_uv=False)
    assert np.linalg.norm(f.l @ f.r_f.T - resid) == pytest.approx(np.sqrt(np.sum(s[3:] ** 2)), rel=1e-6)


# ---------------------------------------------------------------- full run

def small_instances(count=10, n=12, r=2, alpha=0.1, seed=0):
    return gen_rpca(RpcaConfig(seed=seed, n1=n, n2=n, r=r, alpha=alpha, count=count))


def test_k_zero_returns_init():
    inst = small_instances(1)[0]
    params = LarpcaParams.constant(12, 12, 2, 0, zeta0=0.2)
    out = larpca_run(inst.x, params, rank=2)
    f = larpca_init(inst.x, 0.2, 2)
    assert np.array_equal(out.v_hat, f.l @ f.r_f.T)


def test_full_skip_keeps_factors():
    inst = small_instances(1)[0]
    params = LarpcaParams.constant(12, 12, 2, 4, zeta0=0.2)
    all_k = range(4)
    out = larpca_run(inst.x, params, LarpcaApprox(all_k, all_k))
    f = larpca_init(inst.x, 0.2, 2)
    assert np.array_equal(out.v_hat, f.l @ f.r_f.T)
    assert not np.array_equal(out.y_hat, f.y)


def test_empty_skip_sets_match_straight_line_bitwise():
    for inst in small_instances(10):
        params = LarpcaParams.constant(12, 12, 2, 6, step=0.5, zeta0=0.3)
        got = larpca_run(inst.x, params).v_hat
        assert np.array_equal(got, straight_line_rpca(inst.x, 2, params.zeta, 0.5, 6))


def test_skip_sets_change_only_named_updates():
    inst = small_instances(1)[0]
    params = LarpcaParams.constant(12, 12, 2, 3, zeta0=0.3)
    ref = larpca_run(inst.x, params, LarpcaApprox(k_l={2}), trace=True)
    full = larpca_run(inst.x, params, k_total=2)
    assert np.array_equal(ref.factors.l, full.factors.l)
    assert not np.array_equal(ref.factors.r_f, full.factors.r_f)


def fixed_threshold_params(n, r, k_total, step, zeta):
    return LarpcaParams(eta_l=[np.full((n, r), step)] * k_total, eta_r=[np.full((n, r), step)] * k_total,
                        zeta=[zeta] * (k_total + 1))


def test_objective_non_increasing_small_steps():
    for t in range(100):
        x = small_instances(1, n=10, r=2, seed=100 + t)[0].x
        params = fixed_threshold_params(10, 2, 8, 0.05, 2 * float(np.median(np.abs(x))))
        obj = [row["objective"] for row in larpca_run(x, params, trace=True).trace]
        # from the first iteration on; the init threshold acts on X itself
        assert all(b <= a + 1e-10 for a, b in zip(obj[1:], obj[2:])), t


def test_penalized_objective_descends_every_half_step():
    # with zeta fixed, the Y step exactly minimizes 0.5 ||LR^T + Y - X||^2 + zeta ||Y||_1
    for t in range(50):
        x = small_instances(1, n=10, r=2, seed=300 + t)[0].x
        zeta = float(np.median(np.abs(x)))
        params = fixed_threshold_params(10, 2, 6, 0.5, zeta)
        f = larpca_init(x, zeta, 2)
        values = []
        for k in range(6):
            f = RpcaFactors(f.l, f.r_f, sparse_update(x, f.l, f.r_f, zeta))
            values.append(rpca_objective(f, x) + zeta * np.abs(f.y).sum())
            f = RpcaFactors(factor_update_l(f, x, params.eta_l[k]), f.r_f, f.y)
            f = RpcaFactors(f.l, factor_update_r(f, x, params.eta_r[k]), f.y)
            values.append(rpca_objective(f, x) + zeta * np.abs(f.y).sum())
        assert all(b <= a + 1e-10 for a, b in zip(values, values[1:])), t


def test_trace_columns_and_truth():
    inst = small_instances(1)[0]
    params = LarpcaParams.constant(12, 12, 2, 3, zeta0=0.3)
    out = larpca_run(inst.x, params, v_star=inst.v_star, trace=True)
    assert [row["k"] for row in out.trace] == [0, 1, 2, 3]
    assert out.trace[-1]["rel_err_vs_truth"] == pytest.approx(relative_error(out.v_hat, inst.v_star))
    assert larpca_run(inst.x, params, trace=True).trace[0]["rel_err_vs_truth"] is None


def test_run_rejects_bad_schedule():
    inst = small_instances(1)[0]
    params = LarpcaParams.constant(12, 12, 2, 3)
    with pytest.raises(ParameterError):
        larpca_run(inst.x, params, LarpcaApprox(k_l={3}))
    with pytest.raises(ParameterError):
        larpca_run(inst.x, params, k_total=4)


def test_run_reports_iteration_on_blowup():
    inst = small_instances(1)[0]
    params = LarpcaParams.constant(12, 12, 2, 3, step=1e308, zeta0=0.0)
    with pytest.raises(NumericError) as info:
        larpca_run(inst.x, params)
    assert info.value.iteration == 0


def test_torch_path_matches_numpy():
    inst = small_instances(1)[0]
    params = LarpcaParams.constant(12, 12, 2, 4, zeta0=0.3)
    a = larpca_run(inst.x, params).v_hat
    b = LarpcaSolver(4).forward(params.to_schedule().map(lambda _, v: torch.tensor(v)), torch.tensor(inst.x))[0]
    assert np.allclose(a, b.numpy(), atol=1e-10)


# ---------------------------------------------------------------- params and schedules

def test_params_validation_and_round_trip():
    with pytest.raises(ParameterError):
        LarpcaParams(eta_l=[np.ones((2, 1))], eta_r=[np.ones((2, 1))], zeta=[0.1])
    with pytest.raises(ParameterError):
        LarpcaParams(eta_l=[], eta_r=[], zeta=[-1.0])
    p = LarpcaParams.constant(4, 3, 2, 3, zeta0=0.4)
    back = LarpcaParams.from_schedule(p.to_schedule())
    assert [float(np.ravel(z)[0]) for z in back.zeta] == p.zeta


@pytest.mark.parametrize("k_total,n_skip", [(8, 8), (16, 16), (5, 1), (4, 8), (12, 15), (16, 4)])
def test_spread_counts(k_total, n_skip):
    a = LarpcaApprox.spread(k_total, n_skip)
    assert a.n_skipped == n_skip
    a.validate(k_total)


def test_spread_rejects_too_many():
    with pytest.raises(ParameterError):
        LarpcaApprox.spread(4, 9)


# ---------------------------------------------------------------- flops

@pytest.mark.parametrize("k_total,n_skip,total", [(16, 16, 176_802_000), (24, 0, 386_406_000), (6000, 0, 96_601_500_000)])
def test_flops_table(k_total, n_skip, total):
    report = larpca_flops(1000, 1000, 5, k_total, LarpcaApprox.spread(k_total, n_skip))
    assert report.total == total and isinstance(report.total, int)


def test_flops_full_cost_formula_and_flags():
    n, r, k = 50, 3, 7
    p_low = n * n * r + 2 * n * r * r + r**3
    assert larpca_flops(n, n, r, k).total == k * (n * n * r + n * n + 2 * p_low)
    assert larpca_flops(n, n, r, k).reduction_factor == 1.0
    assert larpca_flops(40, 50, r, k).flags and larpca_flops(50, 40, r, k).total == larpca_flops(50, 50, r, k).total


# ---------------------------------------------------------------- losses and metrics

def test_unsup_loss_examples():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((6, 5))
    assert unsup_rpca_loss(x, np.zeros_like(x), x) == 0
    v, y = rng.standard_normal((6, 5)), rng.standard_normal((6, 5))
    assert unsup_rpca_loss(v, y, x, 0.0) == pytest.approx(np.linalg.norm(x - v) / np.linalg.norm(x), rel=1e-14)
    oracle = np.linalg.norm(x - v) / np.linalg.norm(x) + 0.3 * np.abs(y).sum() / 30
    assert unsup_rpca_loss(v, y, x, 0.3) == pytest.approx(oracle, rel=1e-14)
    with pytest.raises(ParameterError):
        unsup_rpca_loss(v, y, np.zeros_like(x))
    with pytest.raises(ParameterError):
        unsup_rpca_loss(v, y, x, -1.0)


def test_recovery_error_examples():
    assert recovery_error(np.array([[0.0]]), np.array([[2.0]])) == 2.0
    rng = np.random.default_rng(8)
    x, v = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    assert recovery_error(x, x) == 0
    assert recovery_error(v, x) == pytest.approx(np.sum((x - v) ** 2) / (24 * np.linalg.norm(x)), rel=1e-14)
    with pytest.raises(ParameterError):
        recovery_error(v, np.zeros_like(x))


def test_instance_invariants():
    with pytest.raises(ParameterError):
        RpcaInstance(x=np.ones((2, 2)), r=3)
    with pytest.raises(ParameterError):
        RpcaInstance(x=np.ones((2, 2)), r=1, v_star=np.ones((2, 2)), y_star=np.ones((2, 2)))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.floats(0, 2))
def test_init_factors_reconstruct_thresholded_residual(r, zeta):
    x = np.random.default_rng(r).standard_normal((8, 6))
    f = larpca_init(x, zeta, r)
    svd = truncated_svd(x - f.y, r)
    assert np.allclose(f.l @ f.r_f.T, svd.reconstruct(), atol=1e-10)
