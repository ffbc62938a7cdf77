import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from approxopt.apga import (ApgaApprox, ApgaParams, ApgaSolver, ChannelSet, HybridPrecoder, apga_flops, apga_init,
                            apga_run, apga_run_scaled, grad_wa, grad_wd, init_analog, proj_power, proj_unit_modulus,
                            sum_rate, tune_pga_steps)
from approxopt.datagen import ChannelConfig, gen_channels
from approxopt.errors import NumericError, ParameterError
from approxopt.linalg import fd_gradient
from approxopt.unfold import Dataset, hypergradient


def cplx(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_instance(rng, b=None, n=None, l=None, m=None):
    b = b or int(rng.integers(1, 7))
    m = m or int(rng.integers(2, 7))
    n = n or int(rng.integers(1, 7))
    l = l or int(rng.integers(1, m + 1))
    ch = ChannelSet(h=cplx(rng, b, n, m), sigma2=rng.uniform(0.2, 2.0))
    p = HybridPrecoder(w_a=proj_unit_modulus(cplx(rng, m, l)), w_d=cplx(rng, b, l, n))
    return ch, p


def real_cosine(a, b):
    return np.real(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))


# ---------------------------------------------------------------- rate

def test_rate_zero_digital_is_zero():
    ch, p = random_instance(np.random.default_rng(0))
    assert sum_rate(ch, HybridPrecoder(p.w_a, np.zeros_like(p.w_d))) == 0


def test_rate_vanishes_at_low_snr():
    rng = np.random.default_rng(1)
    ch, p = random_instance(rng)
    assert sum_rate(ChannelSet(ch.h, 1e12), p) < 1e-9


@pytest.mark.parametrize("w", [0.3, 1 - 2j, 0.0])
def test_rate_scalar_closed_form(w):
    sigma2 = 0.7
    ch = ChannelSet(h=np.array([[[1.0, 1.0]]]), sigma2=sigma2)
    p = HybridPrecoder(w_a=np.ones((2, 1), complex), w_d=np.array([[[w]]], complex))
    assert sum_rate(ch, p) == pytest.approx(np.log(1 + 4 * abs(w) ** 2 / sigma2), rel=1e-14, abs=1e-15)


def test_rate_invariant_under_user_rotation():
    rng = np.random.default_rng(2)
    for _ in range(20):
        ch, p = random_instance(rng)
        q, _ = np.linalg.qr(cplx(rng, ch.n_users, ch.n_users))
        rotated = ChannelSet(q @ ch.h, ch.sigma2)
        assert abs(sum_rate(rotated, p) - sum_rate(ch, p)) <= 1e-10


# ---------------------------------------------------------------- gradients

def test_gradients_vanish_with_zero_digital():
    ch, p = random_instance(np.random.default_rng(3))
    zero = HybridPrecoder(p.w_a, np.zeros_like(p.w_d))
    assert np.all(grad_wa(ch, zero) == 0)
    assert np.all(grad_wd(ch, zero, 0) == 0)


def test_grad_wd_scalar_derivative():
    # N = L = 1: R = log(1 + |c w|^2) with c = H~ W_a, so dR/dw* = |c|^2 w / (1 + |c w|^2)
    h, sigma2, w = np.array([[[0.4 + 1j, -0.2j]]]), 0.5, 0.3 - 0.7j
    a = np.array([[1j], [1.0]])
    ch = ChannelSet(h, sigma2)
    c = (h[0] @ a)[0, 0] / np.sqrt(sigma2)
    expected = abs(c) ** 2 * w / (1 + abs(c * w) ** 2)
    got = grad_wd(ch, HybridPrecoder(a, np.array([[[w]]])), 0)[0, 0]
    assert got == pytest.approx(expected, rel=1e-12)


def test_gradients_match_fd_50_instances():
    rng = np.random.default_rng(4)
    worst = 1.0
    for _ in range(50):
        ch, p = random_instance(rng)
        fd_a = fd_gradient(lambda wa: float(sum_rate(ch, HybridPrecoder(wa, p.w_d))), p.w_a)
        worst = min(worst, real_cosine(grad_wa(ch, p), fd_a))
        band = int(rng.integers(ch.b_bands))

        def rate_band(wd, band=band):
            full = p.w_d.copy()
            full[band] = wd
            return float(sum_rate(ch, HybridPrecoder(p.w_a, full)))

        worst = min(worst, real_cosine(grad_wd(ch, p, band), fd_gradient(rate_band, p.w_d[band])))
    assert worst >= 0.999


def test_ascent_direction_increases_rate():
    rng = np.random.default_rng(5)
    for _ in range(20):
        ch, p = random_instance(rng)
        g = grad_wa(ch, p)
        step = HybridPrecoder(p.w_a + 1e-6 * g, p.w_d)
        assert sum_rate(ch, step) > sum_rate(ch, p)


def test_grad_wd_rejects_bad_band():
    ch, p = random_instance(np.random.default_rng(6), b=2)
    with pytest.raises(ParameterError):
        grad_wd(ch, p, 2)


# ---------------------------------------------------------------- projections

def test_unit_modulus_examples():
    out = proj_unit_modulus(np.array([[3 + 4j, 0], [-2j, 1e-300]]))
    assert out[0, 0] == pytest.approx(0.6 + 0.8j, abs=1e-15)
    assert out[0, 1] == 1 and out[1, 0] == -1j
    assert out[1, 1] == pytest.approx(1, abs=1e-15)
    with np.errstate(invalid="ignore"):
        assert np.isnan(proj_unit_modulus(np.array([np.nan + 0j]))).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unit_modulus_idempotent(seed):
    w = proj_unit_modulus(cplx(np.random.default_rng(seed), 4, 3))
    assert np.allclose(np.abs(w), 1, atol=1e-15)
    assert np.allclose(proj_unit_modulus(w), w, atol=1e-15)


def test_power_projection():
    rng = np.random.default_rng(7)
    ch, p = random_instance(rng, b=3, n=2, l=2, m=4)
    feasible = HybridPrecoder(p.w_a, 1e-3 * p.w_d)
    assert np.array_equal(proj_power(feasible).w_d, feasible.w_d)
    # scale so that the total power is 4 N B
    scale = np.sqrt(4 * 2 / p.power())
    big = HybridPrecoder(p.w_a, p.w_d * scale)
    assert np.allclose(proj_power(big).w_d, big.w_d / 2, atol=1e-13)
    for _ in range(20):
        ch, p = random_instance(rng)
        p = HybridPrecoder(p.w_a, 10 * p.w_d)
        if p.power() > ch.n_users:
            assert proj_power(p, ch.n_users).power() == pytest.approx(ch.n_users, abs=1e-9)


# ---------------------------------------------------------------- init

def test_init_rank_one_channel_aligns_with_singular_vector():
    rng = np.random.default_rng(8)
    v = cplx(rng, 5)
    h = np.zeros((1, 3, 5), complex)
    h[0, 0] = v.conj()  # rank one: right singular vector is v / |v|
    w_a = init_analog(ChannelSet(h, 1.0).scaled(), 2)
    phase = v / np.abs(v)
    # singular vectors carry an arbitrary global phase
    ratio = w_a[:, 0] / phase
    assert np.allclose(ratio, ratio[0], atol=1e-8)
    assert np.all(w_a[:, 1] == 1)


def test_init_unit_modulus_and_feasible():
    rng = np.random.default_rng(9)
    for _ in range(10):
        ch, p = random_instance(rng)
        init = apga_init(ch, p.l_chains)
        assert init.is_feasible(ch.n_users)
        assert init.power() == pytest.approx(ch.n_users, rel=1e-12)


def test_init_pads_beyond_rank():
    ch = ChannelSet(h=cplx(np.random.default_rng(10), 2, 2, 6), sigma2=1.0)
    w_a = init_analog(ch.scaled(), 5)
    assert np.all(w_a[:, 2:] == 1)
    with pytest.raises(ParameterError):
        init_analog(ch.scaled(), 7)


# ---------------------------------------------------------------- unfolded run

def test_k_zero_returns_init():
    ch, _ = random_instance(np.random.default_rng(11), l=2)
    params = ApgaParams.constant(ch.b_bands, ch.n_users, 2, ch.m_antennas, 0)
    out = apga_run_scaled(ch.scaled(), params, l_chains=2).precoder
    init = apga_init(ch, 2)
    assert np.array_equal(out.w_a, init.w_a) and np.array_equal(out.w_d, init.w_d)


def test_run_feasible_and_ascends_over_100_trials():
    rng = np.random.default_rng(12)
    for _ in range(100):
        ch, p = random_instance(rng)
        params = ApgaParams.constant(ch.b_bands, ch.n_users, p.l_chains, ch.m_antennas, 10, 1e-3, 1e-3)
        out = apga_run(ch, params, trace=True)
        assert out.precoder.is_feasible(ch.n_users)
        assert out.rates[-1] >= out.rates[0] - 1e-12


def test_digital_step_ascends_when_analog_columns_are_orthogonal():
    # radial power scaling is the exact projection only when W_a^H W_a is a multiple of I
    rng = np.random.default_rng(17)
    for _ in range(200):
        b, n, m = (int(v) for v in rng.integers(1, 5, 3) + [0, 0, 2])
        l = int(rng.integers(1, m + 1))
        w_a = np.exp(2j * np.pi * np.outer(np.arange(m), np.arange(l)) / m)
        ch = ChannelSet(cplx(rng, b, n, m), 1.0)
        p = proj_power(HybridPrecoder(w_a, cplx(rng, b, l, n) * 10), n)
        g = np.stack([grad_wd(ch, p, j) for j in range(b)])
        step = proj_power(HybridPrecoder(w_a, p.w_d + 1e-5 * g), n)
        assert sum_rate(ch, step) >= sum_rate(ch, p) - 1e-13


def test_approximated_runs_stay_feasible():
    rng = np.random.default_rng(13)
    for _ in range(20):
        ch, p = random_instance(rng)
        params = ApgaParams.constant(ch.b_bands, ch.n_users, p.l_chains, ch.m_antennas, 5, 0.1, 0.1)
        out = apga_run(ch, params, ApgaApprox.standard(5, ch.b_bands))
        assert out.precoder.is_feasible(ch.n_users)


def test_cached_digital_gradient_is_reused():
    rng = np.random.default_rng(14)
    ch, p = random_instance(rng, b=1, n=2, l=2, m=3)
    params = ApgaParams.constant(1, 2, 2, 3, 2, 0.0, 0.05)
    cached = apga_run(ch, params, ApgaApprox(k_d=({1},)), trace=True)
    # by hand: step 1 reuses the gradient taken at the initial point
    init = apga_init(ch, 2)
    g0 = grad_wd(ch, init, 0)
    w1 = proj_power(HybridPrecoder(init.w_a, init.w_d + 0.05 * g0[None])).w_d
    w2 = proj_power(HybridPrecoder(init.w_a, w1 + 0.05 * g0[None])).w_d
    assert np.allclose(cached.precoder.w_d, w2, atol=1e-14)


def test_first_iteration_in_cache_set_is_exact():
    ch, p = random_instance(np.random.default_rng(15), b=2)
    params = ApgaParams.constant(2, ch.n_users, p.l_chains, ch.m_antennas, 3, 0.05, 0.05)
    a = apga_run(ch, params, ApgaApprox(k_d=({0}, {0}))).precoder
    b = apga_run(ch, params).precoder
    assert np.array_equal(a.w_d, b.w_d)


def test_run_rejects_bad_schedule_and_reports_blowup():
    ch, p = random_instance(np.random.default_rng(16), b=2)
    params = ApgaParams.constant(2, ch.n_users, p.l_chains, ch.m_antennas, 3)
    with pytest.raises(ParameterError):
        apga_run(ch, params, ApgaApprox(k_a={3}))
    with pytest.raises(ParameterError):
        apga_run(ch, params, ApgaApprox(k_d=({1},)))
    bad = ApgaParams.constant(2, ch.n_users, p.l_chains, ch.m_antennas, 3, np.nan, 0.1)
    with pytest.raises(NumericError) as info, np.errstate(invalid="ignore"):
        apga_run(ch, bad)
    assert info.value.iteration == 0


def test_batched_and_torch_match_single():
    chans = gen_channels(ChannelConfig(seed=0, b=2, n=2, m=4, count=3))
    hts = np.stack([c.scaled() for c in chans])
    params = ApgaParams.constant(2, 2, 3, 4, 4, 0.05, 0.05)
    batch = apga_run_scaled(hts, params).precoder
    for i, c in enumerate(chans):
        one = apga_run(c, params).precoder
        assert np.allclose(batch.w_d[i], one.w_d, atol=1e-12)
    t = ApgaSolver(4).forward(params.to_schedule().map(lambda _, v: torch.tensor(v)), torch.tensor(hts))
    assert np.allclose(t[1].numpy(), batch.w_d, atol=1e-12)


def test_adjoint_hypergradient_matches_fd():
    chans = gen_channels(ChannelConfig(seed=1, b=2, n=2, m=3, count=2))
    data = Dataset([c.scaled() for c in chans])
    params = ApgaParams.constant(2, 2, 2, 3, 2, 0.05, 0.05).to_schedule()
    solver = ApgaSolver(2, ApgaApprox.standard(2, 2))
    _, g_ad = hypergradient(solver, params, data, mode="analytic-adjoint")
    _, g_fd = hypergradient(solver, params, data, mode="finite-difference")
    assert g_ad.allclose(g_fd, atol=1e-6)


def test_params_round_trip():
    p = ApgaParams.constant(3, 2, 2, 4, 2, 0.1, 0.2)
    sched = p.to_schedule()
    assert sorted(sched[0]) == ["mu_a", "mu_d_0", "mu_d_1", "mu_d_2"]
    back = ApgaParams.from_schedule(sched)
    assert all(np.array_equal(a, b) for a, b in zip(back.mu_d, p.mu_d))


def test_standard_approximation_is_even_one_indexed():
    a = ApgaApprox.standard(5, 3)
    assert a.k_a == set(range(5)) and a.k_d == ({1, 3},) * 3


def test_tune_pga_steps_picks_best_pair():
    chans = gen_channels(ChannelConfig(seed=2, b=2, n=2, m=4, count=4))
    hts = np.stack([c.scaled() for c in chans])
    steps, score = tune_pga_steps(hts, 2, 5, [0.0, 0.1])
    zero = ApgaParams.constant(2, 2, 2, 4, 5, 0.0, 0.0)
    p = apga_run_scaled(hts, zero).precoder
    assert score >= float(np.mean([sum_rate(c, HybridPrecoder(p.w_a[i], p.w_d[i])) for i, c in enumerate(chans)]))
    assert steps != (0.0, 0.0)


# ---------------------------------------------------------------- flops

@pytest.mark.parametrize("dims,k_total,approx,total", [
    ((8, 6, 10, 12), 5, ApgaApprox(), 238_080),
    ((8, 6, 10, 12), 5, ApgaApprox.standard(5, 8), 71_424),
    ((8, 6, 10, 12), 5, ApgaApprox(k_a=range(5)), 119_040),
    ((8, 6, 10, 12), 50, ApgaApprox(), 2_380_800),
    ((64, 12, 12, 32), 5, ApgaApprox(), 13_025_280),
    ((64, 12, 12, 32), 5, ApgaApprox.standard(5, 64), 3_907_584),
    ((64, 12, 12, 32), 100, ApgaApprox(), 260_505_600),
])
def test_flops_tables(dims, k_total, approx, total):
    report = apga_flops(*dims, k_total, approx)
    assert report.total == total and isinstance(report.total, int)


def test_flops_factor_and_flags():
    assert apga_flops(4, 3, 4, 6, 5, ApgaApprox.standard(5, 4)).reduction_factor == pytest.approx(0.3, abs=1e-15)
    every = apga_flops(2, 2, 2, 3, 3, ApgaApprox(k_a=range(3), k_d=(range(3),) * 2))
    assert every.total == 0 and every.reduction_factor == 0
    assert any("zero" in f for f in every.flags) and any("iteration 0" in f for f in every.flags)
    assert apga_flops(2, 2, 2, 3, 0).total == 0
