"""Hybrid beamforming by unfolded, approximated projected gradient ascent.

The analog precoder ``w_a`` (M x L, unit-modulus entries) is shared by all
bands; each band b has its own digital precoder ``w_d[b]`` (L x N). The
kernels below take scaled channels ``ht = H / sqrt(N sigma^2)`` of shape
(..., B, N, M), so a leading batch of channel sets runs in one call.
Arrays may be numpy or torch.

Iterations in ``k_a`` replace the analog gradient with an all-ones matrix.
Bands whose ``k_d`` set holds iteration k reuse the digital gradient cached
from the last iteration where it was computed.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError
from .flops import FlopReport
from .linalg import as_like, eye_like, hermitian, logdet_psd, namespace, small_spd_inverse, to_numpy, truncated_svd
from .unfold import HyperSchedule

UNIT_MODULUS_TOL = 1e-9
POWER_TOL = 1e-9
RANK_TOL = 1e-10


@dataclass
class ChannelSet:
    """Per-band channels ``h`` (B x N x M) and the per-entry noise variance."""

    h: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=complex)
        if self.h.ndim != 3:
            raise ParameterError(f"channels must be B x N x M, got shape {self.h.shape}")
        if not self.sigma2 > 0:
            raise ParameterError("noise variance must be positive")

    @property
    def b_bands(self):
        return self.h.shape[0]

    @property
    def n_users(self):
        return self.h.shape[1]

    @property
    def m_antennas(self):
        return self.h.shape[2]

    def scaled(self):
        """H / sqrt(N sigma^2)."""
        return self.h / np.sqrt(self.n_users * self.sigma2)


@dataclass
class HybridPrecoder:
    w_a: object
    w_d: object  # B x L x N

    def __post_init__(self):
        if not hasattr(self.w_d, "shape"):
            self.w_d = np.stack([np.asarray(w) for w in self.w_d])
        if self.w_a.shape[-1] != self.w_d.shape[-2]:
            raise ParameterError(f"w_a has {self.w_a.shape[-1]} chains but w_d expects {self.w_d.shape[-2]}")

    @property
    def l_chains(self):
        return self.w_a.shape[-1]

    def power(self):
        """(1/B) sum_b ||W_a W_d,b||_F^2."""
        return _total_power(self.w_a, self.w_d) / self.w_d.shape[-3]

    def is_feasible(self, n_users):
        w_a = to_numpy(self.w_a)
        modulus_ok = np.all(np.abs(np.abs(w_a) - 1) <= UNIT_MODULUS_TOL)
        return bool(modulus_ok and np.all(to_numpy(self.power()) <= n_users + POWER_TOL))


@dataclass(frozen=True)
class ApgaApprox:
    """Iterations using the fixed analog surrogate (``k_a``) and per-band cached digital gradients (``k_d``)."""

    k_a: frozenset = frozenset()
    k_d: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "k_a", frozenset(int(k) for k in self.k_a))
        object.__setattr__(self, "k_d", tuple(frozenset(int(k) for k in s) for s in self.k_d))

    def validate(self, k_total, b_bands):
        if self.k_d and len(self.k_d) != b_bands:
            raise ParameterError(f"k_d lists {len(self.k_d)} bands, expected {b_bands}")
        every = set(self.k_a).union(*self.k_d)
        bad = sorted(k for k in every if not 0 <= k < k_total)
        if bad:
            raise ParameterError(f"approximation indices {bad} outside [0, {k_total})")

    def digital(self, band):
        return self.k_d[band] if self.k_d else frozenset()

    @classmethod
    def standard(cls, k_total, b_bands):
        """Fixed analog surrogate everywhere, cached digital gradient at 1-indexed even iterations."""
        odd = frozenset(range(1, k_total, 2))
        return cls(k_a=frozenset(range(k_total)), k_d=(odd,) * b_bands)


@dataclass
class ApgaParams:
    mu_a: list  # K matrices M x L
    mu_d: list  # K arrays B x L x N

    def __post_init__(self):
        if len(self.mu_a) != len(self.mu_d):
            raise ParameterError("mu_a and mu_d must cover the same iterations")

    @property
    def k_total(self):
        return len(self.mu_a)

    @classmethod
    def constant(cls, b, n, l, m, k_total, mu_a=0.01, mu_d=0.01):
        return cls(
            mu_a=[np.full((m, l), float(mu_a)) for _ in range(k_total)],
            mu_d=[np.full((b, l, n), float(mu_d)) for _ in range(k_total)],
        )

    def to_schedule(self):
        bundles = []
        for a, d in zip(self.mu_a, self.mu_d):
            bundle = {"mu_a": np.asarray(a, dtype=float)}
            for band, w in enumerate(np.asarray(d, dtype=float)):
                bundle[f"mu_d_{band}"] = w
            bundles.append(bundle)
        return HyperSchedule(bundles)

    @classmethod
    def from_schedule(cls, schedule):
        mu_d = []
        for bundle in schedule:
            bands = sorted((k for k in bundle if k.startswith("mu_d_")), key=lambda k: int(k[5:]))
            mu_d.append(namespace(bundle["mu_a"]).stack([bundle[k] for k in bands]))
        return cls(mu_a=[b["mu_a"] for b in schedule], mu_d=mu_d)


def _effective(ht, w_a, w_d):
    """H~_b W_a W_d,b for every band: (..., B, N, N)."""
    return ht @ w_a[..., None, :, :] @ w_d


def _gram(ht, w_a, w_d):
    t = _effective(ht, w_a, w_d)
    return eye_like(t, t.shape[-1]) + t @ hermitian(t)


def _total_power(w_a, w_d):
    p = w_a[..., None, :, :] @ w_d
    return (p.real**2 + p.imag**2).sum(axis=(-3, -2, -1))


def rate(ht, w_a, w_d):
    """Band-averaged sum-rate in nats for scaled channels."""
    return logdet_psd(_gram(ht, w_a, w_d)).mean(axis=-1)


def _ascent_kernel(ht, w_a, w_d):
    """H~^H G^{-1} H~ per band: (..., B, M, M)."""
    return hermitian(ht) @ small_spd_inverse(_gram(ht, w_a, w_d)) @ ht


def grad_wa_scaled(ht, w_a, w_d):
    a = _ascent_kernel(ht, w_a, w_d)
    return (a @ w_a[..., None, :, :] @ w_d @ hermitian(w_d)).sum(axis=-3) / ht.shape[-3]


def grad_wd_scaled(ht, w_a, w_d):
    a = _ascent_kernel(ht, w_a, w_d)
    return hermitian(w_a)[..., None, :, :] @ a @ w_a[..., None, :, :] @ w_d / ht.shape[-3]


def sum_rate(ch, p):
    """(1/B) sum_b log det(I + H~_b W_a W_d,b W_d,b^H W_a^H H~_b^H)."""
    return rate(ch.scaled(), p.w_a, p.w_d)


def grad_wa(ch, p):
    """Steepest-ascent direction of the rate in W_a."""
    return grad_wa_scaled(ch.scaled(), p.w_a, p.w_d)


def grad_wd(ch, p, band):
    if not 0 <= band < ch.b_bands:
        raise ParameterError(f"band {band} outside [0, {ch.b_bands})")
    return grad_wd_scaled(ch.scaled(), p.w_a, p.w_d)[..., band, :, :]


def proj_unit_modulus(w):
    """Entrywise w / |w|; zeros map to 1."""
    xp = namespace(w)
    mag = xp.abs(w)
    zero = mag == 0  # NaN entries are not zero and propagate
    return xp.where(zero, xp.ones_like(w), w / xp.where(zero, xp.ones_like(mag), mag))


def proj_power_arrays(w_a, w_d, n_users):
    """Scale every band's digital precoder jointly onto the power budget."""
    xp = namespace(w_a, w_d)
    b = w_d.shape[-3]
    total = _total_power(w_a, w_d)
    budget = n_users * b
    scale = xp.sqrt(budget / xp.where(total > budget, total, budget * xp.ones_like(total)))
    return w_d * scale[..., None, None, None]


def proj_power(p, n_users=None):
    n_users = p.w_d.shape[-1] if n_users is None else n_users
    return HybridPrecoder(w_a=p.w_a, w_d=proj_power_arrays(p.w_a, p.w_d, n_users))


def init_analog(ht, l_chains):
    """Unit-modulus phases of the top right singular vectors of the band-averaged channel.

    Columns beyond the channel's numerical rank are all-ones. Always
    computed in numpy; the result does not depend on trainable parameters.
    """
    mean = to_numpy(ht).mean(axis=-3)
    n, m = mean.shape[-2:]
    if not 1 <= l_chains <= m:
        raise ParameterError(f"need 1 <= L <= M, got L={l_chains}, M={m}")
    r = min(l_chains, n, m)
    svd = truncated_svd(mean, r)
    v = svd.v
    s = svd.sigma
    small = s <= RANK_TOL * np.maximum(s[..., :1], np.finfo(float).tiny)
    v = np.where(small[..., None, :], 0.0, v)
    pad = np.zeros(v.shape[:-1] + (l_chains - r,), dtype=complex)
    return proj_unit_modulus(np.concatenate([v, pad], axis=-1))


def init_digital(w_a, b_bands, n_users):
    """Truncated identity per band, scaled so the power constraint is tight."""
    l = w_a.shape[-1]
    w_d = np.broadcast_to(np.eye(l, n_users, dtype=complex), w_a.shape[:-2] + (b_bands, l, n_users))
    total = _total_power(w_a, w_d)
    return w_d * np.sqrt(n_users * b_bands / total)[..., None, None, None]


def apga_init(ch, l_chains):
    w_a = init_analog(ch.scaled(), l_chains)
    return HybridPrecoder(w_a=w_a, w_d=init_digital(w_a, ch.b_bands, ch.n_users))


@dataclass
class ApgaResult:
    precoder: HybridPrecoder
    rates: list = field(default_factory=list)


def _check_finite(a, k, what):
    if not np.all(np.isfinite(to_numpy(a))):
        raise NumericError(f"non-finite {what}", iteration=k)


def apga_run_scaled(ht, params, approx=ApgaApprox(), k_total=None, l_chains=None, trace=False):
    """Run K unfolded iterations on scaled channels; returns the final precoder."""
    k_total = params.k_total if k_total is None else k_total
    if k_total > params.k_total:
        raise ParameterError(f"{k_total} iterations requested but params cover {params.k_total}")
    b_bands, n_users, m = ht.shape[-3:]
    approx.validate(k_total, b_bands)
    if l_chains is None:
        if not params.k_total:
            raise ParameterError("params carry no step sizes to infer L from")
        l_chains = params.mu_a[0].shape[-1]
    xp = namespace(ht)
    w_a0 = init_analog(ht, l_chains)
    w_a = as_like(w_a0, ht)
    w_d = as_like(init_digital(w_a0, b_bands, n_users), ht)
    rates = [to_numpy(rate(ht, w_a, w_d))] if trace else []
    ones = xp.ones_like(w_a)
    cache = [None] * b_bands
    for k in range(k_total):
        g_a = ones if k in approx.k_a else grad_wa_scaled(ht, w_a, w_d)
        w_a = proj_unit_modulus(w_a + params.mu_a[k] * g_a)
        _check_finite(w_a, k, "analog precoder")
        stale = [k in approx.digital(b) and cache[b] is not None for b in range(b_bands)]
        fresh = None if all(stale) else grad_wd_scaled(ht, w_a, w_d)
        for b in range(b_bands):
            if not stale[b]:
                cache[b] = fresh[..., b, :, :]
        g_d = xp.stack(cache, axis=-3) if xp is np else xp.stack(cache, dim=-3)
        w_d = proj_power_arrays(w_a, w_d + params.mu_d[k] * g_d, n_users)
        _check_finite(w_d, k, "digital precoder")
        if trace:
            rates.append(to_numpy(rate(ht, w_a, w_d)))
    return ApgaResult(precoder=HybridPrecoder(w_a=w_a, w_d=w_d), rates=rates)


def apga_run(ch, params, approx=ApgaApprox(), k_total=None, trace=False):
    return apga_run_scaled(ch.scaled(), params, approx, k_total, trace=trace)


def apga_flops(b, n, l, m, k_total, approx=ApgaApprox()):
    """Modeled products: per iteration 2B(NML + N^3 + M^2 L + L^2 N), less half a band-share per surrogate."""
    flags = []
    half = n * m * l + n**3 + m * m * l + l * l * n
    per_iter = 2 * b * half
    n_d = sum(len(approx.digital(j)) for j in range(b))
    total = half * (2 * b * k_total - b * len(approx.k_a) - n_d)
    factor = total / (k_total * per_iter) if k_total else 1.0
    if k_total and total == 0:
        flags.append("every gradient is approximated: modeled cost is zero")
    if any(0 in approx.digital(j) for j in range(b)):
        flags.append("iteration 0 in a digital approximation set is computed exactly (no cached gradient yet)")
    return FlopReport(per_iter_full=per_iter, reduction_factor=factor, total=total, flags=tuple(flags))


class ApgaSolver:
    """Adapter exposing APGA to the training loop; contexts are scaled channels."""

    def __init__(self, k_total, approx=ApgaApprox()):
        self.k_total = k_total
        self.approx = approx

    def forward(self, schedule, contexts):
        params = ApgaParams.from_schedule(schedule)
        p = apga_run_scaled(contexts, params, self.approx, self.k_total).precoder
        return p.w_a, p.w_d

    def objective(self, decision, contexts):
        w_a, w_d = decision
        return -rate(contexts, w_a, w_d)

    def task_loss(self, decision, labels):
        raise ParameterError("the beamforming solver trains without labels")


def tune_pga_steps(hts, l_chains, k_total, grid):
    """Best fixed scalar (analog, digital) step pair from ``grid`` x ``grid`` by mean rate on ``hts``."""
    b, n, m = hts.shape[-3:]
    best = None
    for mu in itertools.product(grid, grid):
        params = ApgaParams.constant(b, n, l_chains, m, k_total, *mu)
        try:
            p = apga_run_scaled(hts, params, k_total=k_total).precoder
        except NumericError:
            continue
        score = float(np.mean(rate(hts, p.w_a, p.w_d)))
        if best is None or score > best[1]:
            best = (mu, score)
    if best is None:
        raise NumericError("every step size in the grid diverged")
    return best
