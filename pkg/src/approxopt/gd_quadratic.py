"""Element-wise gradient descent with selectively approximated gradients.

Testbed on strongly convex quadratics L_o(s) = s^T q s / 2 - b^T s. At the
iterations listed in an injection the exact gradient is replaced by a
surrogate ``grad + e_k``; the stated error budget is ||eta_k * e_k|| <= delta_k.

Two checks are run here. ``descent_check`` tests that one step never raises
the objective when the steps are small. ``prop2_bound`` gives the
squared-error bound to compare runs against.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError

SYMMETRY_TOL = 1e-12
DESCENT_SLACK = 1e-12
DIMS = (4, 16, 64)
MAX_CONDITION = 100.0
GAMMA_FRACTION = 0.9  # gamma = 0.9 / L in the randomized suites
ETA_FLOOR = 0.75  # eta entries drawn from [0.75 gamma, gamma]
DELTA_MAX = 0.1
MAX_STEPS = 30


@dataclass
class QuadraticProblem:
    q: np.ndarray
    b: np.ndarray
    mu: float = field(init=False)
    l_smooth: float = field(init=False)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        d = self.b.shape[0]
        if self.q.shape != (d, d):
            raise ParameterError(f"q must be {d}x{d}, got {self.q.shape}")
        if np.abs(self.q - self.q.T).max() > SYMMETRY_TOL * max(1.0, np.abs(self.q).max()):
            raise ParameterError("q is not symmetric")
        eig = np.linalg.eigvalsh(self.q)
        if eig[0] <= 0:
            raise ParameterError(f"q is not positive definite (smallest eigenvalue {eig[0]:.3e})")
        self.mu, self.l_smooth = float(eig[0]), float(eig[-1])

    @property
    def dim(self):
        return self.b.shape[0]

    def loss(self, s):
        return 0.5 * s @ self.q @ s - self.b @ s

    def grad(self, s):
        return self.q @ s - self.b

    def minimizer(self):
        return np.linalg.solve(self.q, self.b)


def random_quadratic(rng, d, condition, l_smooth=1.0):
    """q = O^T diag(lam) O with log-uniform spectrum pinned to [L / condition, L]."""
    mu = l_smooth / condition
    lam = np.exp(rng.uniform(np.log(mu), np.log(l_smooth), d))
    lam[0], lam[-1] = mu, l_smooth
    o, _ = np.linalg.qr(rng.standard_normal((d, d)))
    q = o.T @ np.diag(lam) @ o
    return QuadraticProblem(q=(q + q.T) / 2, b=rng.standard_normal(d))


@dataclass
class Injection:
    """Surrogate-gradient errors ``errors[k]`` and their budgets ``deltas[k]``."""

    errors: dict = field(default_factory=dict)
    deltas: dict = field(default_factory=dict)

    def __post_init__(self):
        if set(self.errors) != set(self.deltas):
            raise ParameterError("every injected error needs a budget and vice versa")
        if any(d < 0 for d in self.deltas.values()):
            raise ParameterError("error budgets must be nonnegative")

    def check(self, etas):
        for k, e in self.errors.items():
            size = np.linalg.norm(etas[k] * e)
            if size > self.deltas[k] * (1 + 1e-12):
                raise ParameterError(f"iteration {k}: ||eta * e|| = {size:.6g} exceeds delta = {self.deltas[k]:.6g}")


def gd_step_elementwise(s, eta, grad):
    s, eta, grad = np.asarray(s), np.asarray(eta), np.asarray(grad)
    if not s.shape == eta.shape == grad.shape:
        raise ParameterError(f"shape mismatch: s {s.shape}, eta {eta.shape}, grad {grad.shape}")
    if np.any(eta < 0):
        raise ParameterError("step sizes must be nonnegative")
    return s - eta * grad


def gd_run_selective(p, s0, etas, injection=None, k_total=None, gamma=None):
    """Iterates s^(0..K); surrogate gradients at the injected iterations.

    With ``gamma`` given, every step entry must lie in [0, gamma] and
    gamma below 1/L.
    """
    injection = injection or Injection()
    k_total = len(etas) if k_total is None else k_total
    if len(etas) != k_total:
        raise ParameterError(f"{len(etas)} step vectors for {k_total} iterations")
    if any(not 0 <= k < k_total for k in injection.errors):
        raise ParameterError("injection index outside the run")
    if gamma is not None:
        if not 0 < gamma < 1 / p.l_smooth:
            raise ParameterError(f"gamma = {gamma} must lie in (0, 1/L = {1 / p.l_smooth})")
        if any(np.any(e > gamma) for e in etas):
            raise ParameterError("step entries exceed gamma")
    injection.check(etas)
    traj = [np.asarray(s0, dtype=float)]
    for k in range(k_total):
        s = traj[-1]
        g = p.grad(s)
        if k in injection.errors:
            g = g + injection.errors[k]
        s = gd_step_elementwise(s, etas[k], g)
        if not np.all(np.isfinite(s)):
            raise NumericError("non-finite iterate", iteration=k)
        traj.append(s)
    return np.array(traj)


def prop2_bound(p, s0, gamma, deltas, k_total):
    """(1 - gamma mu)^K ||s0 - s*||^2 + sum_k (1 - gamma mu)^(K-k-1) delta_k^2."""
    if not 0 < gamma < 1 / p.l_smooth:
        raise ParameterError(f"gamma = {gamma} must lie in (0, 1/L = {1 / p.l_smooth})")
    if any(not 0 <= k < k_total for k in deltas):
        raise ParameterError("delta index outside the run")
    rho = 1 - gamma * p.mu
    d0 = np.sum((np.asarray(s0) - p.minimizer()) ** 2)
    return rho**k_total * d0 + sum(rho ** (k_total - k - 1) * dk**2 for k, dk in deltas.items())


def norm_bound(p, s0, gamma, deltas, k_total):
    """(1 - gamma mu)^K ||s0 - s*|| + sum_k (1 - gamma mu)^(K-k-1) delta_k.

    Holds for uniform steps eta = gamma < 1/L, since the exact step then
    contracts the error by 1 - gamma mu and the injected part adds at most
    delta_k (triangle inequality). Compare against ||s^(K) - s*||, unsquared.
    """
    if not 0 < gamma < 1 / p.l_smooth:
        raise ParameterError(f"gamma = {gamma} must lie in (0, 1/L = {1 / p.l_smooth})")
    rho = 1 - gamma * p.mu
    d0 = np.linalg.norm(np.asarray(s0) - p.minimizer())
    return rho**k_total * d0 + sum(rho ** (k_total - k - 1) * dk for k, dk in deltas.items())


def descent_check(p, s, eta):
    """Whether one exact element-wise step does not raise the objective."""
    s_next = gd_step_elementwise(s, eta, p.grad(s))
    return bool(p.loss(s_next) <= p.loss(s) + DESCENT_SLACK)


@dataclass
class SuiteResult:
    trials: int
    violations: int
    max_ratio_to_bound: float
    seconds: float = 0.0
    worst_trial: int = -1
    ratios: list = field(default_factory=list, repr=False)

    def to_json(self):
        return {"trials": self.trials, "violations": self.violations, "max_ratio_to_bound": self.max_ratio_to_bound}


def _random_setup(rng):
    d = int(rng.choice(DIMS))
    p = random_quadratic(rng, d, rng.uniform(1.0, MAX_CONDITION))
    s0 = p.minimizer() + rng.standard_normal(d) / np.sqrt(d)
    return p, s0


def descent_suite(n_trials, seed=0, k_total=10):
    """Run exact element-wise GD with steps in (0, 1/L]; count objective increases.

    The ratio reported is the largest L_o(s^(k+1)) - L_o(s^(k)) seen.
    """
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    violations, worst, worst_trial = 0, -np.inf, -1
    for t in range(n_trials):
        p, s = _random_setup(rng)
        bad = False
        for _ in range(k_total):
            eta = (1 - rng.uniform(0, 1, p.dim)) / p.l_smooth  # (0, 1/L]
            s_next = gd_step_elementwise(s, eta, p.grad(s))
            rise = p.loss(s_next) - p.loss(s)
            if rise > worst:
                worst, worst_trial = rise, t
            bad |= rise > DESCENT_SLACK
            s = s_next
        violations += bad
    worst = float(worst) if n_trials else 0.0
    return SuiteResult(n_trials, int(violations), worst, time.perf_counter() - start, worst_trial)


def prop2_trial(rng, zero_delta=False, uniform_steps=False, gamma_fraction=GAMMA_FRACTION):
    """One randomized run near the edge of the error budget.

    Returns (squared final error, squared-error bound, norm bound or None).
    """
    p, s0 = _random_setup(rng)
    gamma = gamma_fraction / p.l_smooth
    k_total = int(rng.integers(1, MAX_STEPS + 1))
    floor = 1.0 if uniform_steps else ETA_FLOOR
    etas = [rng.uniform(floor * gamma, gamma, p.dim) for _ in range(k_total)]
    errors, deltas = {}, {}
    for k in range(k_total):
        if rng.random() < 0.5:
            delta = 0.0 if zero_delta else rng.uniform(0, DELTA_MAX)
            u = rng.standard_normal(p.dim)
            frac = rng.uniform(0.5, 1.0)
            errors[k] = u / etas[k] * (frac * delta / np.linalg.norm(u))
            deltas[k] = delta
    traj = gd_run_selective(p, s0, etas, Injection(errors, deltas), k_total, gamma)
    err = float(np.sum((traj[-1] - p.minimizer()) ** 2))
    nb = norm_bound(p, s0, gamma, deltas, k_total) if uniform_steps else None
    return err, prop2_bound(p, s0, gamma, deltas, k_total), nb


def prop2_suite(n_trials, seed=0, zero_delta=False, gamma_fraction=GAMMA_FRACTION):
    """Count trials whose squared final error exceeds ``prop2_bound``."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    ratios = np.array([err / bound for err, bound, _ in (prop2_trial(rng, zero_delta, gamma_fraction=gamma_fraction) for _ in range(n_trials))])
    worst = int(np.argmax(ratios)) if n_trials else -1
    return SuiteResult(n_trials, int(np.sum(ratios > 1)), float(ratios.max(initial=0.0)),
                       time.perf_counter() - start, worst, ratios.tolist())


def norm_bound_suite(n_trials, seed=0, gamma_fraction=GAMMA_FRACTION):
    """Uniform steps eta = gamma; compare ||s^(K) - s*|| with ``norm_bound``."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    ratios = []
    for _ in range(n_trials):
        err, _, nb = prop2_trial(rng, uniform_steps=True, gamma_fraction=gamma_fraction)
        ratios.append(np.sqrt(err) / nb)
    ratios = np.array(ratios)
    return SuiteResult(n_trials, int(np.sum(ratios > 1 + 1e-12)), float(ratios.max(initial=0.0)),
                       time.perf_counter() - start, int(np.argmax(ratios)) if n_trials else -1, ratios.tolist())


def contraction_suite(n_trials, seed=0, k_total=20, gamma_fraction=GAMMA_FRACTION):
    """Exact steps eta = gamma: per-step error ratio against sqrt(1 - gamma mu)."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    violations, worst = 0, 0.0
    for _ in range(n_trials):
        p, s0 = _random_setup(rng)
        gamma = gamma_fraction / p.l_smooth
        traj = gd_run_selective(p, s0, [np.full(p.dim, gamma)] * k_total, gamma=gamma)
        dist = np.linalg.norm(traj - p.minimizer(), axis=1)
        ratio = dist[1:] / (np.sqrt(1 - gamma * p.mu) * dist[:-1])
        worst = max(worst, float(ratio.max()))
        violations += bool(np.any(ratio > 1 + 1e-12))
    return SuiteResult(n_trials, int(violations), worst, time.perf_counter() - start)


def prop2_counterexamples():
    """Deterministic runs that meet the hypotheses yet exceed ``prop2_bound``.

    ``aligned``: one injected error pointing along s - s*; the cross term
    2 (1 - gamma mu) ||s - s*|| delta outgrows the bound's slack when gamma mu
    is small. ``zero_step``: a zero step entry freezes one coordinate while
    the bound decays geometrically.
    Each entry maps a name to (problem, s0, gamma, etas, injection).
    """
    p = QuadraticProblem(q=np.diag([0.01, 1.0]), b=np.zeros(2))
    gamma = 0.9
    eta = np.full(2, gamma)
    aligned = Injection(errors={0: np.array([-0.1 / gamma, 0.0])}, deltas={0: 0.1})
    frozen = [np.array([gamma, 0.0])] * 5
    return {
        "aligned": (p, np.array([1.0, 0.0]), gamma, [eta], aligned),
        "zero_step": (p, np.array([0.0, 1.0]), gamma, frozen, Injection()),
    }


def descent_counterexample():
    """Steps of 10/L on a quadratic with L / mu = 100: the objective rises."""
    p = QuadraticProblem(q=np.diag([0.01, 1.0]), b=np.zeros(2))
    return p, np.array([0.0, 1.0]), np.full(2, 10.0)
