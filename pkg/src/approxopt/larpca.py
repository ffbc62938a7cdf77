"""Learned approximated robust PCA.

The solver alternates a soft-thresholded sparse update with scaled gradient
steps on the factors of ``V = L R^T``. Factor updates listed in the skip
sets keep the previous factor, which removes their gradient and Gram-inverse
cost. Step sizes are per-entry matrices, separate for ``L`` and ``R``, and
the thresholds are per-iteration.

All routines operate on the trailing two axes and accept numpy arrays or
torch tensors.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError, RankDeficientError
from .flops import FlopReport
from .linalg import namespace, small_spd_inverse, soft_threshold, to_numpy, truncated_svd
from .unfold import HyperSchedule

DEFAULT_STEP = 0.5
DEFAULT_LAMBDA_S = 0.1


@dataclass
class RpcaInstance:
    x: np.ndarray
    r: int
    v_star: np.ndarray = None
    y_star: np.ndarray = None
    alpha: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if not 1 <= self.r <= min(self.x.shape):
            raise ParameterError(f"rank {self.r} invalid for a {self.x.shape} matrix")
        if not 0 <= self.alpha < 1:
            raise ParameterError("alpha must lie in [0, 1)")
        if self.v_star is not None and self.y_star is not None:
            if not np.allclose(self.v_star + self.y_star, self.x, rtol=0, atol=1e-12):
                raise ParameterError("x differs from v_star + y_star")


@dataclass
class RpcaFactors:
    l: object
    r_f: object
    y: object


@dataclass(frozen=True)
class LarpcaApprox:
    """Iterations whose L (resp. R) update is skipped."""

    k_l: frozenset = frozenset()
    k_r: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "k_l", frozenset(int(k) for k in self.k_l))
        object.__setattr__(self, "k_r", frozenset(int(k) for k in self.k_r))

    def validate(self, k_total):
        bad = sorted(k for k in self.k_l | self.k_r if not 0 <= k < k_total)
        if bad:
            raise ParameterError(f"skip indices {bad} outside [0, {k_total})")

    @property
    def n_skipped(self):
        return len(self.k_l) + len(self.k_r)

    @classmethod
    def spread(cls, k_total, n_skip):
        """Skip ``n_skip`` of the ``2K`` factor updates, spread evenly.

        Skipped iterations are evenly spaced counting back from the last
        one, and the skipped factor alternates R, L, R, ... between them. Past
        one skip per iteration, a second pass skips the other factor too.
        """
        if not 0 <= n_skip <= 2 * k_total:
            raise ParameterError(f"cannot skip {n_skip} of {2 * k_total} updates")
        k_l, k_r = set(), set()
        remaining = n_skip
        for sweep in range(2):
            count = min(remaining, k_total)
            for i in range(count):
                k = k_total - 1 - (i * k_total) // count
                if sweep == 0:
                    (k_r if i % 2 == 0 else k_l).add(k)
                else:
                    (k_l if k in k_r else k_r).add(k)
            remaining -= count
        return cls(k_l=k_l, k_r=k_r)


@dataclass
class LarpcaParams:
    eta_l: list
    eta_r: list
    zeta: list

    def __post_init__(self):
        k = len(self.eta_l)
        if len(self.eta_r) != k or len(self.zeta) != k + 1:
            raise ParameterError(f"expected {k}, {k}, {k + 1} entries, got {len(self.eta_l)}, {len(self.eta_r)}, {len(self.zeta)}")
        if any(float(np.min(to_numpy(z))) < 0 for z in self.zeta):
            raise ParameterError("thresholds must be nonnegative")

    @property
    def k_total(self):
        return len(self.eta_l)

    @classmethod
    def constant(cls, n1, n2, r, k_total, step=DEFAULT_STEP, zeta0=0.1, decay=0.5):
        """Scalar-broadcast steps and geometrically decaying thresholds."""
        return cls(
            eta_l=[np.full((n1, r), float(step)) for _ in range(k_total)],
            eta_r=[np.full((n2, r), float(step)) for _ in range(k_total)],
            zeta=[float(zeta0) * decay**k for k in range(k_total + 1)],
        )

    def to_schedule(self):
        bundles = []
        for k in range(self.k_total):
            bundle = {
                "eta_l": np.asarray(self.eta_l[k], dtype=float),
                "eta_r": np.asarray(self.eta_r[k], dtype=float),
                "zeta": np.full((1, 1), float(np.asarray(self.zeta[k + 1]).ravel()[0])),
            }
            if k == 0:
                bundle["zeta0"] = np.full((1, 1), float(np.asarray(self.zeta[0]).ravel()[0]))
            bundles.append(bundle)
        return HyperSchedule(bundles)

    @classmethod
    def from_schedule(cls, schedule):
        if schedule.k_total == 0:
            raise ParameterError("an empty schedule has nowhere to store the initial threshold")
        return cls(
            eta_l=[b["eta_l"] for b in schedule],
            eta_r=[b["eta_r"] for b in schedule],
            zeta=[schedule[0]["zeta0"]] + [b["zeta"] for b in schedule],
        )


def _fro2(a):
    return (a * a).sum(axis=(-2, -1))


def _fro(a):
    return namespace(a).sqrt(_fro2(a))


def rpca_objective(f, x):
    """Half the squared Frobenius misfit of L R^T + Y to X."""
    return 0.5 * _fro2(f.l @ f.r_f.mT + f.y - x)


def sparse_update(x, l, r_f, zeta):
    return soft_threshold(x - l @ r_f.mT, zeta)


def grad_l(f, x):
    return (f.l @ f.r_f.mT + f.y - x) @ f.r_f


def grad_r(f, x):
    return (f.l @ f.r_f.mT + f.y - x).mT @ f.l


def factor_update_l(f, x, eta_l):
    """Scaled gradient step on L, preconditioned by (R^T R)^{-1}."""
    return f.l - eta_l * (grad_l(f, x) @ small_spd_inverse(f.r_f.mT @ f.r_f))


def factor_update_r(f, x, eta_r):
    """Scaled gradient step on R; ``f.l`` must already hold the updated L."""
    return f.r_f - eta_r * (grad_r(f, x) @ small_spd_inverse(f.l.mT @ f.l))


def larpca_init(x, zeta0, r):
    y = soft_threshold(x, zeta0)
    svd = truncated_svd(x - y, r)
    root = namespace(svd.sigma).sqrt(svd.sigma)[..., None, :]
    return RpcaFactors(l=svd.u * root, r_f=svd.v * root, y=y)


@dataclass
class LarpcaResult:
    v_hat: object
    y_hat: object
    factors: RpcaFactors
    trace: list = field(default_factory=list)


def _check_finite(a, k, what):
    if not np.all(np.isfinite(to_numpy(a))):
        raise NumericError(f"non-finite {what}", iteration=k)


def _trace_row(k, f, x, v_star):
    v = f.l @ f.r_f.mT
    row = {
        "k": k,
        "objective": to_numpy(rpca_objective(f, x)),
        "recovery_error": to_numpy(recovery_error(v, x)),
        "rel_err_vs_truth": None if v_star is None else to_numpy(relative_error(v, v_star)),
    }
    return row


def larpca_run(x, params, approx=LarpcaApprox(), k_total=None, v_star=None, trace=False, rank=None):
    """Run the unfolded solver for ``k_total`` iterations (default: all of ``params``).

    ``rank`` is only needed when ``params`` holds no step sizes to read it from.
    """
    k_total = params.k_total if k_total is None else k_total
    if k_total > params.k_total:
        raise ParameterError(f"{k_total} iterations requested but params cover {params.k_total}")
    approx.validate(k_total)
    r = rank if rank is not None else (params.eta_l[0].shape[-1] if params.k_total else None)
    if r is None:
        raise ParameterError("params carry no step sizes to infer the rank from")
    f = larpca_init(x, params.zeta[0], r)
    rows = [_trace_row(0, f, x, v_star)] if trace else []
    for k in range(k_total):
        y = sparse_update(x, f.l, f.r_f, params.zeta[k + 1])
        f = RpcaFactors(l=f.l, r_f=f.r_f, y=y)
        try:
            if k not in approx.k_l:
                f = RpcaFactors(l=factor_update_l(f, x, params.eta_l[k]), r_f=f.r_f, y=y)
                _check_finite(f.l, k, "L factor")
            if k not in approx.k_r:
                f = RpcaFactors(l=f.l, r_f=factor_update_r(f, x, params.eta_r[k]), y=y)
                _check_finite(f.r_f, k, "R factor")
        except RankDeficientError as exc:
            raise RankDeficientError(str(exc), iteration=k) from exc
        if trace:
            rows.append(_trace_row(k + 1, f, x, v_star))
    return LarpcaResult(v_hat=f.l @ f.r_f.mT, y_hat=f.y, factors=f, trace=rows)


def larpca_flops(n1, n2, r, k_total, approx=LarpcaApprox()):
    """Modeled flops: K (n^2 r + n^2) + (2K - skipped) (n^2 r + 2 n r^2 + r^3)."""
    flags = []
    if n1 != n2:
        flags.append(f"non-square {n1}x{n2}: modeled with n = {max(n1, n2)}")
    n = max(n1, n2)
    p_low = n * n * r + 2 * n * r * r + r**3
    sparse = n * n * r + n * n
    per_iter = sparse + 2 * p_low
    total = k_total * sparse + (2 * k_total - approx.n_skipped) * p_low
    factor = total / (k_total * per_iter) if k_total else 1.0
    return FlopReport(per_iter_full=per_iter, reduction_factor=factor, total=total, flags=tuple(flags))


def unsup_rpca_loss(v_hat, y_hat, x, lambda_s=DEFAULT_LAMBDA_S):
    """Relative reconstruction error plus a per-entry l1 penalty on the sparse part."""
    if lambda_s < 0:
        raise ParameterError("lambda_s must be nonnegative")
    norm_x = _fro(x)
    if np.any(to_numpy(norm_x) == 0):
        raise ParameterError("data matrix has zero norm")
    n1, n2 = x.shape[-2:]
    return _fro(x - v_hat) / norm_x + lambda_s * namespace(y_hat).abs(y_hat).sum(axis=(-2, -1)) / (n1 * n2)


def recovery_error(v_hat, x):
    """||X - V||_F^2 / (n1 n2 ||X||_F)."""
    norm_x = _fro(x)
    if np.any(to_numpy(norm_x) == 0):
        raise ParameterError("data matrix has zero norm")
    n1, n2 = x.shape[-2:]
    return _fro2(x - v_hat) / (n1 * n2 * norm_x)


def relative_error(v_hat, v_star):
    """Ground-truth error ||V - V*||_F / ||V*||_F."""
    return _fro(v_hat - v_star) / _fro(v_star)


class LarpcaSolver:
    """Adapter exposing LARPCA to the training loop."""

    def __init__(self, k_total, approx=LarpcaApprox(), lambda_s=DEFAULT_LAMBDA_S):
        approx.validate(k_total)
        self.k_total = k_total
        self.approx = approx
        self.lambda_s = lambda_s

    def forward(self, schedule, contexts):
        params = LarpcaParams.from_schedule(schedule)
        result = larpca_run(contexts, params, self.approx, self.k_total)
        return result.v_hat, result.y_hat

    def objective(self, decision, contexts):
        v_hat, y_hat = decision
        return unsup_rpca_loss(v_hat, y_hat, contexts, self.lambda_s)

    def task_loss(self, decision, v_star):
        v_hat, _ = decision
        return _fro2(v_hat - v_star) / _fro2(v_star)
