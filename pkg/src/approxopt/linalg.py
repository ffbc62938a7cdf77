"""Dense matrix kernels shared by the solvers.

Every kernel accepts either numpy arrays or torch tensors (the latter so the
solvers can be differentiated end to end), and operates on the trailing two
axes so a leading batch axis is carried through unchanged.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, RankDeficientError

SVD_ITERATIONS = 30
SVD_OVERSAMPLE = 10
SVD_SEED = 20240917
FD_STEP = 1e-5
HERMITIAN_TOL = 1e-10
MAX_CONDITION = 1e12


def namespace(*arrays):
    """Return the array module (numpy or torch) that owns ``arrays``."""
    for a in arrays:
        if type(a).__module__.split(".")[0] == "torch":
            import torch

            return torch
    return np


def is_torch(a):
    return namespace(a) is not np


def to_numpy(a):
    if is_torch(a):
        return a.detach().cpu().numpy()
    return np.asarray(a)


def as_like(value, like):
    """Convert a numpy array to the backend (and device) of ``like``."""
    if is_torch(like):
        import torch

        return torch.as_tensor(np.asarray(value), device=like.device)
    return np.asarray(value)


def is_complex(a):
    return a.is_complex() if is_torch(a) else np.iscomplexobj(a)


def eye_like(a, n):
    """Identity of size n with the dtype/backend of ``a``."""
    if is_torch(a):
        import torch

        return torch.eye(n, dtype=a.dtype, device=a.device)
    return np.eye(n, dtype=a.dtype)


def hermitian(a):
    return a.mT.conj()


@dataclass(frozen=True)
class TruncatedSvd:
    u: object
    sigma: object
    v: object

    def reconstruct(self):
        return (self.u * self.sigma[..., None, :]) @ hermitian(self.v)


def _start_block(cols, k, complex_input):
    rng = np.random.default_rng(SVD_SEED)
    block = rng.standard_normal((cols, k))
    if complex_input:
        block = block + 1j * rng.standard_normal((cols, k))
    return block


def truncated_svd(m, r, n_iter=SVD_ITERATIONS, oversample=SVD_OVERSAMPLE):
    """Top-``r`` singular triplets by block power (subspace) iteration.

    The subspace carries ``oversample`` extra columns, is re-orthonormalized
    after every multiplication, and starts from a fixed-seed Gaussian block,
    so the result is a deterministic function of ``m``. A Rayleigh-Ritz step
    on the converged subspace extracts the triplets.
    """
    rows, cols = m.shape[-2:]
    if not 1 <= r <= min(rows, cols):
        raise ParameterError(f"rank {r} outside [1, {min(rows, cols)}]")
    xp = namespace(m)
    k = min(r + oversample, rows, cols)
    start = as_like(_start_block(cols, k, is_complex(m)), m)
    q, _ = xp.linalg.qr(m @ start)
    for _ in range(n_iter):
        z, _ = xp.linalg.qr(hermitian(m) @ q)
        q, _ = xp.linalg.qr(m @ z)
    ub, s, vh = xp.linalg.svd(hermitian(q) @ m, full_matrices=False)
    u = q @ ub[..., :, :r]
    return TruncatedSvd(u=u, sigma=s[..., :r], v=hermitian(vh[..., :r, :]))


def soft_threshold(m, zeta):
    """Entrywise shrinkage sign(m) * max(|m| - zeta, 0)."""
    if float(to_numpy(zeta).min()) < 0:
        raise ParameterError(f"threshold must be nonnegative, got {to_numpy(zeta).min()}")
    xp = namespace(m, zeta)
    return xp.sign(m) * xp.clip(xp.abs(m) - zeta, 0, None)


def _max_abs(a):
    a = to_numpy(a)
    return float(np.abs(a).max()) if a.size else 0.0


def logdet_psd(a):
    """Natural-log determinant of a Hermitian positive-definite matrix.

    Computed as twice the log-sum of the Cholesky diagonal after
    symmetrizing away asymmetry below ``HERMITIAN_TOL``.
    """
    xp = namespace(a)
    asym = _max_abs(a - hermitian(a))
    if asym > HERMITIAN_TOL * max(1.0, _max_abs(a)):
        raise NumericError(f"matrix is not Hermitian (max asymmetry {asym:.3e})")
    a = (a + hermitian(a)) / 2
    if xp is np:
        try:
            c = np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise NumericError("matrix is not positive definite") from exc
    else:
        c, info = xp.linalg.cholesky_ex(a)
        if bool((info != 0).any()):
            raise NumericError("matrix is not positive definite")
    diag = xp.diagonal(c, 0, -2, -1).real
    return 2 * xp.log(diag).sum(axis=-1)


def small_spd_inverse(g):
    """Inverse of a small symmetric/Hermitian positive-definite matrix."""
    eig = np.linalg.eigvalsh(to_numpy((g + hermitian(g)) / 2))
    lo, hi = eig[..., 0], eig[..., -1]
    if np.any(lo <= 0) or np.any(hi > MAX_CONDITION * lo):
        cond = np.max(np.where(lo > 0, hi / np.where(lo > 0, lo, 1), np.inf))
        raise RankDeficientError(f"factor Gram matrix condition number {cond:.3e} exceeds {MAX_CONDITION:.0e}")
    return namespace(g).linalg.inv(g)


def fd_gradient(f, at, h=FD_STEP):
    """Central-difference gradient of a scalar function of a matrix.

    For complex ``at`` the result is the conjugate Wirtinger derivative
    df/d(conj z) = (df/dRe + i df/dIm) / 2, i.e. the steepest-ascent
    direction up to a factor of two.
    """
    if h <= 0:
        raise ParameterError("finite-difference step must be positive")
    at = np.asarray(at)
    cplx = np.iscomplexobj(at)
    grad = np.zeros(at.shape, dtype=complex if cplx else float)

    def partial(direction):
        plus, minus = f(at + direction), f(at - direction)
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericError("non-finite function value while differencing")
        return (plus - minus) / (2 * h)

    for idx in np.ndindex(at.shape):
        e = np.zeros(at.shape, dtype=at.dtype)
        e[idx] = h
        if cplx:
            grad[idx] = 0.5 * (partial(e) + 1j * partial(1j * e))
        else:
            grad[idx] = partial(e)
    return grad
