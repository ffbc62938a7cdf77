"""Unfolded-optimizer scaffolding: parameter schedules, empirical risks,
hypergradients and the mini-batch SGD training loop.

A *solver* is any object exposing

``forward(schedule, contexts)``
    run the fixed-depth optimizer on a stack of contexts (leading axis =
    sample) and return its decision; must accept numpy arrays, or torch
    tensors when the schedule holds torch tensors;
``objective(decision, contexts)``
    per-sample value of the optimization objective;
``task_loss(decision, labels)``
    per-sample supervised loss (only needed for supervised data).
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError
from .linalg import FD_STEP, is_torch, to_numpy

log = logging.getLogger(__name__)

GRAD_MODES = ("finite-difference", "analytic-adjoint")
OPTIMIZERS = ("sgd", "adam")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ApproxSchedule:
    """Per-component sets of iteration indices that use approximated updates."""

    k_total: int
    sets: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.k_total < 0:
            raise ParameterError("k_total must be nonnegative")
        clean = {}
        for name, members in self.sets.items():
            members = frozenset(int(k) for k in members)
            bad = [k for k in members if not 0 <= k < self.k_total]
            if bad:
                raise ParameterError(f"approximation set {name!r} has indices outside [0, {self.k_total}): {sorted(bad)}")
            clean[name] = members
        object.__setattr__(self, "sets", clean)

    def __getitem__(self, name):
        return self.sets.get(name, frozenset())


class HyperSchedule:
    """Iteration-specific parameter bundles, one dict of arrays per iteration."""

    def __init__(self, per_iteration):
        self.per_iteration = [dict(bundle) for bundle in per_iteration]

    @property
    def k_total(self):
        return len(self.per_iteration)

    def __len__(self):
        return len(self.per_iteration)

    def __getitem__(self, k):
        return self.per_iteration[k]

    def __iter__(self):
        return iter(self.per_iteration)

    def entries(self):
        """Yield (iteration, label, array) triples in a fixed order."""
        for k, bundle in enumerate(self.per_iteration):
            for label in sorted(bundle):
                yield k, label, bundle[label]

    def map(self, fn):
        return HyperSchedule([{label: fn(label, value) for label, value in bundle.items()} for bundle in self.per_iteration])

    def copy(self):
        return self.map(lambda _, v: np.array(v, copy=True))

    def numpy(self):
        return self.map(lambda _, v: to_numpy(v))

    def allclose(self, other, atol=0.0):
        if self.k_total != other.k_total:
            return False
        for a, b in zip(self.per_iteration, other.per_iteration):
            if a.keys() != b.keys():
                return False
            if any(not np.allclose(a[key], b[key], rtol=0, atol=atol) for key in a):
                return False
        return True

    def equals(self, other):
        """Bitwise equality."""
        if self.k_total != other.k_total:
            return False
        return all(
            a.keys() == b.keys() and all(np.array_equal(a[key], b[key]) for key in a)
            for a, b in zip(self.per_iteration, other.per_iteration)
        )

    def is_finite(self):
        return all(np.all(np.isfinite(to_numpy(v))) for _, _, v in self.entries())

    # checkpoint format
    def to_json(self):
        params, complex_flags = [], {}
        for bundle in self.per_iteration:
            out = {}
            for label in sorted(bundle):
                value = np.asarray(to_numpy(bundle[label]))
                if value.ndim > 2:
                    raise ParameterError(f"parameter {label!r} has {value.ndim} dims; checkpoints hold matrices")
                value = value.reshape(value.shape[0] if value.ndim == 2 else 1, -1)
                cplx = np.iscomplexobj(value)
                complex_flags[label] = complex_flags.get(label, False) or cplx
                if cplx:
                    data = np.stack([value.real, value.imag], axis=-1).ravel().tolist()
                else:
                    data = value.ravel().tolist()
                out[label] = {"rows": int(value.shape[0]), "cols": int(value.shape[1]), "data": data}
            params.append(out)
        return {"k_total": self.k_total, "params": params, "complex": complex_flags}

    @classmethod
    def from_json(cls, doc):
        flags = doc.get("complex", {})
        bundles = []
        for raw in doc["params"]:
            bundle = {}
            for label, entry in raw.items():
                rows, cols = entry["rows"], entry["cols"]
                data = np.asarray(entry["data"], dtype=float)
                if flags.get(label, False):
                    data = data.reshape(-1, 2)
                    data = data[:, 0] + 1j * data[:, 1]
                if data.size != rows * cols:
                    raise ParameterError(f"parameter {label!r}: {data.size} values for a {rows}x{cols} matrix")
                bundle[label] = data.reshape(rows, cols)
            bundles.append(bundle)
        if len(bundles) != doc["k_total"]:
            raise ParameterError(f"checkpoint lists {len(bundles)} bundles but k_total={doc['k_total']}")
        return cls(bundles)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    seed: int = 0
    grad_mode: str = "finite-difference"
    clamp_nonnegative: frozenset = frozenset()
    momentum: float = 0.0
    optimizer: str = "sgd"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ParameterError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ParameterError("epochs must be nonnegative")
        if self.grad_mode not in GRAD_MODES:
            raise ParameterError(f"grad_mode must be one of {GRAD_MODES}")
        if not 0 <= self.momentum < 1:
            raise ParameterError("momentum must lie in [0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise ParameterError(f"optimizer must be one of {OPTIMIZERS}")
        object.__setattr__(self, "clamp_nonnegative", frozenset(self.clamp_nonnegative))


@dataclass
class Dataset:
    samples: list
    kind: str = "unsupervised"

    def __post_init__(self):
        if self.kind not in ("supervised", "unsupervised"):
            raise ParameterError(f"unknown dataset kind {self.kind!r}")
        self.samples = [s if isinstance(s, tuple) else (s, None) for s in self.samples]
        if self.kind == "supervised" and any(label is None for _, label in self.samples):
            raise ParameterError("supervised dataset has unlabeled samples")

    def __len__(self):
        return len(self.samples)

    def subset(self, indices):
        return Dataset([self.samples[i] for i in indices], self.kind)

    def contexts(self):
        return np.stack([np.asarray(x) for x, _ in self.samples])

    def labels(self):
        if any(label is None for _, label in self.samples):
            raise ParameterError("dataset has unlabeled samples")
        return np.stack([np.asarray(y) for _, y in self.samples])


def _backend_array(a, like_torch):
    if like_torch:
        import torch

        return torch.as_tensor(a)
    return a


def _schedule_is_torch(params):
    return any(is_torch(v) for _, _, v in params.entries())


def _mean(losses):
    if is_torch(losses):
        return losses.mean()
    return math.fsum(np.atleast_1d(losses).tolist()) / np.size(losses)


def unsup_risk(solver, params, data):
    """Mean optimization objective of the unfolded solver's outputs."""
    if len(data) == 0:
        raise ParameterError("empty dataset")
    contexts = _backend_array(data.contexts(), _schedule_is_torch(params))
    return _mean(solver.objective(solver.forward(params, contexts), contexts))


def sup_risk(solver, params, data, task_loss=None):
    """Mean supervised task loss of the unfolded solver's outputs."""
    if len(data) == 0:
        raise ParameterError("empty dataset")
    if data.kind != "supervised":
        raise ParameterError("supervised risk needs a labeled dataset")
    task_loss = task_loss or solver.task_loss
    torch_mode = _schedule_is_torch(params)
    contexts = _backend_array(data.contexts(), torch_mode)
    labels = _backend_array(data.labels(), torch_mode)
    return _mean(task_loss(solver.forward(params, contexts), labels))


def default_risk(data):
    return sup_risk if data.kind == "supervised" else unsup_risk


def hypergradient(solver, params, batch, risk=None, mode="finite-difference", h=FD_STEP, nonnegative=()):
    """Gradient of the batch risk with respect to every schedule entry.

    Returns ``(risk_value, gradient)``; the gradient is a HyperSchedule of
    the same shapes. ``analytic-adjoint`` differentiates the solver in
    reverse mode through torch. In finite-difference mode, entries of the
    ``nonnegative`` labels lying within ``h`` of zero get a one-sided
    forward difference so no probe leaves their domain.
    """
    risk = risk or default_risk(batch)
    if mode == "finite-difference":
        return _fd_hypergradient(solver, params, batch, risk, h, frozenset(nonnegative))
    if mode == "analytic-adjoint":
        return _adjoint_hypergradient(solver, params, batch, risk)
    raise ParameterError(f"unknown gradient mode {mode!r}")


def _fd_hypergradient(solver, params, batch, risk, h, nonnegative):
    work = params.copy()
    base = float(risk(solver, work, batch))
    grad = work.map(lambda _, v: np.zeros(v.shape, dtype=v.dtype if np.iscomplexobj(v) else float))
    for k, label, value in work.entries():
        units = (1.0, 1j) if np.iscomplexobj(value) else (1.0,)
        for idx in np.ndindex(value.shape):
            original = value[idx]
            one_sided = label in nonnegative and original.real < h
            for unit in units:
                probe = []
                for sign in ((1,) if one_sided else (1, -1)):
                    value[idx] = original + sign * h * unit
                    val = float(risk(solver, work, batch))
                    if not math.isfinite(val):
                        raise NumericError(f"non-finite risk while probing {label}[{k}]{idx}")
                    probe.append(val)
                value[idx] = original
                diff = (probe[0] - base) / h if one_sided else (probe[0] - probe[1]) / (2 * h)
                grad[k][label][idx] += unit * diff
    return base, grad


def _adjoint_hypergradient(solver, params, batch, risk):
    import torch

    leaves = params.map(lambda _, v: torch.tensor(np.asarray(v), requires_grad=True))
    value = risk(solver, leaves, batch)
    if not torch.isfinite(value):
        raise NumericError("non-finite risk in forward pass")
    tensors = [v for _, _, v in leaves.entries()]
    grads = torch.autograd.grad(value, tensors, allow_unused=True)
    lookup = {id(t): g for t, g in zip(tensors, grads)}
    grad = leaves.map(lambda _, v: np.zeros(v.shape) if lookup[id(v)] is None else lookup[id(v)].numpy().copy())
    return float(value.detach()), grad


@dataclass
class TrainResult:
    params: HyperSchedule
    history: list
    final_risk: float
    diverged: bool = False
    diagnostic: str = ""


def epoch_batches(rng, n, batch_size):
    """Shuffled consecutive batches covering ``range(n)`` once; the last may be short."""
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def sgd_train(solver, init, data, cfg, risk=None):
    """Mini-batch training of the unfolded solver's hyperparameters (SGD or Adam).

    ``history`` holds ``(epoch, training-set risk)`` rows, starting with the
    risk of ``init`` at epoch 0. On a non-finite risk or gradient training
    stops and the last finite parameters are returned with ``diverged`` set.
    """
    if len(data) == 0:
        raise ParameterError("empty dataset")
    risk = risk or default_risk(data)
    rng = np.random.default_rng(cfg.seed)
    params = init.copy()
    good = params
    state = _optimizer_state(params)
    history = [(0, float(risk(solver, params, data)))]
    for epoch in range(1, cfg.epochs + 1):
        for idx in epoch_batches(rng, len(data), cfg.batch_size):
            batch = data.subset(idx)
            try:
                value, grad = hypergradient(solver, params, batch, risk, cfg.grad_mode,
                                            nonnegative=cfg.clamp_nonnegative)
            except NumericError as exc:
                return _abort(good, history, f"epoch {epoch}: {exc}")
            if not (math.isfinite(value) and grad.is_finite()):
                return _abort(good, history, f"epoch {epoch}: non-finite batch risk or gradient")
            updated = _apply_update(params, grad, state, cfg)
            if not updated.is_finite():
                return _abort(good, history, f"epoch {epoch}: update produced non-finite parameters")
            params = updated
        current = float(risk(solver, params, data))
        if not math.isfinite(current):
            return _abort(good, history, f"epoch {epoch}: training risk became non-finite")
        good = params
        history.append((epoch, current))
        log.info("epoch %d risk %.6e", epoch, current)
    return TrainResult(params=params, history=history, final_risk=history[-1][1])


def _optimizer_state(params):
    zeros = params.map(lambda _, v: np.zeros_like(v))
    return {"t": 0, "m": zeros, "v": zeros.copy()}


def _apply_update(params, grad, state, cfg):
    """One optimizer step; ``state`` carries momentum (and Adam moments) across calls."""
    state["t"] += 1
    t, m_prev, v_prev = state["t"], state["m"], state["v"]
    b1, b2 = ADAM_BETAS
    bundles, m_new, v_new = [], [], []
    for k, bundle in enumerate(params.per_iteration):
        out, m_k, v_k = {}, {}, {}
        for label, value in bundle.items():
            g = grad[k][label]
            if cfg.optimizer == "sgd":
                m_k[label] = cfg.momentum * m_prev[k][label] + g
                v_k[label] = v_prev[k][label]
                step = m_k[label]
            else:
                m_k[label] = b1 * m_prev[k][label] + (1 - b1) * g
                v_k[label] = b2 * v_prev[k][label] + (1 - b2) * np.abs(g) ** 2
                step = (m_k[label] / (1 - b1**t)) / (np.sqrt(v_k[label] / (1 - b2**t)) + ADAM_EPS)
            out[label] = _clamp(label, value - cfg.learning_rate * step, cfg.clamp_nonnegative)
        bundles.append(out)
        m_new.append(m_k)
        v_new.append(v_k)
    state["m"], state["v"] = HyperSchedule(m_new), HyperSchedule(v_new)
    return HyperSchedule(bundles)


def _clamp(label, value, labels):
    if label in labels:
        return np.maximum(value, 0.0)
    return value


def _abort(params, history, message):
    log.warning("training aborted: %s", message)
    return TrainResult(params=params, history=history, final_risk=history[-1][1], diverged=True, diagnostic=message)
