"""Experiment driver: ``approxopt {gen,train,eval,flops,prop-check}``.

Each run reads one JSON config, validated against a per-task schema before
anything else happens. Reports are canonical JSON (sorted keys, floats at
17 significant digits) and carry the config hash and toolkit version.

Exit codes: 0 success, 1 I/O or unexpected failure, 2 config/schema error,
3 training diverged, 4 property violation.
"""

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, datagen, plotting
from .apga import ApgaApprox, ApgaParams, ApgaSolver, apga_flops, apga_run_scaled, rate, tune_pga_steps
from .errors import ConfigError, NumericError, ParameterError, ParseError
from .gd_quadratic import contraction_suite, descent_suite, norm_bound_suite, prop2_suite
from .larpca import (DEFAULT_LAMBDA_S, DEFAULT_STEP, LarpcaApprox, LarpcaParams, LarpcaSolver, larpca_flops,
                     larpca_run, recovery_error, relative_error)
from .unfold import Dataset, HyperSchedule, TrainConfig, sgd_train

log = logging.getLogger("approxopt")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED, EXIT_VIOLATION = 0, 1, 2, 3, 4

_INT = {"type": "integer"}
_POS = {"type": "integer", "minimum": 1}
_NONNEG = {"type": "integer", "minimum": 0}
_INDEX_LIST = {"type": "array", "items": _NONNEG}

TRAIN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "learning_rate": {"type": "number", "minimum": 0},
        "epochs": _NONNEG,
        "batch_size": _POS,
        "seed": _INT,
        "optimizer": {"enum": ["sgd", "adam"]},
        "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "grad_mode": {"enum": ["finite-difference", "analytic-adjoint"]},
    },
}

DATA_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "train_count": _NONNEG,
        "test_count": _NONNEG,
        "train_manifest": {"type": "string"},
        "test_manifest": {"type": "string"},
    },
}

_COMMON = {"task": {"type": "string"}, "seed": _INT, "out": {"type": "string"}}

SCHEMAS = {
    "larpca": {
        "type": "object",
        "additionalProperties": False,
        "required": ["task", "dims", "k_total"],
        "properties": dict(
            _COMMON,
            dims={
                "type": "object",
                "additionalProperties": False,
                "required": ["n1", "n2", "r"],
                "properties": {
                    "n1": _POS, "n2": _POS, "r": _POS,
                    "alpha": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                },
            },
            k_total=_NONNEG,
            approx={
                "type": "object",
                "additionalProperties": False,
                "properties": {"n_skip": _NONNEG, "skip_l": _INDEX_LIST, "skip_r": _INDEX_LIST},
            },
            init={
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "step": {"type": "number", "exclusiveMinimum": 0},
                    "zeta0": {"type": "number", "minimum": 0},
                    "zeta0_scale": {"type": "number", "exclusiveMinimum": 0},
                    "decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                },
            },
            loss={"enum": ["supervised", "unsupervised"]},
            lambda_s={"type": "number", "minimum": 0},
            data=DATA_SCHEMA,
            train=TRAIN_SCHEMA,
        ),
    },
    "apga": {
        "type": "object",
        "additionalProperties": False,
        "required": ["task", "dims", "k_total"],
        "properties": dict(
            _COMMON,
            dims={
                "type": "object",
                "additionalProperties": False,
                "required": ["b", "n", "l", "m"],
                "properties": {"b": _POS, "n": _POS, "l": _POS, "m": _POS},
            },
            snr_db={"type": "number"},
            k_total=_NONNEG,
            approx={
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "preset": {"enum": ["none", "standard"]},
                    "k_a": _INDEX_LIST,
                    "k_d": {"type": "array", "items": _INDEX_LIST},
                },
            },
            init={
                "type": "object",
                "additionalProperties": False,
                "properties": {"mu_a": {"type": "number"}, "mu_d": {"type": "number"}},
            },
            baseline={
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "k_total": _POS,
                    "grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                },
            },
            data=DATA_SCHEMA,
            train=TRAIN_SCHEMA,
        ),
    },
    "gd-quadratic": {
        "type": "object",
        "additionalProperties": False,
        "required": ["task"],
        "properties": dict(
            _COMMON,
            suite={
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "descent_trials": _NONNEG,
                    "prop2_trials": _NONNEG,
                    "zero_delta_trials": _NONNEG,
                    "gamma_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                },
            },
        ),
    },
}

DEFAULTS = {
    "seed": 0,
    "out": "runs",
    "data": {"train_count": 200, "test_count": 25},
    "train": {"learning_rate": 0.01, "epochs": 10, "batch_size": 20, "optimizer": "sgd", "momentum": 0.0,
              "grad_mode": "analytic-adjoint"},
    "larpca": {"dims": {"alpha": 0.1}, "approx": {}, "init": {"step": DEFAULT_STEP, "zeta0_scale": 1.0, "decay": 0.5},
               "loss": "supervised", "lambda_s": DEFAULT_LAMBDA_S},
    "apga": {"snr_db": 0.0, "approx": {"preset": "none"}, "init": {"mu_a": 0.01, "mu_d": 0.01}},
    "gd-quadratic": {"suite": {"descent_trials": 1000, "prop2_trials": 500, "zero_delta_trials": 500,
                               "gamma_fraction": 0.9}},
}


# ---------------------------------------------------------------- serialization

def _fmt_float(x):
    if not math.isfinite(x):
        raise ParameterError(f"cannot serialize non-finite value {x}")
    return format(x, ".17g")


def canonical_json(obj):
    """JSON text with sorted keys and every float printed to 17 significant digits."""
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(json.dumps(k) + ":" + canonical_json(v) for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(canonical_json(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, np.ndarray):
        return canonical_json(obj.tolist())
    if isinstance(obj, str):
        return json.dumps(obj)
    raise ParameterError(f"cannot serialize {type(obj).__name__}")


def config_hash(cfg):
    """Digest of the experiment settings; the output directory is not part of the experiment."""
    settings = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(canonical_json(settings).encode()).hexdigest()


def write_report(path, body, cfg):
    doc = dict(body, config_hash=config_hash(cfg), version=__version__)
    Path(path).write_text(canonical_json(doc) + "\n")
    return doc


def _summary(values):
    v = np.asarray(values, dtype=float)
    return {"mean": float(v.mean()), "std": float(v.std()), "median": float(np.median(v)),
            "min": float(v.min()), "max": float(v.max()), "count": int(v.size)}


# ---------------------------------------------------------------- config

def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path, seed=None, out=None):
    """Read, validate and default-fill a config; ``seed``/``out`` override the file."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON (line {exc.lineno}): {exc.msg}") from None
    if not isinstance(raw, dict) or raw.get("task") not in SCHEMAS:
        raise ConfigError(f"config 'task' must be one of {sorted(SCHEMAS)}")
    try:
        jsonschema.validate(raw, SCHEMAS[raw["task"]])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    task = raw["task"]
    base = {"seed": DEFAULTS["seed"], "out": DEFAULTS["out"]}
    if task != "gd-quadratic":
        base.update(data=DEFAULTS["data"], train=DEFAULTS["train"])
    cfg = _merge(_merge(base, DEFAULTS[task]), raw)
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = str(out)
    if "train" in cfg:
        cfg["train"].setdefault("seed", cfg["seed"])
    _check_semantics(cfg)
    return cfg


def _check_semantics(cfg):
    """Cross-field checks the schema cannot express."""
    if cfg["task"] == "larpca":
        d = cfg["dims"]
        if d["r"] > min(d["n1"], d["n2"]):
            raise ConfigError(f"dims/r: rank {d['r']} exceeds min(n1, n2)")
        try:
            larpca_approx(cfg).validate(cfg["k_total"])
        except ParameterError as exc:
            raise ConfigError(f"approx: {exc}") from None
    elif cfg["task"] == "apga":
        d = cfg["dims"]
        if d["l"] > d["m"]:
            raise ConfigError("dims/l: more RF chains than antennas")
        try:
            apga_approx(cfg).validate(cfg["k_total"], d["b"])
        except ParameterError as exc:
            raise ConfigError(f"approx: {exc}") from None


def larpca_approx(cfg):
    a = cfg["approx"]
    if "n_skip" in a:
        if "skip_l" in a or "skip_r" in a:
            raise ConfigError("approx: give either n_skip or explicit skip_l/skip_r, not both")
        try:
            return LarpcaApprox.spread(cfg["k_total"], a["n_skip"])
        except ParameterError as exc:
            raise ConfigError(f"approx/n_skip: {exc}") from None
    return LarpcaApprox(k_l=a.get("skip_l", ()), k_r=a.get("skip_r", ()))


def apga_approx(cfg):
    a = cfg["approx"]
    explicit = "k_a" in a or "k_d" in a
    if explicit and "preset" in a and a["preset"] != "none":
        raise ConfigError("approx: give either a preset or explicit k_a/k_d, not both")
    if a.get("preset") == "standard":
        return ApgaApprox.standard(cfg["k_total"], cfg["dims"]["b"])
    return ApgaApprox(k_a=a.get("k_a", ()), k_d=tuple(a.get("k_d", ())))


def _train_config(cfg):
    t = cfg["train"]
    clamp = {"zeta", "zeta0"} if cfg["task"] == "larpca" else set()
    return TrainConfig(learning_rate=t["learning_rate"], epochs=t["epochs"], batch_size=t["batch_size"],
                       seed=t["seed"], grad_mode=t["grad_mode"], clamp_nonnegative=clamp,
                       momentum=t["momentum"], optimizer=t["optimizer"])


# ---------------------------------------------------------------- datasets

def _manifest_path(cfg, split):
    given = cfg["data"].get(f"{split}_manifest")
    return Path(given) if given else Path(cfg["out"]) / "data" / split / "manifest.json"


def _generate(cfg, split):
    d, data = cfg.get("dims", {}), cfg["data"]
    count = data[f"{split}_count"]
    start = 0 if split == "train" else data["train_count"]
    if cfg["task"] == "larpca":
        gcfg = datagen.RpcaConfig(seed=cfg["seed"], n1=d["n1"], n2=d["n2"], r=d["r"], alpha=d["alpha"], count=count)
        return gcfg, datagen.gen_rpca(gcfg, start), start
    gcfg = datagen.ChannelConfig(seed=cfg["seed"], b=d["b"], n=d["n"], m=d["m"], count=count, snr_db=cfg["snr_db"])
    return gcfg, datagen.gen_channels(gcfg, start), start


def _load_split(cfg, split):
    path = _manifest_path(cfg, split)
    if not path.exists():
        raise ConfigError(f"{split} manifest {path} not found; run `gen` first")
    _, samples = datagen.load_dataset(path)
    if not samples:
        raise ConfigError(f"{split} set is empty")
    return samples


def _check_larpca_data(cfg, samples):
    d = cfg["dims"]
    for s in samples:
        if s.x.shape != (d["n1"], d["n2"]):
            raise ConfigError(f"data matrix shape {s.x.shape} differs from dims ({d['n1']}, {d['n2']})")


def _check_channel_data(cfg, samples):
    d = cfg["dims"]
    for s in samples:
        if s.h.shape != (d["b"], d["n"], d["m"]):
            raise ConfigError(f"channel shape {s.h.shape} differs from dims ({d['b']}, {d['n']}, {d['m']})")


# ---------------------------------------------------------------- parameters

def larpca_init_schedule(cfg, samples):
    d, init = cfg["dims"], cfg["init"]
    zeta0 = init.get("zeta0")
    if zeta0 is None:
        zeta0 = init["zeta0_scale"] * float(np.median([np.median(np.abs(s.x)) for s in samples]))
    params = LarpcaParams.constant(d["n1"], d["n2"], d["r"], cfg["k_total"], init["step"], zeta0, init["decay"])
    return params.to_schedule()


def apga_init_schedule(cfg):
    d, init = cfg["dims"], cfg["init"]
    params = ApgaParams.constant(d["b"], d["n"], d["l"], d["m"], cfg["k_total"], init["mu_a"], init["mu_d"])
    return params.to_schedule()


def _expected_shapes(cfg):
    d = cfg["dims"]
    if cfg["task"] == "larpca":
        shapes = {"eta_l": (d["n1"], d["r"]), "eta_r": (d["n2"], d["r"]), "zeta": (1, 1)}
        first = {"zeta0": (1, 1)}
    else:
        shapes = {"mu_a": (d["m"], d["l"])}
        shapes.update({f"mu_d_{b}": (d["l"], d["n"]) for b in range(d["b"])})
        first = {}
    return shapes, first


def load_checkpoint(cfg, path):
    """Checkpoint parameters, checked against the config's dims and depth."""
    try:
        schedule = HyperSchedule.load(path)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint {path} not found") from None
    except (json.JSONDecodeError, KeyError, ParameterError) as exc:
        raise ConfigError(f"checkpoint {path} is malformed: {exc}") from None
    if schedule.k_total != cfg["k_total"]:
        raise ConfigError(f"checkpoint covers {schedule.k_total} iterations, config asks for {cfg['k_total']}")
    shapes, first = _expected_shapes(cfg)
    for k, bundle in enumerate(schedule):
        want = dict(shapes, **first) if k == 0 else shapes
        if set(bundle) != set(want):
            raise ConfigError(f"checkpoint bundle {k} holds {sorted(bundle)}, expected {sorted(want)}")
        for label, shape in want.items():
            if bundle[label].shape != shape:
                raise ConfigError(f"checkpoint {label}[{k}] has shape {bundle[label].shape}, expected {shape}")
    return schedule


# ---------------------------------------------------------------- commands

def cmd_gen(cfg, args):
    if cfg["task"] == "gd-quadratic":
        raise ConfigError("the gd-quadratic task draws its problems inside prop-check; nothing to generate")
    out = Path(cfg["out"])
    datasets = {}
    for split in ("train", "test"):
        gcfg, samples, start = _generate(cfg, split)
        target = out / "data" / split
        if cfg["task"] == "larpca":
            path = datagen.write_rpca_dataset(samples, gcfg, target, start)
        else:
            path = datagen.write_channel_dataset(samples, gcfg, target, start)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        datasets[split] = {"manifest": str(path.relative_to(out)), "count": len(samples), "sha256": digest}
    report = write_report(out / "gen_report.json", {"command": "gen", "task": cfg["task"], "datasets": datasets}, cfg)
    print(canonical_json(report))
    return EXIT_OK


def _solver_and_data(cfg, split):
    samples = _load_split(cfg, split)
    if cfg["task"] == "larpca":
        _check_larpca_data(cfg, samples)
        solver = LarpcaSolver(cfg["k_total"], larpca_approx(cfg), cfg["lambda_s"])
        if cfg["loss"] == "supervised":
            if any(s.v_star is None for s in samples):
                raise ConfigError("supervised loss needs ground-truth low-rank matrices in the dataset")
            data = Dataset([(s.x, s.v_star) for s in samples], "supervised")
        else:
            data = Dataset([s.x for s in samples], "unsupervised")
    else:
        _check_channel_data(cfg, samples)
        solver = ApgaSolver(cfg["k_total"], apga_approx(cfg))
        data = Dataset([s.scaled() for s in samples], "unsupervised")
    return solver, data, samples


def cmd_train(cfg, args):
    if cfg["task"] == "gd-quadratic":
        raise ConfigError("the gd-quadratic task has nothing to train")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    solver, data, samples = _solver_and_data(cfg, "train")
    if args.checkpoint:
        init = load_checkpoint(cfg, args.checkpoint)
    elif cfg["task"] == "larpca":
        init = larpca_init_schedule(cfg, samples)
    else:
        init = apga_init_schedule(cfg)
    result = sgd_train(solver, init, data, _train_config(cfg))
    ckpt = out / "checkpoint.json"
    result.params.save(ckpt)
    with open(out / "train_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "risk"])
        w.writerows((e, _fmt_float(r)) for e, r in result.history)
    plotting.training_curve(result.history, out / "train_curve.png",
                            "negated sum-rate" if cfg["task"] == "apga" else "training risk")
    body = {
        "command": "train",
        "task": cfg["task"],
        "checkpoint": ckpt.name,
        "resumed_from": str(args.checkpoint) if args.checkpoint else None,
        "initial_risk": result.history[0][1],
        "final_risk": result.final_risk,
        "epochs_completed": len(result.history) - 1,
        "diverged": result.diverged,
        "diagnostic": result.diagnostic,
    }
    report = write_report(out / "train_report.json", body, cfg)
    print(canonical_json(report))
    if result.diverged:
        log.error("training diverged: %s (last good parameters saved to %s)", result.diagnostic, ckpt)
        return EXIT_DIVERGED
    return EXIT_OK


def _write_trace(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (_fmt_float(float(v)) if isinstance(v, (float, np.floating, np.ndarray)) else v)
                        for v in row])


def _eval_larpca(cfg, params, samples, out):
    approx = larpca_approx(cfg)
    rel, rec, traces = [], [], []
    trace_dir = out / "traces"
    trace_dir.mkdir(exist_ok=True)
    for i, s in enumerate(samples):
        res = larpca_run(s.x, params, approx, cfg["k_total"], v_star=s.v_star, trace=True, rank=cfg["dims"]["r"])
        rec.append(float(recovery_error(res.v_hat, s.x)))
        rows = [(t["k"], t["objective"], t["recovery_error"], t["rel_err_vs_truth"]) for t in res.trace]
        _write_trace(trace_dir / f"trace_{i:04d}.csv", ["k", "objective", "recovery_error", "rel_err_vs_truth"], rows)
        if s.v_star is not None:
            rel.append(float(relative_error(res.v_hat, s.v_star)))
            traces.append([t["rel_err_vs_truth"] for t in res.trace])
        else:
            traces.append([t["recovery_error"] for t in res.trace])
    plotting.iteration_traces(traces, out / "eval_traces.png",
                              "relative error vs truth" if rel else "recovery error")
    d = cfg["dims"]
    metrics = {"recovery_error": _summary(rec)}
    if rel:
        metrics["relative_error"] = _summary(rel)
    return {
        "metrics": metrics,
        "flops": larpca_flops(d["n1"], d["n2"], d["r"], cfg["k_total"], approx).to_json(),
        "flops_no_skip": larpca_flops(d["n1"], d["n2"], d["r"], cfg["k_total"]).to_json(),
        "skip_l": sorted(approx.k_l),
        "skip_r": sorted(approx.k_r),
    }


def _eval_apga(cfg, params, samples, out):
    approx = apga_approx(cfg)
    d = cfg["dims"]
    hts = np.stack([s.scaled() for s in samples])
    res = apga_run_scaled(hts, params, approx, cfg["k_total"], trace=True)
    rates = np.asarray(rate(hts, res.precoder.w_a, res.precoder.w_d))
    traces = np.stack(res.rates, axis=-1)
    trace_dir = out / "traces"
    trace_dir.mkdir(exist_ok=True)
    for i, row in enumerate(traces):
        _write_trace(trace_dir / f"trace_{i:04d}.csv", ["k", "sum_rate"], list(enumerate(row)))
    plotting.iteration_traces(traces, out / "eval_traces.png", "sum-rate (nats)", log=False)
    body = {
        "metrics": {"sum_rate": _summary(rates)},
        "flops": apga_flops(d["b"], d["n"], d["l"], d["m"], cfg["k_total"], approx).to_json(),
        "flops_unapproximated": apga_flops(d["b"], d["n"], d["l"], d["m"], cfg["k_total"]).to_json(),
    }
    if "baseline" in cfg:
        body["baseline"] = _pga_baseline(cfg, hts)
    return body


def _pga_baseline(cfg, test_hts):
    """Classic PGA: scalar steps tuned on the training channels, then run on the test set."""
    d, base = cfg["dims"], cfg["baseline"]
    k_total = base.get("k_total", 50)
    grid = base.get("grid", [0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0])
    train = _load_split(cfg, "train")
    train_hts = np.stack([s.scaled() for s in train])
    (mu_a, mu_d), _ = tune_pga_steps(train_hts, d["l"], k_total, grid)
    p = apga_run_scaled(test_hts, ApgaParams.constant(d["b"], d["n"], d["l"], d["m"], k_total, mu_a, mu_d)).precoder
    return {
        "k_total": k_total,
        "mu_a": mu_a,
        "mu_d": mu_d,
        "sum_rate": _summary(np.asarray(rate(test_hts, p.w_a, p.w_d))),
        "flops": apga_flops(d["b"], d["n"], d["l"], d["m"], k_total).to_json(),
    }


def cmd_eval(cfg, args):
    if cfg["task"] == "gd-quadratic":
        raise ConfigError("the gd-quadratic task is evaluated by prop-check")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    schedule = load_checkpoint(cfg, args.checkpoint or out / "checkpoint.json")
    samples = _load_split(cfg, "test")
    if cfg["task"] == "larpca":
        _check_larpca_data(cfg, samples)
        params = LarpcaParams.from_schedule(schedule) if cfg["k_total"] else None
        if params is None:
            raise ConfigError("k_total = 0 leaves no stored threshold to evaluate")
        body = _eval_larpca(cfg, params, samples, out)
    else:
        _check_channel_data(cfg, samples)
        body = _eval_apga(cfg, ApgaParams.from_schedule(schedule), samples, out)
    body.update(command="eval", task=cfg["task"], k_total=cfg["k_total"], test_count=len(samples))
    report = write_report(out / "eval_report.json", body, cfg)
    print(canonical_json(report))
    return EXIT_OK


def cmd_flops(cfg, args):
    d = cfg.get("dims")
    if cfg["task"] == "larpca":
        report = larpca_flops(d["n1"], d["n2"], d["r"], cfg["k_total"], larpca_approx(cfg))
        full = larpca_flops(d["n1"], d["n2"], d["r"], cfg["k_total"])
    elif cfg["task"] == "apga":
        report = apga_flops(d["b"], d["n"], d["l"], d["m"], cfg["k_total"], apga_approx(cfg))
        full = apga_flops(d["b"], d["n"], d["l"], d["m"], cfg["k_total"])
    else:
        raise ConfigError("the gd-quadratic task has no flop model")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    body = {"command": "flops", "task": cfg["task"], "flops": report.to_json(), "flops_unapproximated": full.to_json()}
    print(canonical_json(write_report(out / "flops.json", body, cfg)))
    return EXIT_OK


def cmd_prop_check(cfg, args):
    if cfg["task"] != "gd-quadratic":
        raise ConfigError("prop-check runs the gd-quadratic task only")
    s = cfg["suite"]
    seed, gf = cfg["seed"], s["gamma_fraction"]
    suites = {
        "descent": descent_suite(s["descent_trials"], seed),
        "bound": prop2_suite(s["prop2_trials"], seed, gamma_fraction=gf),
        "bound_zero_delta": prop2_suite(s["zero_delta_trials"], seed, zero_delta=True, gamma_fraction=gf),
        "norm_bound": norm_bound_suite(s["prop2_trials"], seed, gamma_fraction=gf),
        "contraction": contraction_suite(s["prop2_trials"], seed, gamma_fraction=gf),
    }
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if suites["bound"].ratios:
        plotting.bound_ratios(suites["bound"].ratios, out / "bound_ratios.png")
    body = {
        "command": "prop-check",
        "suites": {name: r.to_json() for name, r in suites.items()},
        "trials": sum(r.trials for r in suites.values()),
        "violations": sum(r.violations for r in suites.values()),
        "max_ratio_to_bound": suites["bound"].max_ratio_to_bound,
    }
    report = write_report(out / "prop_check.json", body, cfg)
    print(canonical_json(report))
    return EXIT_VIOLATION if body["violations"] else EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "flops": cmd_flops, "prop-check": cmd_prop_check}


def build_parser():
    parser = argparse.ArgumentParser(prog="approxopt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--checkpoint", help="parameters to resume training from or to evaluate")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, ParameterError) else EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
