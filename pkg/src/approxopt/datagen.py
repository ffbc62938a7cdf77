"""Seeded synthetic data and plain-text matrix files.

Every sample is drawn from its own PCG64 stream seeded with
``SeedSequence([seed, stream, index])``, so sample ``i`` does not depend on
how many others were generated or in which order. ``stream`` separates the
channel and RPCA generators.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, ParseError
from .apga import ChannelSet
from .larpca import RpcaInstance

CHANNEL_STREAM = 1
RPCA_STREAM = 2
CHANNEL_HEADER = "band,row,col,re,im"


def sample_rng(seed, stream, index):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stream, int(index)])))


def snr_to_sigma2(snr_db, n_users):
    """Noise variance for SNR = 1 / (N sigma^2)."""
    return 1.0 / (n_users * 10 ** (snr_db / 10))


@dataclass(frozen=True)
class ChannelConfig:
    seed: int
    b: int
    n: int
    m: int
    count: int
    snr_db: float = 0.0
    sigma2: float = None

    def __post_init__(self):
        if min(self.b, self.n, self.m) < 1 or self.count < 0:
            raise ParameterError("channel dimensions must be positive")
        if self.sigma2 is not None and not self.sigma2 > 0:
            raise ParameterError("sigma2 must be positive")

    def noise_variance(self):
        return self.sigma2 if self.sigma2 is not None else snr_to_sigma2(self.snr_db, self.n)


@dataclass(frozen=True)
class RpcaConfig:
    seed: int
    n1: int
    n2: int
    r: int
    alpha: float
    count: int

    def __post_init__(self):
        if min(self.n1, self.n2, self.r) < 1 or self.count < 0:
            raise ParameterError("rpca dimensions must be positive")
        if self.r > min(self.n1, self.n2):
            raise ParameterError(f"rank {self.r} exceeds matrix size")
        if not 0 <= self.alpha < 1:
            raise ParameterError("alpha must lie in [0, 1)")


def gen_channel(cfg, index):
    rng = sample_rng(cfg.seed, CHANNEL_STREAM, index)
    shape = (cfg.b, cfg.n, cfg.m)
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return ChannelSet(h=h, sigma2=cfg.noise_variance())


def gen_channels(cfg, start=0):
    """``cfg.count`` Rayleigh channel sets with CN(0, 1) entries, sample indices from ``start``."""
    return [gen_channel(cfg, i) for i in range(start, start + cfg.count)]


def gen_rpca_instance(cfg, index):
    rng = sample_rng(cfg.seed, RPCA_STREAM, index)
    a = rng.standard_normal((cfg.n1, cfg.r)) * cfg.n1**-0.25
    b = rng.standard_normal((cfg.n2, cfg.r)) * cfg.n2**-0.25
    v_star = a @ b.T
    y_star = np.zeros_like(v_star)
    n_outliers = int(round(cfg.alpha * cfg.n1 * cfg.n2))
    support = rng.choice(cfg.n1 * cfg.n2, size=n_outliers, replace=False)
    rms = np.sqrt(np.mean(v_star**2))
    y_star.flat[support] = rng.standard_normal(n_outliers) * rms
    return RpcaInstance(x=v_star + y_star, r=cfg.r, v_star=v_star, y_star=y_star, alpha=cfg.alpha)


def gen_rpca(cfg, start=0):
    """``cfg.count`` instances X = V* + Y* with rank-r V* and alpha-sparse Y*, sample indices from ``start``."""
    return [gen_rpca_instance(cfg, i) for i in range(start, start + cfg.count)]


def save_matrix_csv(m, path):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ParameterError("only 2-D matrices can be written")
    np.savetxt(path, m, delimiter=",", fmt="%.17g")


def _parse_float(token, line):
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"not a number: {token!r}", line=line) from None


def load_matrix_csv(path):
    rows = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            row = [_parse_float(t, line_no) for t in line.split(",")]
            if rows and len(row) != len(rows[0]):
                raise ParseError(f"expected {len(rows[0])} columns, found {len(row)}", line=line_no)
            rows.append(row)
    if not rows:
        raise ParseError(f"{path} holds no matrix", line=1)
    return np.array(rows)


def save_channel_csv(ch, path):
    with open(path, "w") as fh:
        fh.write(CHANNEL_HEADER + "\n")
        for (b, i, j), v in np.ndenumerate(ch.h):
            fh.write(f"{b},{i},{j},{v.real:.17g},{v.imag:.17g}\n")


def load_channel_csv(path, sigma2):
    """Read a channel file; every (band, row, col) must appear exactly once."""
    entries = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CHANNEL_HEADER:
            raise ParseError(f"expected header {CHANNEL_HEADER!r}, got {header!r}", line=1)
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            tokens = line.strip().split(",")
            if len(tokens) != 5:
                raise ParseError(f"expected 5 fields, found {len(tokens)}", line=line_no)
            try:
                key = tuple(int(t) for t in tokens[:3])
            except ValueError:
                raise ParseError("band/row/col must be integers", line=line_no) from None
            if min(key) < 0:
                raise ParseError("negative index", line=line_no)
            if key in entries:
                raise ParseError(f"duplicate entry {key}", line=line_no)
            entries[key] = complex(_parse_float(tokens[3], line_no), _parse_float(tokens[4], line_no))
    if not entries:
        raise ParseError(f"{path} holds no channel entries", line=1)
    shape = tuple(max(k[d] for k in entries) + 1 for d in range(3))
    if len(entries) != shape[0] * shape[1] * shape[2]:
        raise ParseError(f"incomplete channel: {len(entries)} of {np.prod(shape)} entries", line=line_no)
    h = np.zeros(shape, dtype=complex)
    for key, v in entries.items():
        h[key] = v
    return ChannelSet(h=h, sigma2=sigma2)


def write_rpca_dataset(instances, cfg, out_dir, start=0):
    """Write one CSV per matrix and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = []
    for i, inst in enumerate(instances):
        entry = {"r": inst.r, "alpha": inst.alpha}
        for name in ("x", "v_star", "y_star"):
            m = getattr(inst, name)
            if m is not None:
                fname = f"{name}_{i:05d}.csv"
                save_matrix_csv(m, out_dir / fname)
                entry[name] = fname
        samples.append(entry)
    return _write_manifest(out_dir, "rpca", dict(asdict(cfg), start=start), samples)


def write_channel_dataset(channels, cfg, out_dir, start=0):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = []
    for i, ch in enumerate(channels):
        fname = f"h_{i:05d}.csv"
        save_channel_csv(ch, out_dir / fname)
        samples.append({"h": fname, "sigma2": ch.sigma2})
    return _write_manifest(out_dir, "channels", dict(asdict(cfg), start=start), samples)


def _write_manifest(out_dir, kind, config, samples):
    path = out_dir / "manifest.json"
    doc = {"kind": kind, "config": config, "samples": samples}
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path


def read_manifest(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest is not valid JSON: {exc.msg}", line=exc.lineno) from None
    if doc.get("kind") not in ("rpca", "channels") or not isinstance(doc.get("samples"), list):
        raise ParseError("manifest lacks a valid kind or sample list", line=1)
    return doc


def load_dataset(path):
    """Instances listed in a manifest: RpcaInstance or ChannelSet objects."""
    path = Path(path)
    doc = read_manifest(path)
    base = path.parent
    out = []
    for s in doc["samples"]:
        if doc["kind"] == "rpca":
            mats = {k: load_matrix_csv(base / s[k]) if s.get(k) else None for k in ("x", "v_star", "y_star")}
            out.append(RpcaInstance(r=s["r"], alpha=s["alpha"], **mats))
        else:
            out.append(load_channel_csv(base / s["h"], s["sigma2"]))
    return doc, out
