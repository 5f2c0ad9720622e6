"""Command-line driver: validated YAML run configurations, subcommands, artifacts and a Dirac-point cache.

Usage::

    honeyedge <subcommand> --config run.yaml [--out DIR] [--threads N] [--no-cache]

Exit status is 0 on success, 2 for configuration errors and 1 when a computation fails.
Every artifact except ``manifest.json`` (which records timings) is byte-identical for an
identical configuration and library version.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .bloch_solver import (
    DiracTolerances,
    compute_theta,
    detect_dirac_point,
    dirac_point_from_dict,
    dirac_point_to_dict,
    dispersion_slice,
    fmt,
    nofold_scan,
    synth_honeycomb_potential,
    write_dispersion_csv,
    write_json,
)
from .cylinder_solver import (
    assemble_cylinder,
    compare_to_effective,
    edge_spectrum,
    problem_summary,
    write_comparison_csv,
    write_comparison_json,
)
from .edge_states import build_wavepacket, write_wavepacket_grid
from .effective_dirac import (
    closed_form_spectrum,
    dirac_spec,
    make_wall,
    sample_block_spectrum,
    solve_dirac_1d,
    write_block_spectrum_csv,
)
from .lattice_frame import (
    K_TAGS,
    WrapIndex,
    build_edge_frame,
    build_lattice_basis,
    classify_rational_edge,
    enumerate_L_eps,
    wrap_data,
)

SUBCOMMANDS = ("bands", "dirac", "nofold", "wrap", "dirac1d", "blockspec", "wavepacket", "edge", "compare")
RATIONAL_ONLY = ("edge", "compare")
SOLVER_VERSION = f"honeyedge-{__version__}/dirac-1"


class ConfigError(ValueError):
    """The run configuration violates the schema."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

DEFAULTS: dict = {
    "a_field": {"kind": "trig", "amplitude": 1.0, "width": None},
    "cutoff": 6,
    "deltas": [0.1, 0.05],
    "mu": 0.0,
    "m_max": 50,
    "eps": 0.01,
    "wall": {"kind": "tanh", "scale": 1.0},
    "branches": [0],
    "bands": {"lam_min": -1.0, "lam_max": 1.0, "n_lam": 41, "n_bands": 8},
    "nofold": {"grid_density": 200, "eps": 0.3},
    "dirac1d": {"L": None, "N_grid": 1024, "method": "fourier"},
    "wavepacket": {"Kstar": "K", "m": 0, "j": 0, "y1": [-2.0, 2.0, 21], "y2": [-2.0, 2.0, 21]},
    "cylinder": {"cutoff": 3, "half_period": 5.0, "N_t": None, "window_fraction": 0.98},
    "tolerances": {"degeneracy_rel": 1e-8, "mass_tol": 1e-8, "disc_tol": 1e-6, "mu_tol": 1e-9},
    "output_dir": "out",
    "cache_dir": ".honeyedge-cache",
}
REQUIRED = ("potential", "edge")
POTENTIAL_KINDS = ("trig", "gaussian_wells")
WALL_KINDS = ("tanh", "erf", "algebraic")


@dataclass
class RunConfig:
    """Normalized run configuration.

    ``edge`` is ``{"kind": "rational", "a1", "b1", "text"}`` or ``{"kind": "decimal", "value", "text"}``.
    """

    potential: dict
    a_field: dict
    cutoff: int
    edge: dict
    deltas: list
    mu: float
    m_max: int
    eps: float
    wall: dict
    branches: list
    bands: dict
    nofold: dict
    dirac1d: dict
    wavepacket: dict
    cylinder: dict
    tolerances: dict
    output_dir: str
    cache_dir: str
    source: str | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        d = {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__ if k != "source"}
        return d

    @property
    def r(self):
        if self.edge["kind"] == "rational":
            return Fraction(self.edge["b1"], self.edge["a1"])
        return float(self.edge["value"])


def _num(x, what: str, positive: bool = False, integer: bool = False, allow_none: bool = False):
    if x is None and allow_none:
        return None
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{what}: expected a number, got {type(x).__name__}")
    if integer:
        if isinstance(x, float) and not x.is_integer():
            raise ConfigError(f"{what}: expected an integer, got {x!r}")
        x = int(x)
    else:
        x = float(x)
        if not math.isfinite(x):
            raise ConfigError(f"{what}: must be finite")
    if positive and not x > 0:
        raise ConfigError(f"{what}: must be positive, got {x!r}")
    return x


def _merge(user: dict, default: dict, what: str) -> dict:
    if not isinstance(user, dict):
        raise ConfigError(f"{what}: expected a mapping, got {type(user).__name__}")
    unknown = set(user) - set(default)
    if unknown:
        raise ConfigError(f"{what}: unknown keys {sorted(unknown)}")
    out = copy.deepcopy(default)
    out.update(user)
    return out


def _approximants(x: float, n: int = 4, max_den: int = 10000) -> list[str]:
    """The last ``n`` continued-fraction convergents of ``x`` with denominator at most ``max_den``."""
    f = Fraction(x)
    h0, h1, k0, k1 = 1, math.floor(f), 0, 1
    out = [f"{h1}/{k1}"]
    rest = f - math.floor(f)
    while rest:
        f = 1 / rest
        a = math.floor(f)
        rest = f - a
        h0, h1, k0, k1 = h1, a * h1 + h0, k1, a * k1 + k0
        if k1 > max_den:
            break
        out.append(f"{h1}/{k1}")
    return out[-n:]


def parse_edge(value) -> dict:
    """Normalize an edge slope: ``"b1/a1"``, an integer, ``{a1, b1}``, a decimal or ``"sqrt(n)"``."""
    if isinstance(value, dict):
        extra = set(value) - {"a1", "b1", "r"}
        if extra:
            raise ConfigError(f"edge: unknown keys {sorted(extra)}")
        if "r" in value:
            return parse_edge(value["r"])
        if "a1" not in value or "b1" not in value:
            raise ConfigError("edge: the pair form needs both a1 and b1")
        a1 = _num(value["a1"], "edge.a1", positive=True, integer=True)
        b1 = _num(value["b1"], "edge.b1", integer=True)
        if math.gcd(a1, b1) != 1:
            raise ConfigError(f"edge: (a1, b1) = ({a1}, {b1}) is not coprime; give the reduced pair")
        return {"kind": "rational", "a1": a1, "b1": b1, "text": f"{b1}/{a1}"}
    if isinstance(value, bool):
        raise ConfigError("edge.r: expected a number or a string")
    if isinstance(value, int):
        return {"kind": "rational", "a1": 1, "b1": int(value), "text": str(int(value))}
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ConfigError("edge.r: must be finite")
        return {"kind": "decimal", "value": value, "text": repr(value)}
    if isinstance(value, str):
        s = value.strip()
        if "/" in s:
            num, _, den = s.partition("/")
            try:
                b1, a1 = int(num), int(den)
            except ValueError as exc:
                raise ConfigError(f"edge.r: cannot parse {value!r} as b1/a1") from exc
            if a1 <= 0:
                raise ConfigError("edge.r: the denominator a1 must be positive")
            if math.gcd(a1, b1) != 1:
                raise ConfigError(f"edge.r: {value!r} is not in lowest terms; give the coprime pair")
            return {"kind": "rational", "a1": a1, "b1": b1, "text": f"{b1}/{a1}"}
        if s.startswith("sqrt(") and s.endswith(")"):
            try:
                arg = float(s[5:-1])
            except ValueError as exc:
                raise ConfigError(f"edge.r: cannot parse {value!r}") from exc
            if arg < 0:
                raise ConfigError("edge.r: sqrt of a negative number")
            return {"kind": "decimal", "value": math.sqrt(arg), "text": s}
        try:
            return {"kind": "rational", "a1": 1, "b1": int(s), "text": str(int(s))}
        except ValueError:
            pass
        try:
            x = float(s)
        except ValueError as exc:
            raise ConfigError(f"edge.r: cannot parse {value!r}") from exc
        if not math.isfinite(x):
            raise ConfigError("edge.r: must be finite")
        return {"kind": "decimal", "value": x, "text": s}
    raise ConfigError(f"edge.r: unsupported type {type(value).__name__}")


def _field_spec(d, what: str) -> dict:
    d = _merge(d, {"kind": "trig", "amplitude": None, "width": None}, what)
    if d["kind"] not in POTENTIAL_KINDS:
        raise ConfigError(f"{what}.kind: expected one of {POTENTIAL_KINDS}, got {d['kind']!r}")
    if d["amplitude"] is None:
        raise ConfigError(f"{what}.amplitude: missing")
    d["amplitude"] = _num(d["amplitude"], f"{what}.amplitude")
    if d["amplitude"] == 0:
        raise ConfigError(f"{what}.amplitude: must be nonzero")
    d["width"] = _num(d["width"], f"{what}.width", positive=True, allow_none=True)
    if d["kind"] == "gaussian_wells" and d["width"] is None:
        raise ConfigError(f"{what}.width: required for gaussian_wells")
    return d


def _check_rational(subcommand: str | None, edge: dict) -> None:
    if subcommand in RATIONAL_ONLY and edge["kind"] != "rational":
        x = edge["value"]
        raise ConfigError(
            f"`{subcommand}` needs an exact rational edge slope r = b1/a1, got the decimal {edge['text']}. "
            f"Irrational edges are reached through rational approximants; rerun with e.g. r: "
            f"{', '.join(repr(s) for s in _approximants(x))} (continued-fraction convergents of {x!r})."
        )


def normalize_config(raw: dict, subcommand: str | None = None, source: str | None = None) -> RunConfig:
    """Validate a parsed configuration mapping and inject defaults.

    Raises
    ------
    ConfigError
        On missing fields, unknown keys, type mismatches or a decimal edge slope
        for a subcommand that needs a rational one.
    """
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(raw) - set(DEFAULTS) - set(REQUIRED)
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    missing = [k for k in REQUIRED if k not in raw]
    if missing:
        raise ConfigError(f"missing required fields {missing}")
    if subcommand is not None and subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    c = copy.deepcopy(DEFAULTS)
    c.update({k: v for k, v in raw.items() if k not in DEFAULTS or not isinstance(DEFAULTS[k], dict)})
    for k, dv in DEFAULTS.items():
        if isinstance(dv, dict) and k in raw:
            c[k] = raw[k] if k == "wall" and isinstance(raw[k], str) else _merge(raw[k], dv, k)
    c["potential"] = _field_spec(raw["potential"], "potential")
    c["a_field"] = _field_spec(c["a_field"], "a_field")
    c["cutoff"] = _num(c["cutoff"], "cutoff", positive=True, integer=True)
    c["edge"] = parse_edge(raw["edge"])
    if not isinstance(c["deltas"], list) or not c["deltas"]:
        raise ConfigError("deltas: expected a non-empty list")
    c["deltas"] = [_num(d, "deltas[]", positive=True) for d in c["deltas"]]
    c["mu"] = _num(c["mu"], "mu")
    c["m_max"] = _num(c["m_max"], "m_max", positive=True, integer=True)
    c["eps"] = _num(c["eps"], "eps", positive=True)
    if isinstance(c["wall"], str):
        c["wall"] = {"kind": c["wall"], "scale": 1.0}
    if c["wall"]["kind"] not in WALL_KINDS:
        raise ConfigError(f"wall.kind: expected one of {WALL_KINDS}, got {c['wall']['kind']!r}")
    c["wall"]["scale"] = _num(c["wall"]["scale"], "wall.scale", positive=True)
    if not isinstance(c["branches"], list) or not c["branches"]:
        raise ConfigError("branches: expected a non-empty list")
    c["branches"] = [_num(j, "branches[]", integer=True) for j in c["branches"]]
    b = c["bands"]
    b["lam_min"], b["lam_max"] = _num(b["lam_min"], "bands.lam_min"), _num(b["lam_max"], "bands.lam_max")
    b["n_lam"] = _num(b["n_lam"], "bands.n_lam", positive=True, integer=True)
    b["n_bands"] = _num(b["n_bands"], "bands.n_bands", positive=True, integer=True)
    if not b["lam_min"] < b["lam_max"]:
        raise ConfigError("bands: lam_min must be below lam_max")
    n = c["nofold"]
    n["grid_density"] = _num(n["grid_density"], "nofold.grid_density", positive=True, integer=True)
    n["eps"] = _num(n["eps"], "nofold.eps", positive=True)
    d1 = c["dirac1d"]
    d1["L"] = _num(d1["L"], "dirac1d.L", positive=True, allow_none=True)
    d1["N_grid"] = _num(d1["N_grid"], "dirac1d.N_grid", positive=True, integer=True)
    if d1["N_grid"] % 2:
        raise ConfigError("dirac1d.N_grid: must be even")
    if d1["method"] not in ("fourier", "fd4"):
        raise ConfigError("dirac1d.method: expected 'fourier' or 'fd4'")
    wp = c["wavepacket"]
    if wp["Kstar"] not in K_TAGS:
        raise ConfigError(f"wavepacket.Kstar: expected one of {K_TAGS}")
    wp["m"] = _num(wp["m"], "wavepacket.m", integer=True)
    wp["j"] = _num(wp["j"], "wavepacket.j", integer=True)
    for ax in ("y1", "y2"):
        v = wp[ax]
        if not isinstance(v, list) or len(v) != 3:
            raise ConfigError(f"wavepacket.{ax}: expected [start, stop, count]")
        wp[ax] = [_num(v[0], f"wavepacket.{ax}[0]"), _num(v[1], f"wavepacket.{ax}[1]"),
                  _num(v[2], f"wavepacket.{ax}[2]", positive=True, integer=True)]
    cy = c["cylinder"]
    cy["cutoff"] = _num(cy["cutoff"], "cylinder.cutoff", positive=True, integer=True)
    cy["half_period"] = _num(cy["half_period"], "cylinder.half_period", positive=True)
    cy["N_t"] = _num(cy["N_t"], "cylinder.N_t", positive=True, integer=True, allow_none=True)
    cy["window_fraction"] = _num(cy["window_fraction"], "cylinder.window_fraction", positive=True)
    if cy["window_fraction"] >= 1:
        raise ConfigError("cylinder.window_fraction: must lie in (0, 1)")
    for k in c["tolerances"]:
        c["tolerances"][k] = _num(c["tolerances"][k], f"tolerances.{k}", positive=True)
    for k in ("output_dir", "cache_dir"):
        if not isinstance(c[k], str) or not c[k]:
            raise ConfigError(f"{k}: expected a non-empty string")
    _check_rational(subcommand, c["edge"])
    return RunConfig(**c, source=source)


def validate_config(path, subcommand: str | None = None) -> RunConfig:
    """Read and normalize a YAML configuration file.

    Raises
    ------
    ConfigError
        If the file is missing, unparsable or invalid.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"configuration file {str(p)!r} not found")
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {str(p)!r}: {exc}") from exc
    return normalize_config(raw, subcommand, str(p))


class _Dumper(yaml.SafeDumper):
    pass


def _float_representer(dumper, x: float):
    if math.isfinite(x):
        s = format(x, ".17g")
        if not any(ch in s for ch in ".en"):
            s += ".0"
        return dumper.represent_scalar("tag:yaml.org,2002:float", s)
    return yaml.SafeDumper.represent_float(dumper, x)


_Dumper.add_representer(float, _float_representer)


def dump_config(cfg: RunConfig) -> str:
    """YAML text that :func:`validate_config` reads back to the same configuration."""
    d = cfg.to_dict()
    e = d["edge"]
    d["edge"] = {"r": e["text"]} if e["kind"] == "rational" else {"r": e["value"]}
    return yaml.dump(d, Dumper=_Dumper, sort_keys=True, default_flow_style=False)


# ---------------------------------------------------------------------------
# Dirac-point cache
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiracCacheEntry:
    """Serialized Dirac point keyed by ``(potential, cutoff, Kstar, tolerance)``."""

    key: str
    version: str
    data: dict


def dirac_cache_key(potential: dict, cutoff: int, Kstar: str, degeneracy_rel: float) -> str:
    blob = json.dumps({"potential": potential, "cutoff": int(cutoff), "Kstar": Kstar,
                       "degeneracy_rel": degeneracy_rel}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class DiracCache:
    """Project-local cache directory of :class:`DiracCacheEntry` files."""

    def __init__(self, root, enabled: bool = True):
        self.root = Path(root)
        self.enabled = enabled
        self.hits = 0
        self.misses = 0

    def load(self, key: str) -> DiracCacheEntry | None:
        if not self.enabled:
            return None
        p = self.root / f"{key}.json"
        if not p.is_file():
            return None
        try:
            d = json.loads(p.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return None
        if d.get("key") != key or d.get("version") != SOLVER_VERSION:
            return None
        return DiracCacheEntry(d["key"], d["version"], d["data"])

    def store(self, entry: DiracCacheEntry) -> None:
        if not self.enabled:
            return
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = self.root / f"{entry.key}.json.tmp{os.getpid()}"
        tmp.write_text(json.dumps({"key": entry.key, "version": entry.version, "data": entry.data},
                                  sort_keys=True), encoding="utf-8")
        os.replace(tmp, self.root / f"{entry.key}.json")


# ---------------------------------------------------------------------------
# run context
# ---------------------------------------------------------------------------


class _Context:
    def __init__(self, cfg: RunConfig, out: Path, threads: int, cache: DiracCache):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.cache = cache
        self.lattice = build_lattice_basis()
        pv, af = cfg.potential, cfg.a_field
        self.V = synth_honeycomb_potential(pv["kind"], pv["amplitude"], pv["width"])
        self.a = synth_honeycomb_potential(af["kind"], af["amplitude"], af["width"])
        self.frame = build_edge_frame(self.lattice, cfg.r)
        self.wall = make_wall(cfg.wall["kind"], cfg.wall["scale"])
        self.artifacts: list[Path] = []
        self.timings: dict[str, float] = {}
        self.summary: dict = {}

    def path(self, name: str) -> Path:
        p = self.out / name
        self.artifacts.append(p)
        return p

    def timed(self, label: str, fn, *args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        self.timings[label] = self.timings.get(label, 0.0) + time.perf_counter() - t0
        return res

    def dirac_point(self, Kstar: str, cutoff: int | None = None):
        cutoff = self.cfg.cutoff if cutoff is None else cutoff
        tol = self.cfg.tolerances["degeneracy_rel"]
        key = dirac_cache_key(self.cfg.potential, cutoff, Kstar, tol)
        hit = self.cache.load(key)
        if hit is None:
            self.cache.misses += 1
            dp = self.timed("dirac_point", detect_dirac_point, self.V, Kstar, cutoff,
                            DiracTolerances(degeneracy_rel=tol), True)
            data = json.loads(json.dumps(dirac_point_to_dict(dp)))
            self.cache.store(DiracCacheEntry(key, SOLVER_VERSION, data))
        else:
            self.cache.hits += 1
            data = hit.data
        return dirac_point_from_dict(data, self.V)

    def dirac_points(self, cutoff: int | None = None) -> dict:
        return {t: self.dirac_point(t, cutoff) for t in K_TAGS}

    def theta(self, dp) -> float:
        return float(compute_theta(self.a, dp)[0])


def _csv_writer(fh):
    return csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_bands(ctx: _Context) -> None:
    b = ctx.cfg.bands
    lam = np.linspace(b["lam_min"], b["lam_max"], b["n_lam"])
    tab = ctx.timed("dispersion", dispersion_slice, ctx.V, ctx.frame, lam, b["n_bands"], ctx.cfg.cutoff,
                    ctx.threads)
    write_dispersion_csv(tab, ctx.path("bands.csv"))
    ctx.summary["n_lam"] = len(lam)


def _cmd_dirac(ctx: _Context) -> None:
    dps = ctx.dirac_points()
    out = {t: dirac_point_to_dict(dp) for t, dp in dps.items()}
    out["theta"] = {t: ctx.theta(dp) for t, dp in dps.items()}
    write_json(out, ctx.path("dirac.json"))
    ctx.summary.update({"E_D": dps["K"].E_D, "upsilon_K": dps["K"].upsilon, "theta_K": out["theta"]["K"]})


def _cmd_nofold(ctx: _Context) -> None:
    dp = ctx.dirac_point("K")
    n = ctx.cfg.nofold
    rep = ctx.timed("nofold", nofold_scan, ctx.V, dp, n["grid_density"], n["eps"], workers=ctx.threads)
    d = {k: getattr(rep, k) for k in rep.__dataclass_fields__}
    write_json(d, ctx.path("nofold.json"))
    ctx.summary.update({"passed": bool(rep.passed), "C0": rep.C0, "C1": rep.C1})


def _cmd_wrap(ctx: _Context) -> None:
    L = ctx.timed("enumerate", enumerate_L_eps, ctx.frame, ctx.cfg.eps, ctx.cfg.m_max)
    with open(ctx.path("wrap.csv"), "w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(["Kstar", "m", "lambda_I", "gamma_I", "ell1", "ell2"])
        for wd in L:
            w.writerow([wd.index.Kstar, wd.index.m, fmt(wd.lambda_I), fmt(wd.gamma_I), wd.ell_coords[0],
                        wd.ell_coords[1]])
    ctx.summary["count"] = len(L)


def _dirac1d(ctx: _Context, dp, theta: float, mu_hat: float):
    d1 = ctx.cfg.dirac1d
    spec = dirac_spec(dp, ctx.frame, theta, mu_hat, ctx.wall)
    return ctx.timed("dirac1d", solve_dirac_1d, spec, d1["L"], d1["N_grid"], d1["method"],
                     mass_tol=ctx.cfg.tolerances["mass_tol"], check_resolution=False)


def _cmd_dirac1d(ctx: _Context) -> None:
    dps = ctx.dirac_points()
    theta = ctx.theta(dps["K"])
    n2 = float(np.linalg.norm(ctx.frame.khat2))
    rows, meta = [], {}
    for t in K_TAGS:
        base = _dirac1d(ctx, dps[t], theta, 0.0)
        sp = _dirac1d(ctx, dps[t], theta, ctx.cfg.mu) if ctx.cfg.mu != 0 else base
        cf = closed_form_spectrum(base.eigenvalues, ctx.cfg.mu, dps[t].upsilon, theta, n2)
        for j in range(-sp.N, sp.N + 1):
            rows.append([t, j, fmt(sp.branch(j)), fmt(cf.branch(j)) if abs(j) <= cf.N else ""])
        meta[t] = {"theta_gap": sp.theta_gap, "N": sp.N, "mu_hat": ctx.cfg.mu}
    with open(ctx.path("dirac1d.csv"), "w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(["Kstar", "j", "z", "closed_form_z"])
        w.writerows(rows)
    write_json({"theta": theta, "blocks": meta}, ctx.path("dirac1d.json"))
    ctx.summary["in_gap_count"] = {t: 2 * m["N"] + 1 for t, m in meta.items()}


def _cmd_blockspec(ctx: _Context) -> None:
    dps = ctx.dirac_points()
    theta = ctx.theta(dps["K"])
    base = _dirac1d(ctx, dps["K"], theta, 0.0)
    for i, delta in enumerate(ctx.cfg.deltas):
        s = ctx.timed("blockspec", sample_block_spectrum, ctx.cfg.mu, delta, ctx.cfg.m_max, dps, ctx.frame,
                      base.eigenvalues, theta)
        write_block_spectrum_csv(s, ctx.path(f"blockspec_{i}.csv"))
        ctx.summary[f"distinct_in_gap_{i}"] = int(len(s.distinct_in_gap()))


def _cmd_wavepacket(ctx: _Context) -> None:
    wc = ctx.cfg.wavepacket
    idx = WrapIndex(wc["Kstar"], wc["m"])
    dp = ctx.dirac_point(idx.Kstar)
    theta = ctx.theta(ctx.dirac_point("K"))
    delta = ctx.cfg.deltas[0]
    wd = wrap_data(ctx.frame, idx)
    sp = _dirac1d(ctx, dp, theta, ctx.cfg.mu + wd.gamma_I / delta)
    wp = build_wavepacket(idx, wc["j"], ctx.cfg.mu, delta, dp, ctx.frame, sp, ctx.cfg.tolerances["mu_tol"])
    y1 = np.linspace(*wc["y1"][:2], wc["y1"][2])
    y2 = np.linspace(*wc["y2"][:2], wc["y2"][2])
    ctx.timed("sample", write_wavepacket_grid, wp, ctx.path("wavepacket.json"), ctx.path("wavepacket.csv"), y1, y2)
    ctx.summary.update({"energy": wp.energy, "k_parallel": wp.k_parallel})


def _cmd_edge(ctx: _Context) -> None:
    cy = ctx.cfg.cylinder
    a1 = ctx.cfg.edge["a1"]
    dp = ctx.dirac_point("K", cy["cutoff"])
    theta = ctx.theta(dp)
    delta = ctx.cfg.deltas[0]
    N_t = cy["N_t"] or int(round(2 * cy["half_period"] * a1 / delta))
    k_par = float(ctx.lattice.K @ ctx.frame.vhat1) + delta * ctx.cfg.mu
    prob = ctx.timed("assemble", assemble_cylinder, ctx.frame, k_par, delta, 0.0, N_t, cy["cutoff"], ctx.V, ctx.a,
                     ctx.wall)
    half = cy["window_fraction"] * delta * abs(theta)
    es = ctx.timed("eigensolve", edge_spectrum, prob, (dp.E_D - half, dp.E_D + half))
    with open(ctx.path("edge.csv"), "w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(["energy", "participation", "localized", "center_zeta", "side", "valley_K", "localization_length"])
        for s in es.states:
            w.writerow([fmt(s.energy), fmt(s.participation), int(s.localized), fmt(s.center_zeta), s.side,
                        fmt(s.valley_K), fmt(s.localization_length)])
    info = problem_summary(prob)
    info.update({"E_D": dp.E_D, "theta": theta, "window": [dp.E_D - half, dp.E_D + half],
                 "edge_type": type(classify_rational_edge(a1, ctx.cfg.edge["b1"])).__name__})
    write_json(info, ctx.path("edge.json"))
    ctx.summary.update({"n_states": len(es.states), "n_localized": len(es.localized())})


def _cmd_compare(ctx: _Context) -> None:
    cy = ctx.cfg.cylinder
    dps = ctx.dirac_points(cy["cutoff"])
    theta = ctx.theta(dps["K"])
    tab = ctx.timed("compare", compare_to_effective, ctx.frame, ctx.cfg.deltas, ctx.cfg.mu, dps, ctx.a,
                    cy["cutoff"], ctx.wall, cy["half_period"], ctx.cfg.branches,
                    ctx.cfg.tolerances["disc_tol"], theta, ctx.cfg.dirac1d["N_grid"])
    write_comparison_csv(tab, ctx.path("compare.csv"))
    write_comparison_json(tab, ctx.path("compare.json"))
    ctx.summary.update({"rows": len(tab.rows), "branches_seen": sorted(tab.branches_seen),
                        "fitted_order": {f"{k[0]}:{k[1]}": v for k, v in sorted(tab.fitted_order.items())}})


COMMANDS = {
    "bands": _cmd_bands,
    "dirac": _cmd_dirac,
    "nofold": _cmd_nofold,
    "wrap": _cmd_wrap,
    "dirac1d": _cmd_dirac1d,
    "blockspec": _cmd_blockspec,
    "wavepacket": _cmd_wavepacket,
    "edge": _cmd_edge,
    "compare": _cmd_compare,
}


def _sha256(p: Path) -> str:
    return hashlib.sha256(p.read_bytes()).hexdigest()


def run(subcommand: str, cfg: RunConfig, out: str | os.PathLike | None = None, threads: int = 1,
        use_cache: bool = True) -> Path:
    """Run one subcommand and write its artifacts plus ``manifest.json``.

    Parameters
    ----------
    subcommand : str
        One of :data:`SUBCOMMANDS`.
    cfg : RunConfig
        Normalized configuration.
    out : path, optional
        Output directory; defaults to ``cfg.output_dir``.
    threads : int
        Worker threads for band scans.
    use_cache : bool
        Read and write the Dirac-point cache.

    Returns
    -------
    Path
        The manifest path.
    """
    if subcommand not in COMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    _check_rational(subcommand, cfg.edge)
    if threads < 1:
        raise ConfigError("--threads must be at least 1")
    out_dir = Path(out if out is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_root = Path(cfg.cache_dir)
    if not cache_root.is_absolute() and cfg.source is not None:
        cache_root = Path(cfg.source).resolve().parent / cache_root
    cache = DiracCache(cache_root, use_cache)
    ctx = _Context(cfg, out_dir, threads, cache)
    t0 = time.perf_counter()
    COMMANDS[subcommand](ctx)
    ctx.timings["total"] = time.perf_counter() - t0
    manifest = {
        "subcommand": subcommand,
        "config": cfg.to_dict(),
        "versions": {"honeyedge": __version__, "solver": SOLVER_VERSION, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "artifacts": [{"path": p.name, "sha256": _sha256(p)} for p in ctx.artifacts],
        "summary": ctx.summary,
        "cache": {"enabled": use_cache, "hits": cache.hits, "misses": cache.misses},
        "timings_s": ctx.timings,
    }
    mp = out_dir / "manifest.json"
    write_json(manifest, mp)
    return mp


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="honeyedge", description="Honeycomb edge-state computations.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    p.add_argument("--no-cache", action="store_true", help="bypass the Dirac-point cache")
    return p


def main(argv: list[str] | None = None) -> int:
    """Entry point; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        cfg = validate_config(args.config, args.subcommand)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        mp = run(args.subcommand, cfg, args.out, args.threads, not args.no_cache)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # module failures carry their own diagnostics
        print(f"error: {type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(str(mp))
    return 0
