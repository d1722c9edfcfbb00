"""Command-line harness: configuration, cached profiles and reproducible artifacts.

Usage: critbubble COMMAND --config FILE [--out DIR]

Every CSV starts with '# config_hash=' and '# seed=' lines before its
header; every JSON carries the same fields.  A timestamp appears only in the
"metadata" block of summary.json.  Exit codes: 0 success, 2 configuration
error, 3 numerical failure, 4 trend (acceptance) failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import math
import pickle
import sys
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .core import CriticalPair, PolygonConfig, make_critical_pair
from .radial import GridOptions, GroundState, ode_residual, solve_ground_state, solve_w, tail_constants, \
    write_profile_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_TREND = 0, 2, 3, 4
COMMANDS = ("ground-state", "constants", "phi-check", "expansion", "error-norm", "landscape", "scaling-check")


class ConfigError(ValueError):
    pass


class TrendFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """All run parameters; defaults give the (N=6, p=2) desk-scale setup."""

    N: int = 6
    p: float = 2.0
    r_max: float = 1e4
    n_nodes: int = 4096
    n_uniform: int = 256
    r_match: float | None = None
    bracket_tol: float = 1e-12
    k_list: tuple = (8, 16, 32)
    mu0: float = 1.0
    r: float = 1.0
    lam: float = 1.0
    budget: int = 10**6
    seed: int = 0
    workers: int = 1
    chunk: int = 2**15
    resolution: int = 64
    scaling_t: float = 2.0
    scaling_points: int = 100
    out_dir: str = "out"
    cache_dir: str = ""

    SECTIONS = {
        "pair": ("N", "p"),
        "grid": ("r_max", "n_nodes", "n_uniform", "r_match", "bracket_tol"),
        "polygon": ("k_list", "mu0", "r", "lam"),
        "mc": ("budget", "seed", "workers", "chunk"),
        "checks": ("resolution", "scaling_t", "scaling_points"),
        "output": ("out_dir", "cache_dir"),
    }

    def pair(self) -> CriticalPair:
        return make_critical_pair(self.N, self.p)

    def grid_options(self) -> GridOptions:
        return GridOptions(r_max=self.r_max, n_nodes=self.n_nodes, n_uniform=self.n_uniform,
                           r_match=self.r_match, bracket_tol=self.bracket_tol)

    def polygon(self, k: int) -> PolygonConfig:
        return PolygonConfig(self.pair(), k, self.mu0, self.r, self.lam)

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for sec, keys in self.SECTIONS.items():
            cp[sec] = {key: _fmt(getattr(self, key)) for key in keys}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigError(str(e)) from e
        known = {sec: set(keys) for sec, keys in cls.SECTIONS.items()}
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for sec in cp.sections():
            if sec not in known:
                raise ConfigError(f"unknown section [{sec}]")
            for key, raw in cp[sec].items():
                if key not in known[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                kw[key] = _parse(key, raw, types[key])
        try:
            cfg = cls(**kw)
            cfg.validate()
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
        return cfg

    def validate(self) -> None:
        self.pair()
        self.grid_options().make_grid()
        ks = list(self.k_list)
        if not ks or any(k < 1 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
            raise ConfigError("k_list must be increasing positive integers")
        if min(self.mu0, self.r, self.lam) <= 0:
            raise ConfigError("mu0, r and lam must be positive")
        if self.budget < 2 or self.workers < 1 or self.chunk < 2:
            raise ConfigError("budget, workers and chunk must be positive")
        if self.resolution < 64:
            raise ConfigError("resolution must be at least 64")

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def _parse(key, raw, typ):
    raw = raw.strip()
    try:
        if key == "k_list":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if key == "r_match":
            return None if raw.lower() in ("", "none") else float(raw)
        if key in ("N", "n_nodes", "n_uniform", "seed", "workers", "chunk", "resolution", "scaling_points"):
            return int(raw)
        if key == "budget":
            return int(float(raw))
        if key in ("out_dir", "cache_dir"):
            return raw
        return float(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r}") from e


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    return RunConfig.from_text(text)


# ---------------------------------------------------------------------------
# artifacts


class Run:
    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.out.mkdir(parents=True, exist_ok=True)
        self.meta = {"config_hash": cfg.hash(), "seed": cfg.seed}
        self.artifacts: list = []

    def csv(self, name, writer, *args):
        """Write a CSV through writer(obj, path) and prepend the metadata comment lines."""
        path = self.out / name
        writer(*args, path)
        body = path.read_text()
        head = "".join(f"# {k}={v}\n" for k, v in self.meta.items())
        path.write_text(head + body)
        self.artifacts.append(name)

    def json(self, name, payload):
        path = self.out / name
        data = dict(self.meta)
        data.update(payload)
        path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
        self.artifacts.append(name)

    def summary(self, command, status, payload):
        data = {"command": command, "status": status, "artifacts": list(self.artifacts),
                "metadata": {"timestamp": datetime.now(timezone.utc).isoformat()}}
        data.update(payload)
        self.json("summary.json", data)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return float("%.17g" % v) if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _cache_key(cfg: RunConfig) -> str:
    text = "|".join(_fmt(getattr(cfg, k)) for k in RunConfig.SECTIONS["pair"] + RunConfig.SECTIONS["grid"])
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def ground_state(cfg: RunConfig, out: Path) -> GroundState:
    """Load the profile for (pair, grid) from the cache, or solve and store it."""
    cache = Path(cfg.cache_dir) if cfg.cache_dir else out / "cache"
    path = cache / f"ground_state_{_cache_key(cfg)}.pkl"
    if path.exists():
        with open(path, "rb") as fh:
            gs = pickle.load(fh)
        if isinstance(gs, GroundState) and gs.pair == cfg.pair():
            return gs
    gs = solve_ground_state(cfg.pair(), cfg.grid_options())
    cache.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        pickle.dump(gs, fh)
    return gs


# ---------------------------------------------------------------------------
# commands


def cmd_ground_state(run: Run) -> dict:
    gs = ground_state(run.cfg, run.out)
    run.csv("profile.csv", write_profile_csv, gs)
    tf = tail_constants(gs)
    rep = {"beta": gs.beta, "bracket_margin": gs.margin, "a": gs.a, "b": gs.b, "A": gs.A,
           "match_residual": gs.match_residual, "ode_residual": ode_residual(gs), "tail_fit": asdict(tf),
           "u_branch": gs.pair.u_branch}
    run.json("tail_report.json", rep)
    return rep


def _constants(run):
    from .energy import interaction_constants

    gs = ground_state(run.cfg, run.out)
    w = solve_w(gs.pair, gs)
    return gs, w, interaction_constants(gs, w)


def cmd_constants(run: Run) -> dict:
    _, _, c = _constants(run)
    run.json("constants.json", c.as_dict())
    return {"B1": c.B1, "B2": c.B2}


def cmd_phi_check(run: Run) -> dict:
    from .bubble import eval_phi

    cfg = run.cfg
    gs = ground_state(cfg, run.out)
    w = solve_w(gs.pair, gs)
    rows = []
    for k in cfg.k_list:
        pc = cfg.polygon(k)
        x1 = pc.centers[0]
        mc = eval_phi(pc, gs, w, x1, "montecarlo", budget=cfg.budget, seed=cfg.seed, workers=cfg.workers)
        lim = float(eval_phi(pc, gs, w, x1))
        fin = float(eval_phi(pc, gs, w, x1, polygon="finite"))
        rows.append({"k": k, "mu": pc.mu, "mc": mc.value, "stderr": mc.stderr, "asymptotic": lim,
                     "ratio": mc.value / lim, "asymptotic_finite": fin, "ratio_finite": mc.value / fin})

    def write(rows_, path):
        keys = ["k", "mu", "mc", "stderr", "asymptotic", "ratio", "asymptotic_finite", "ratio_finite"]
        with open(path, "w") as fh:
            fh.write(",".join(keys) + "\n")
            for r_ in rows_:
                fh.write(",".join(str(r_[x]) if x == "k" else "%.17g" % r_[x] for x in keys) + "\n")

    run.csv("phi_check.csv", write, rows)
    dev = [abs(r_["ratio"] - 1) for r_ in rows]
    trend = all(b <= a for a, b in zip(dev, dev[1:]))
    last = rows[-1]
    window = abs(last["ratio"] - 1) <= 5 * last["stderr"] / last["asymptotic"]
    res = {"trend_ok": trend, "within_5_stderr": window, "rows": rows}
    if len(rows) > 1 and not trend:
        raise TrendFailure("|ratio - 1| is not non-increasing in k", res)
    return res


def cmd_expansion(run: Run) -> dict:
    from .energy import expansion_convergence, scaled_trend_ok, write_expansion_csv

    cfg = run.cfg
    gs = ground_state(cfg, run.out)
    rows = expansion_convergence(gs.pair, cfg.mu0, cfg.r, cfg.lam, cfg.k_list, cfg.budget, cfg.seed, gs=gs,
                                 workers=cfg.workers)
    run.csv("expansion.csv", write_expansion_csv, rows)
    res = {"trend_ok": scaled_trend_ok(rows), "rows": [asdict(r_) for r_ in rows]}
    if len(rows) > 1 and not res["trend_ok"]:
        raise TrendFailure("scaled residual is not non-increasing", res)
    return res


def cmd_error_norm(run: Run) -> dict:
    from .norms import error_norm_check, write_norm_csv

    cfg = run.cfg
    gs = ground_state(cfg, run.out)
    tab = error_norm_check(gs.pair, cfg.mu0, cfg.r, cfg.lam, cfg.k_list, cfg.seed, gs=gs)
    run.csv("error_norm.csv", write_norm_csv, tab)
    res = {"decreasing": tab.scaled_decreasing, "slope": tab.slope, "slope_stderr": tab.slope_stderr,
           "slope_ok": tab.slope_ok(gs.pair), "rows": [asdict(r_) for r_ in tab.rows]}
    if len(tab.rows) > 1 and not (tab.scaled_decreasing and res["slope_ok"]):
        raise TrendFailure("error norm does not decay as required", res)
    return res


def cmd_landscape(run: Run) -> dict:
    from .reduced import ReducedLandscape, find_interior_max, write_landscape_csv

    gs, _, c = _constants(run)
    land = ReducedLandscape(c, gs)
    m = find_interior_max(land, run.cfg.resolution)
    run.csv("landscape.csv", lambda ld, path: write_landscape_csv(ld, path, run.cfg.resolution),
            land.with_box(*m.box))
    rep = asdict(m)
    rep["orbit_note"] = "every (M0/t, t, Lam/t) is an equivalent maximizer"
    run.json("maximizer.json", rep)
    return rep


def cmd_scaling_check(run: Run) -> dict:
    from .bubble import ansatz_scaling_defect
    from .energy import interaction_constants
    from .reduced import F, ReducedLandscape
    from .quad import chunk_rng

    cfg = run.cfg
    gs = ground_state(cfg, run.out)
    w = solve_w(gs.pair, gs)
    defects = {str(k): ansatz_scaling_defect(cfg.polygon(k), gs, w, cfg.scaling_t, cfg.scaling_points, cfg.seed)
               for k in cfg.k_list}
    land = ReducedLandscape(interaction_constants(gs, w), gs)
    tr = np.exp(chunk_rng(cfg.seed, 1).uniform(-2, 2, (cfg.scaling_points, 3)))
    a = F(tr[:, 0], tr[:, 1], tr[:, 2], land)
    b = F(tr[:, 0] * tr[:, 1], 1.0, tr[:, 1] * tr[:, 2], land)
    f_def = float(np.max(np.abs(a - b) / np.abs(a)))
    res = {"ansatz_defect": defects, "F_defect": f_def,
           "ok": max(defects.values()) <= 1e-8 and f_def <= 1e-12}
    run.json("scaling.json", res)
    if not res["ok"]:
        raise TrendFailure("scaling covariance violated", res)
    return res


HANDLERS = {
    "ground-state": cmd_ground_state,
    "constants": cmd_constants,
    "phi-check": cmd_phi_check,
    "expansion": cmd_expansion,
    "error-norm": cmd_error_norm,
    "landscape": cmd_landscape,
    "scaling-check": cmd_scaling_check,
}


def _error(code, kind, msg, out=None):
    rec = {"status": "error", "exit_code": code, "kind": kind, "message": msg}
    sys.stderr.write(json.dumps(rec, sort_keys=True) + "\n")
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="critbubble", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="key = value configuration file")
    ap.add_argument("--out", help="output directory (overrides [output] out_dir)")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        return _error(EXIT_CONFIG, "config", str(e))
    out = Path(args.out or cfg.out_dir)
    run = Run(cfg, out)
    try:
        payload = HANDLERS[args.command](run)
    except TrendFailure as e:
        run.summary(args.command, "trend-failure", e.args[1] if len(e.args) > 1 else {})
        return _error(EXIT_TREND, "trend", str(e.args[0]), out)
    except (RuntimeError, ArithmeticError, ValueError, FloatingPointError) as e:
        return _error(EXIT_NUMERIC, type(e).__name__, str(e), out)
    run.summary(args.command, "ok", payload)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
