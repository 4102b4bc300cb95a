"""Command-line experiment runner.

    glma solve|compare|landscape|gamp|spectral --config run.toml [--out DIR] [--seed N] [--threads N]

Exit codes: 0 success (warnings included), 2 numerical failure, 3 config error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .empirics import erm_minimize, generate, objective, overlaps
from .expect import QuadratureDivergence, QuadSpec, make_channel, make_prior
from .gamp import Diverged, GampConfig, run as gamp_run, se_fixed_point, state_evolution_run
from .prox import L2Reg, ModulusViolation, make_loss, make_reg
from .saddle import (
    AllUnstable,
    FeasibilityError,
    GridTooCoarse,
    ModelSpec,
    NoConvergence,
    SolverConfig,
    critical_lambda,
    landscape,
    observables,
    replicon,
    solve,
    spectral_model,
    spectral_solve,
)

log = logging.getLogger("glma")

COMMANDS = ("solve", "compare", "landscape", "gamp", "spectral")
EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 2, 3
NUMERICAL_ERRORS = (NoConvergence, ModulusViolation, FeasibilityError, QuadratureDivergence, FloatingPointError)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration

MODEL_KEYS = {"alpha", "rho", "prior", "a", "b", "loss", "reg", "channel"}
SOLVER_KEYS = {"damping", "tol", "max_iter", "restarts", "hermite_order"}
OUTPUT_KEYS = {"directory", "formats"}
EXPERIMENT_KEYS = {
    "solve": {"d", "seeds"},
    "compare": {"losses", "alpha_grid", "xi_range", "lambda_range", "evals", "rounds", "search_restarts", "d",
                "seeds"},
    "landscape": {"lambda_list", "q_grid", "critical"},
    "gamp": {"d_list", "seeds", "max_t", "eps_stop", "projected", "c_proj", "onsager", "se_steps"},
    "spectral": {"alpha_grid", "transform", "d", "seeds", "gamp"},
}
FORMATS = {"csv", "json", "svg"}


def _check_keys(section: dict, allowed: set, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a table")
    extra = sorted(set(section) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}; allowed: {', '.join(sorted(allowed))}")


def parse_grid(value, where: str) -> np.ndarray:
    """A list of numbers or a table {start, stop, num, log}."""
    if isinstance(value, (list, tuple)):
        try:
            return np.array([float(v) for v in value])
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: grid entries must be numbers") from None
    if isinstance(value, dict):
        _check_keys(value, {"start", "stop", "num", "log"}, where)
        try:
            start, stop, num = float(value["start"]), float(value["stop"]), int(value["num"])
        except KeyError as exc:
            raise ConfigError(f"{where}: missing {exc.args[0]!r}") from None
        if num < 1:
            raise ConfigError(f"{where}.num must be positive")
        if value.get("log", False):
            if start <= 0 or stop <= 0:
                raise ConfigError(f"{where}: log grids need positive bounds")
            return np.logspace(math.log10(start), math.log10(stop), num)
        return np.linspace(start, stop, num)
    raise ConfigError(f"{where}: expected a list or a {{start, stop, num, log}} table")


def _build(factory, spec, where, **extra):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{where}: expected a table with a 'kind' key")
    params = {k: v for k, v in spec.items() if k != "kind"}
    params.update(extra)
    try:
        return factory(spec["kind"], **params)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def build_model(sec: dict, **override) -> ModelSpec:
    _check_keys(sec, MODEL_KEYS, "model")
    for key in ("alpha", "loss", "channel"):
        if key not in sec and key not in override:
            raise ConfigError(f"model.{key} is required")
    loss = override.get("loss") or _build(make_loss, sec["loss"], "model.loss")
    reg = override.get("reg") or _build(make_reg, sec.get("reg", {"kind": "l2", "lam": 1.0}), "model.reg")
    channel = _build(make_channel, sec["channel"], "model.channel")
    prior_kind = sec.get("prior", "gaussian")
    try:
        prior = make_prior(prior_kind, float(sec.get("rho", 1.0)))
    except ValueError as exc:
        raise ConfigError(f"model.prior: {exc}") from None
    alpha = float(override.get("alpha", sec.get("alpha", 0.0)))
    try:
        return ModelSpec(alpha, loss, reg, channel, prior, float(sec.get("a", 0.0)), float(sec.get("b", math.inf)))
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None


def build_solver(sec: dict, seed: int) -> SolverConfig:
    _check_keys(sec, SOLVER_KEYS, "solver")
    try:
        quad = QuadSpec(int(sec["hermite_order"])) if "hermite_order" in sec else QuadSpec()
        return SolverConfig(damping=float(sec.get("damping", 0.7)), tol=float(sec.get("tol", 1e-5)),
                            max_iter=int(sec.get("max_iter", 5000)), n_restarts=int(sec.get("restarts", 8)),
                            seed=seed, quad=quad)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None


@dataclass
class OutputConfig:
    directory: Path = Path("results")
    formats: tuple = ("csv", "json", "svg")


@dataclass
class RunConfig:
    command: str
    raw: dict
    model: dict
    solver: SolverConfig
    experiment: dict
    output: OutputConfig
    seed: int

    @property
    def hash(self) -> str:
        blob = json.dumps({"command": self.command, "seed": self.seed, **self.raw}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def model_spec(self, **override) -> ModelSpec:
        return build_model(self.model, **override)


def load_config(path, command: str, seed: int | None = None, out: str | None = None) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    return parse_config(raw, command, seed, out)


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return int(seed)
    env = os.environ.get("GLMA_SEED")
    if env is None or env == "":
        return 0
    try:
        val = int(env)
    except ValueError:
        raise ConfigError(f"GLMA_SEED={env!r} is not an integer") from None
    if not 0 <= val < 2**64:
        raise ConfigError("GLMA_SEED must be an unsigned 64-bit integer")
    return val


def parse_config(raw: dict, command: str, seed: int | None = None, out: str | None = None) -> RunConfig:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    _check_keys(raw, {"model", "solver", "experiment", "output"}, "config")
    if "model" not in raw:
        raise ConfigError("config: [model] section is required")
    seed = resolve_seed(seed)
    model = raw["model"]
    build_model(model)  # validate eagerly
    solver = build_solver(raw.get("solver", {}), seed)
    exp = raw.get("experiment", {})
    _check_keys(exp, EXPERIMENT_KEYS[command], "experiment")
    osec = raw.get("output", {})
    _check_keys(osec, OUTPUT_KEYS, "output")
    formats = tuple(osec.get("formats", OutputConfig.formats))
    bad = sorted(set(formats) - FORMATS)
    if bad:
        raise ConfigError(f"output.formats: unknown format(s) {', '.join(bad)}")
    directory = Path(out) if out is not None else Path(osec.get("directory", "results"))
    return RunConfig(command, raw, model, solver, exp, OutputConfig(directory, formats), seed)


# ---------------------------------------------------------------------------
# Records and serialization

PARAM_NAMES = ("m", "q", "tau", "kappa", "nu", "eta")


@dataclass
class ResultRecord:
    config_hash: str
    params: dict
    energy: float
    replicon_lhs: float
    stable: bool
    observables: dict
    empirical: list = field(default_factory=list)
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    _CORE = ("config_hash", *PARAM_NAMES, "energy", "replicon_lhs", "stable")

    @classmethod
    def from_solution(cls, sol, config_hash: str, wall_time: float = 0.0, **extra) -> "ResultRecord":
        rho = sol.model.rho if sol.model else 1.0
        return cls(config_hash, sol.params.as_dict(), float(sol.energy), float(sol.replicon_lhs), bool(sol.stable),
                   observables(sol.params, rho), [], wall_time, dict(extra))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ResultRecord":
        return cls(**d)

    def to_row(self) -> dict:
        row = dict(self.extra)
        row["config_hash"] = self.config_hash
        row.update(self.params)
        row.update(energy=self.energy, replicon_lhs=self.replicon_lhs, stable=self.stable)
        row.update({f"obs_{k}": v for k, v in self.observables.items()})
        row["empirical"] = json.dumps(self.empirical, sort_keys=True)
        row["wall_time"] = self.wall_time
        return row

    @classmethod
    def from_row(cls, row: dict) -> "ResultRecord":
        row = dict(row)
        params = {k: row.pop(k) for k in PARAM_NAMES}
        obs = {k[4:]: row.pop(k) for k in list(row) if k.startswith("obs_")}
        empirical = json.loads(row.pop("empirical"))
        return cls(row.pop("config_hash"), params, row.pop("energy"), row.pop("replicon_lhs"), row.pop("stable"),
                   obs, empirical, row.pop("wall_time"), row)

    def equal(self, other: "ResultRecord", ignore_time: bool = True) -> bool:
        a, b = self.to_json(), other.to_json()
        if ignore_time:
            a.pop("wall_time")
            b.pop("wall_time")
        return json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


def _parse(s: str):
    if s == "true":
        return True
    if s == "false":
        return False
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def write_csv(rows: list[dict], path, columns: list[str] | None = None):
    if columns is None:
        columns = []
        for r in rows:
            columns += [k for k in r if k not in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# SVG plots

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        return [10.0**k for k in range(a, b + 1) if lo <= 10.0**k <= hi] or [lo, hi]
    span = hi - lo
    if span <= 0:
        return [lo]
    step = 10 ** math.floor(math.log10(span / 5))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= 6:
            step *= mult
            break
    start = math.ceil(lo / step) * step
    return [round(start + k * step, 12) for k in range(int((hi - start) / step + 1e-9) + 1)]


def plot_svg(series: list[tuple], path=None, xlabel: str = "x", ylabel: str = "y", logx: bool = False,
             logy: bool = False, title: str = "", width: int = 640, height: int = 420) -> str:
    """Polyline chart. `series` holds (label, xs, ys) triples; non-finite points break the line.

    Returns the SVG text and writes it to `path` when given.
    """
    left, right, top, bottom = 70, 150, 30 if title else 15, 50
    pw, ph = width - left - right, height - top - bottom
    xs_all, ys_all = [], []
    for _, xs, ys in series:
        for x, y in zip(xs, ys):
            ok = np.isfinite(x) and np.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)
            if ok:
                xs_all.append(float(x))
                ys_all.append(float(y))
    if not xs_all:
        xs_all, ys_all = [1.0, 10.0] if logx else [0.0, 1.0], [1.0, 10.0] if logy else [0.0, 1.0]
    x0, x1, y0, y1 = min(xs_all), max(xs_all), min(ys_all), max(ys_all)
    if x0 == x1:
        x0, x1 = (x0 / 2, x0 * 2) if logx else (x0 - 1, x1 + 1)
    if y0 == y1:
        y0, y1 = (y0 / 2, y0 * 2) if logy else (y0 - 1, y1 + 1)
    fx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    fy = (lambda v: math.log10(v)) if logy else (lambda v: v)

    def px(v):
        return left + pw * (fx(v) - fx(x0)) / (fx(x1) - fx(x0))

    def py(v):
        return top + ph * (1 - (fy(v) - fy(y0)) / (fy(y1) - fy(y0)))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{left + pw / 2:.2f}" y="18" text-anchor="middle">{_esc(title)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for t in _ticks(x0, x1, logx):
        X = px(t)
        out.append(f'<line x1="{X:.2f}" y1="{top + ph}" x2="{X:.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{top + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1, logy):
        Y = py(t)
        out.append(f'<line x1="{left - 5}" y1="{Y:.2f}" x2="{left}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{Y + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.2f})">{_esc(ylabel)}</text>')
    for k, (label, xs, ys) in enumerate(series):
        color = _PALETTE[k % len(_PALETTE)]
        segs, cur = [], []
        for x, y in zip(xs, ys):
            ok = np.isfinite(x) and np.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)
            if ok:
                cur.append(f"{px(float(x)):.2f},{py(float(y)):.2f}")
            elif cur:
                segs.append(cur)
                cur = []
        if cur:
            segs.append(cur)
        for seg in segs:
            if len(seg) == 1:
                cx, cy = seg[0].split(",")
                out.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>')
            else:
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(seg)}"/>')
        ly = top + 14 + 18 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly}">{_esc(str(label))}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# ---------------------------------------------------------------------------
# Helpers


def _pool_map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _emit(cfg: RunConfig, name: str, rows=None, columns=None, payload=None, svg=None):
    cfg.output.directory.mkdir(parents=True, exist_ok=True)
    base = cfg.output.directory / name
    written = []
    if "csv" in cfg.output.formats and rows is not None:
        write_csv(rows, base.with_suffix(".csv"), columns)
        written.append(base.with_suffix(".csv"))
    if "json" in cfg.output.formats and payload is not None:
        write_json(payload, base.with_suffix(".json"))
        written.append(base.with_suffix(".json"))
    if "svg" in cfg.output.formats and svg is not None:
        plot_svg(**svg, path=base.with_suffix(".svg"))
        written.append(base.with_suffix(".svg"))
    for p in written:
        log.info("wrote %s", p)
    return written


def _exp(cfg: RunConfig, key, default):
    return cfg.experiment.get(key, default)


def _int(cfg: RunConfig, key, default, lo=0):
    v = _exp(cfg, key, default)
    if not isinstance(v, int) or isinstance(v, bool) or v < lo:
        raise ConfigError(f"experiment.{key} must be an integer >= {lo}")
    return v


def _pair(cfg: RunConfig, key, default):
    """[lo, hi] search range; a single number fixes the coordinate."""
    v = _exp(cfg, key, default)
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v, v]
    if isinstance(v, list) and len(v) == 1:
        v = v * 2
    try:
        lo, hi = float(v[0]), float(v[1])
    except (TypeError, ValueError, IndexError):
        raise ConfigError(f"experiment.{key} must be a positive number or [lo, hi]") from None
    if not (isinstance(v, list) and len(v) == 2 and 0 < lo <= hi):
        raise ConfigError(f"experiment.{key} must be a positive number or [lo, hi] with 0 < lo <= hi")
    return lo, hi


def _erm_overlaps(model: ModelSpec, d: int, seeds, base_seed: int, w_init=None):
    out = []
    for s in seeds:
        data = generate(model, d, base_seed + s)
        w = erm_minimize(data, model.loss, model.reg, w0=w_init(data) if w_init else None)
        o = overlaps(w, data.teacher)
        out.append({"seed": int(base_seed + s), "m": o["m"], "q": o["q"], "error": o["error"]})
    return out


def _ridge_start(lam):
    def start(data):
        X = data.X / math.sqrt(data.d)
        return np.linalg.solve(X.T @ X + max(lam, 1e-3) * np.eye(data.d), X.T @ data.y)
    return start


def _mean_se(vals):
    v = np.asarray(vals, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return float(v.mean()), se


# ---------------------------------------------------------------------------
# Commands


def cmd_solve(cfg: RunConfig, threads: int = 1) -> tuple[int, ResultRecord]:
    model = cfg.model_spec()
    t0 = time.perf_counter()
    sol = solve(model, cfg.solver)
    rep = replicon(sol.params, model, cfg.solver.quad)
    rec = ResultRecord.from_solution(sol, cfg.hash, status=sol.status, converged=sol.converged,
                                     lhs_unscaled=float(rep["lhs_unscaled"]))
    d, seeds = _int(cfg, "d", 1000, 1), _int(cfg, "seeds", 0)
    if seeds:
        rec.empirical = _erm_overlaps(model, d, range(seeds), cfg.seed, _ridge_start(getattr(model.reg, "lam", 1.0)))
    rec.wall_time = time.perf_counter() - t0
    _emit(cfg, "solve", [rec.to_row()], payload=rec.to_json())
    if not sol.stable:
        log.warning("solution is not replicon-stable")
    return EXIT_OK, rec


def golden_min(f, lo: float, hi: float, evals: int = 32, n_scan: int = 8):
    """Minimize f on [lo, hi] with a fixed budget of `evals` evaluations.

    A coarse scan of `n_scan` points picks the bracket around the best value,
    the rest of the budget goes to golden-section search inside it. Non-finite
    values count as +inf, so infeasible stretches of the range are skipped.
    Returns the best evaluated (x, f(x)).
    """
    n_scan = min(max(n_scan, 3), evals)
    xs = np.linspace(lo, hi, n_scan)
    fs = [f(float(x)) for x in xs]
    fs = [v if np.isfinite(v) else math.inf for v in fs]
    k = int(np.argmin(fs))
    best = (fs[k], float(xs[k]))
    if not np.isfinite(best[0]):
        return best[1], best[0]
    a, b = float(xs[max(k - 1, 0)]), float(xs[min(k + 1, n_scan - 1)])
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    budget = evals - n_scan
    if budget < 2:
        return best[1], best[0]

    def ev(x):
        v = f(x)
        return v if np.isfinite(v) else math.inf

    fc, fd = ev(c), ev(d)
    best = min(best, (fc, c), (fd, d))
    for _ in range(budget - 2):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = ev(c)
            best = min(best, (fc, c))
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = ev(d)
            best = min(best, (fd, d))
    return best[1], best[0]


def tune_loss(make, has_xi: bool, alpha: float, solver: SolverConfig, xi_range, lam_range,
              evals: int = 32, rounds: int = 2, search_restarts: int = 1, xi0: float | None = None,
              rtol: float = 1e-7):
    """Minimize the asymptotic error over (log xi, log lam) by coordinate-wise golden sections.

    Stops after `rounds` rounds or once a round improves the error by less than `rtol` relative.
    """
    state = {"init": None}
    fast = replace(solver, n_restarts=search_restarts, early_stop_convex=True)

    def err(xi, lam):
        try:
            model = replace(make(xi, lam), alpha=alpha)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sol = solve(model, replace(fast, init=state["init"]))
        except (*NUMERICAL_ERRORS, ValueError):
            return math.inf
        if not (sol.converged and sol.stable):
            return math.inf
        state["init"] = sol.params
        return sol.error

    def search(fn, rng):
        if rng[0] == rng[1]:
            return rng[0], fn(math.log(rng[0]))
        t, val = golden_min(fn, math.log(rng[0]), math.log(rng[1]), evals)
        return math.exp(t), val

    lam = math.sqrt(lam_range[0] * lam_range[1])
    xi = xi0 if xi0 is not None else math.sqrt(xi_range[0] * xi_range[1])
    best = math.inf
    for _ in range(rounds):
        prev = best
        lam, best = search(lambda t: err(xi, math.exp(t)), lam_range)
        if not has_xi:
            break
        xi, best = search(lambda t: err(math.exp(t), lam), xi_range)
        # a round that no longer moves the error ends the search
        if prev - best <= rtol * abs(best):
            break
    return (xi if has_xi else None), lam, best


def cmd_compare(cfg: RunConfig, threads: int = 1):
    base = cfg.model_spec()
    losses = _exp(cfg, "losses", [cfg.model["loss"]])
    if not isinstance(losses, list) or not losses:
        raise ConfigError("experiment.losses must be a non-empty list of loss tables")
    alphas = parse_grid(_exp(cfg, "alpha_grid", {"start": 0.5, "stop": 20.0, "num": 16, "log": True}),
                        "experiment.alpha_grid")
    xi_range = _pair(cfg, "xi_range", [0.05, 50.0])
    lam_range = _pair(cfg, "lambda_range", [1e-6, 10.0])
    evals, rounds = _int(cfg, "evals", 32, 3), _int(cfg, "rounds", 2, 1)
    search_restarts = _int(cfg, "search_restarts", 1, 1)
    seeds, d = _int(cfg, "seeds", 0), _int(cfg, "d", 1000, 1)
    specs = []
    for k, spec in enumerate(losses):
        loss = _build(make_loss, spec, f"experiment.losses[{k}]")
        has_xi = hasattr(loss, "xi")
        specs.append((spec, has_xi, loss.describe()["kind"]))

    def make_for(spec, has_xi):
        fixed = {k: v for k, v in spec.items() if k not in ("kind", "xi")}

        def make(xi, lam):
            loss = make_loss(spec["kind"], **fixed, **({"xi": xi} if has_xi else {}))
            return replace(base, loss=loss, reg=L2Reg(lam))
        return make

    def task(item):
        alpha, (spec, has_xi, name) = item
        t0 = time.perf_counter()
        make = make_for(spec, has_xi)
        xi, lam, best = tune_loss(make, has_xi, float(alpha), cfg.solver, xi_range, lam_range, evals, rounds,
                                  search_restarts, spec.get("xi"))
        extra = {"loss": name, "alpha": float(alpha), "xi": xi if xi is not None else math.nan, "lam": lam}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sol = solve(replace(make(xi, lam), alpha=float(alpha)), cfg.solver)
            rec = ResultRecord.from_solution(sol, cfg.hash, **extra, status=sol.status)
        except (*NUMERICAL_ERRORS, ValueError) as exc:
            nan = math.nan
            rec = ResultRecord(cfg.hash, dict.fromkeys(PARAM_NAMES, nan), nan, nan, False, {"error": nan}, [], 0.0,
                               {**extra, "status": f"failed: {type(exc).__name__}"})
        if seeds and np.isfinite(rec.energy):
            model = replace(make(xi, lam), alpha=float(alpha))
            rec.empirical = _erm_overlaps(model, d, range(seeds), cfg.seed, _ridge_start(lam))
        rec.extra["erm_mean"], rec.extra["erm_se"] = _mean_se([e["error"] for e in rec.empirical])
        rec.wall_time = time.perf_counter() - t0
        log.info("compare alpha=%g %s: error=%.6g (xi=%s, lam=%.3g)", alpha, name, rec.observables["error"], xi, lam)
        return rec

    items = [(a, s) for a in alphas for s in specs]
    records = _pool_map(task, items, threads)
    rows = [r.to_row() for r in records]
    series = []
    for _, _, name in specs:
        mine = [r for r in records if r.extra["loss"] == name]
        series.append((name, [r.extra["alpha"] for r in mine], [r.observables["error"] for r in mine]))
        if seeds:
            series.append((f"{name} (ERM)", [r.extra["alpha"] for r in mine], [r.extra["erm_mean"] for r in mine]))
    _emit(cfg, "compare", rows, payload=[r.to_json() for r in records],
          svg=dict(series=series, xlabel="alpha", ylabel="estimation error", logx=True, logy=True,
                   title="optimally tuned error"))
    failed = [r for r in records if not np.isfinite(r.energy)]
    if failed:
        log.warning("%d grid point(s) failed", len(failed))
    return EXIT_OK, records


def curve_shape(q, y) -> dict:
    """Interior extrema of a sampled curve."""
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y)
    q, y = np.asarray(q, dtype=float)[ok], y[ok]
    dy = np.sign(np.diff(y))
    mins = [float(q[i + 1]) for i in range(len(dy) - 1) if dy[i] < 0 < dy[i + 1]]
    maxs = [float(q[i + 1]) for i in range(len(dy) - 1) if dy[i] > 0 > dy[i + 1]]
    return {"local_min": mins, "local_max": maxs, "decreasing_tail": bool(len(dy) and dy[-1] < 0)}


def cmd_landscape(cfg: RunConfig, threads: int = 1):
    lams = _exp(cfg, "lambda_list", None)
    if not isinstance(lams, list) or not lams:
        raise ConfigError("experiment.lambda_list must be a non-empty list")
    try:
        lams = [float(v) for v in lams]
    except (TypeError, ValueError):
        raise ConfigError("experiment.lambda_list entries must be numbers") from None
    q_grid = parse_grid(_exp(cfg, "q_grid", {"start": 0.05, "stop": 50.0, "num": 120, "log": True}),
                        "experiment.q_grid")
    if np.any(q_grid <= 0):
        raise ConfigError("experiment.q_grid must be positive")
    # the regularizer is replaced by the shell constraint
    model = replace(cfg.model_spec(reg=L2Reg(1.0)), reg=L2Reg(0.0), a=1.0, b=1.0)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AllUnstable)
        rows = landscape(model, q_grid, cfg.solver)
    out, summary = [], {"config_hash": cfg.hash, "curves": {}}
    for lam in lams:
        vals = [r.curve(lam) for r in rows]
        for r, v in zip(rows, vals):
            out.append({"lam": lam, "q": r.q, "h": r.h, "value": v, "dh": r.dh, "stable": r.stable,
                        "converged": r.converged})
        summary["curves"][repr(lam)] = curve_shape(q_grid, vals)
    crit = None
    if _exp(cfg, "critical", True):
        try:
            crit = critical_lambda(model, cfg=cfg.solver, rows=rows)
            summary["lambda_c"] = crit.value
            summary["lambda_c_bracket"] = list(crit.bracket)
            summary["q_at_sup"] = crit.q_star
            log.info("lambda_c = %.6g, bracket (%.6g, %.6g)", crit.value, *crit.bracket)
        except GridTooCoarse as exc:
            summary["lambda_c"] = None
            summary["lambda_c_note"] = str(exc)
            log.warning("critical lambda not bracketed: %s", exc)
    summary["wall_time"] = time.perf_counter() - t0
    series = [(f"lam={lam:g}", list(q_grid), [r.curve(lam) for r in rows]) for lam in lams]
    _emit(cfg, "landscape", out, ["lam", "q", "h", "value", "dh", "stable", "converged"], summary,
          svg=dict(series=series, xlabel="q", ylabel="h(q) + lam q / 2", logx=True, title="training loss profile"))
    if not any(r.converged for r in rows):
        raise NoConvergence("no landscape point converged")
    return EXIT_OK, (out, summary)


def cmd_gamp(cfg: RunConfig, threads: int = 1):
    model = cfg.model_spec()
    d_list = [int(v) for v in _exp(cfg, "d_list", [500, 1000, 2000, 4000])]
    seeds = _int(cfg, "seeds", 5)
    gcfg = GampConfig(max_t=_int(cfg, "max_t", 200, 1), eps_stop=float(_exp(cfg, "eps_stop", 1e-6)),
                      projected=bool(_exp(cfg, "projected", False)), c_proj=_exp(cfg, "c_proj", None),
                      onsager=bool(_exp(cfg, "onsager", True)))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", AllUnstable)
        sol = solve(model, cfg.solver)
    unstable = bool(caught) or not sol.stable
    if unstable:
        log.warning("saddle point is replicon-unstable; GAMP is not expected to converge")
    p = sol.params
    summary = {"config_hash": cfg.hash, "theory": {**p.as_dict(), "energy": sol.energy, "error": sol.error,
                                                   "stable": sol.stable}}
    if seeds == 0:
        recs = state_evolution_run(model, sol, _int(cfg, "se_steps", 50, 1), quad=cfg.solver.quad,
                                   projected=gcfg.projected, c_proj=gcfg.c_proj)
        rows = [{"t": t, **asdict(r)} for t, r in enumerate(recs)]
        summary["fixed_point"] = asdict(se_fixed_point(sol, model.rho))
        _emit(cfg, "gamp_se", rows, ["t", "beta_t", "omega_tt", "mu_t", "sigma_tt"], summary,
              svg=dict(series=[("Omega", [r["t"] for r in rows], [r["omega_tt"] for r in rows]),
                               ("Sigma", [r["t"] for r in rows], [r["sigma_tt"] for r in rows])],
                       xlabel="iteration", ylabel="state evolution"))
        return EXIT_OK, (rows, summary)

    def task(item):
        d, s = item
        seed = cfg.seed + s
        data = generate(model, d, seed)
        try:
            res = gamp_run(data, sol, model.loss, model.reg, gcfg, seed=seed)
            status = res.status
        except Diverged as exc:
            res, status = exc.run, "diverged"
        w = res.final.w_hat
        finite = bool(np.all(np.isfinite(w)))
        A = objective(data, w, model.loss, model.reg) if finite else math.nan
        o = overlaps(w, data.teacher) if finite else {"m": math.nan, "q": math.nan, "error": math.nan}
        row = {"d": d, "seed": seed, "status": status, "converged": res.converged, "iterations": len(res.diag_w),
               "m": o["m"], "q": o["q"], "error": o["error"], "m_theory": p.m, "q_theory": p.q,
               "A_d": A, "energy_theory": sol.energy, "energy_gap": abs(A - sol.energy),
               "contraction": res.contraction_rate()}
        diag = [{"d": d, "seed": seed, "t": t + 1, "diag_w": a, "diag_p": b}
                for t, (a, b) in enumerate(zip(res.diag_w, res.diag_p))]
        return row, diag

    results = _pool_map(task, [(d, s) for d in d_list for s in range(seeds)], threads)
    rows = [r for r, _ in results]
    diags = [x for _, ds in results for x in ds]
    bad = [r for r in rows if not r["converged"]]
    if bad:
        log.warning("%d GAMP run(s) did not converge", len(bad))
    by_d = {}
    for d in d_list:
        gaps = [r["energy_gap"] for r in rows if r["d"] == d]
        by_d[str(d)] = {"energy_gap_mean": _mean_se(gaps)[0], "m_mean": _mean_se([r["m"] for r in rows if r["d"] == d])[0]}
    summary["by_d"] = by_d
    summary["non_converged"] = len(bad)
    gap_curve = ("|A_d - E*|", [float(d) for d in d_list], [by_d[str(d)]["energy_gap_mean"] for d in d_list])
    _emit(cfg, "gamp", rows, list(rows[0]), summary,
          svg=dict(series=[gap_curve], xlabel="d", ylabel="energy gap", logx=True, logy=True))
    _emit(cfg, "gamp_diag", diags, ["d", "seed", "t", "diag_w", "diag_p"])
    return EXIT_OK, (rows, summary)


@dataclass(frozen=True)
class Transform:
    fn: object
    bounds: tuple
    breaks: tuple = ()


TRANSFORMS = {
    "clipped_inverse": Transform(lambda y: np.maximum(-1.0, 1.0 - 1.0 / np.maximum(y, 1e-300)), (-1.0, 1.0), (0.5,)),
    "tanh": Transform(lambda y: np.tanh(np.asarray(y, dtype=float) - 1.0), (-1.0, 1.0)),
    "zero": Transform(lambda y: 0.0 * np.asarray(y, dtype=float), (0.0, 0.0)),
}


def spectral_empirics(channel, tr: Transform, alpha: float, d: int, seed: int, sol=None, amp: bool = True):
    """Top eigenpair of sum_mu T(y_mu) x_mu x_mu^T / d and, optionally, the projected-GAMP estimate."""
    model = spectral_model(channel, tr.fn, alpha, tr.bounds, label_breaks=tr.breaks)
    data = generate(model, d, seed)
    T = np.asarray(tr.fn(data.y), dtype=float)
    M = data.X.T @ (T[:, None] * data.X) / d
    vals, vecs = np.linalg.eigh(M)
    v = vecs[:, -1] * math.sqrt(d)
    out = {"seed": seed, "m": abs(float(v @ data.teacher)) / d, "lambda_true": float(vals[-1]),
           "lambda_amp": math.nan, "amp_converged": False}
    if amp and sol is not None:
        gcfg = GampConfig(max_t=500, eps_stop=1e-8, projected=True)
        try:
            res = gamp_run(data, sol, model.loss, model.reg, gcfg, seed=seed)
            w = res.w_hat
            out["lambda_amp"] = float(w @ M @ w / (w @ w))
            out["amp_converged"] = res.converged
        except Diverged:
            pass
    return out


def cmd_spectral(cfg: RunConfig, threads: int = 1):
    name = _exp(cfg, "transform", "clipped_inverse")
    if name not in TRANSFORMS:
        raise ConfigError(f"experiment.transform: unknown transform {name!r}; expected one of {sorted(TRANSFORMS)}")
    tr = TRANSFORMS[name]
    channel = cfg.model_spec().channel
    alphas = parse_grid(_exp(cfg, "alpha_grid", [0.4, 0.5, 0.6, 0.8, 1.0, 2.0, 3.0, 5.0]), "experiment.alpha_grid")
    d, seeds = _int(cfg, "d", 2000, 1), _int(cfg, "seeds", 5)
    use_amp = bool(_exp(cfg, "gamp", True))

    def task(alpha):
        res = spectral_solve(channel, tr.fn, float(alpha), cfg.solver, tr.bounds, name, tr.breaks)
        emp = [spectral_empirics(channel, tr, float(alpha), d, cfg.seed + s,
                                 res.solution if res.informative else None, use_amp) for s in range(seeds)]
        m_mean, m_se = _mean_se([e["m"] for e in emp])
        row = {"alpha": float(alpha), "m_theory": res.m, "informative": res.informative,
               "lambda_theory": res.top_eigenvalue, "m_empirical": m_mean, "m_empirical_se": m_se,
               "lambda_true": _mean_se([e["lambda_true"] for e in emp])[0],
               "lambda_amp": _mean_se([e["lambda_amp"] for e in emp])[0]}
        row["amp_rel_gap"] = abs(row["lambda_amp"] - row["lambda_true"]) / abs(row["lambda_true"]) \
            if row["lambda_true"] else math.nan
        return row, emp

    results = _pool_map(task, alphas, threads)
    rows = [r for r, _ in results]
    payload = {"config_hash": cfg.hash, "transform": name, "rows": rows,
               "per_seed": {_fmt(r["alpha"]): e for r, e in results}}
    _emit(cfg, "spectral", rows, ["alpha", "m_theory", "m_empirical", "m_empirical_se", "lambda_amp", "lambda_true",
                                  "lambda_theory", "amp_rel_gap", "informative"], payload,
          svg=dict(series=[("theory", list(alphas), [r["m_theory"] for r in rows]),
                           ("eigenvector", list(alphas), [r["m_empirical"] for r in rows])],
                   xlabel="alpha", ylabel="overlap m", title=f"spectral method, T = {name}"))
    return EXIT_OK, (rows, payload)


HANDLERS = {"solve": cmd_solve, "compare": cmd_compare, "landscape": cmd_landscape, "gamp": cmd_gamp,
            "spectral": cmd_spectral}


def _u64(s: str) -> int:
    v = int(s)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glma", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="TOML run configuration")
    ap.add_argument("--out", default=None, help="output directory (overrides [output].directory)")
    ap.add_argument("--seed", type=_u64, default=None, help="base seed (falls back to GLMA_SEED, then 0)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for grid points and seeds")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.command, args.seed, args.out)
        code, _ = HANDLERS[args.command](cfg, max(1, args.threads))
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
