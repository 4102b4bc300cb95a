"""Replica-symmetric saddle point for regularized GLMs.

The six order parameters (m, q, tau, kappa, nu, eta) extremize

    E = kappa tau / 2 - (nu^2 rho + kappa^2) / (2 eta) + nu m - eta q / 2
        + alpha E[(kappa/tau) M_{(tau/kappa) L(y, .)}(omega)] + E[eta M_{R/eta}(u)]

with omega = (m/sqrt(rho)) s + sqrt(q - m^2/rho) h and u = (nu w + kappa g) / eta.
Stationarity reads, with V = tau/kappa and P the proximal point of V L(y, .),

    nu    = (alpha/V) E[(s/sqrt(rho) - (m/rho) h/sqrt(Q)) P]
    kappa = sqrt(alpha E[(omega - P)^2]) / V
    eta   = (alpha/V) (1 - E[h P]/sqrt(Q))
    q = E[P_R^2],  m = E[w P_R],  tau = E[g P_R]

where P_R = prox_{R/eta}(u). The h-terms are evaluated in the equivalent
Gaussian-integration-by-parts form E[h P] = sqrt(Q) E[dP/domega].
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import optimize

from .expect import (
    ChannelSpec,
    GaussianPrior,
    Nodes,
    QuadSpec,
    TeacherPrior,
    loss_nodes,
    reg_nodes,
)
from .prox import FD_STEP, L2Reg, LossSpec, ModulusViolation, RegSpec, ResidualLoss, SpectralQuadratic

log = logging.getLogger(__name__)

__all__ = [
    "OrderParameters",
    "ModelSpec",
    "SolverConfig",
    "SaddleSolution",
    "FeasibilityError",
    "NoConvergence",
    "AllUnstable",
    "GridTooCoarse",
    "ProxIllPosed",
    "PinnedAtModulus",
    "energy",
    "simplified_energy",
    "stationary_update",
    "residuals",
    "solve",
    "observables",
    "replicon",
    "replicon_lhs",
    "landscape",
    "LandscapeRow",
    "critical_lambda",
    "CriticalLambda",
    "spectral_solve",
    "spectral_model",
    "SpectralSolution",
]


class FeasibilityError(ValueError):
    pass


class NoConvergence(RuntimeError):
    def __init__(self, msg, failures=()):
        super().__init__(msg)
        self.failures = list(failures)


class AllUnstable(RuntimeWarning):
    pass


class GridTooCoarse(RuntimeError):
    pass


class ProxIllPosed(ModulusViolation):
    pass


class PinnedAtModulus(ModulusViolation):
    """The iteration kept hitting the loss modulus: no fixed point inside the regime."""


@dataclass(frozen=True)
class OrderParameters:
    m: float
    q: float
    tau: float
    kappa: float
    nu: float
    eta: float

    NAMES = ("m", "q", "tau", "kappa", "nu", "eta")

    @property
    def V(self) -> float:
        return self.tau / self.kappa

    def as_array(self) -> np.ndarray:
        return np.array([self.m, self.q, self.tau, self.kappa, self.nu, self.eta])

    @classmethod
    def from_array(cls, x) -> "OrderParameters":
        return cls(*(float(v) for v in x))

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.NAMES}


@dataclass(frozen=True)
class ModelSpec:
    alpha: float
    loss: LossSpec
    reg: RegSpec
    channel: ChannelSpec
    prior: TeacherPrior = GaussianPrior(1.0)
    a: float = 0.0
    b: float = math.inf

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be nonnegative")
        if not (0.0 <= self.a <= self.b):
            raise ValueError(f"shell bounds must satisfy 0 <= a <= b, got a={self.a}, b={self.b}")
        if math.isinf(self.b) and self.reg.quadratic_growth is None:
            raise ValueError("an unbounded shell (b = inf) needs a regularizer with quadratic growth")

    @property
    def rho(self) -> float:
        return self.prior.rho

    @property
    def shell(self) -> bool:
        return self.a > 0 or math.isfinite(self.b)

    def describe(self) -> dict:
        return {
            "alpha": self.alpha,
            "rho": self.rho,
            "a": self.a,
            "b": self.b,
            "loss": self.loss.describe(),
            "reg": self.reg.describe(),
            "channel": self.channel.describe(),
            "prior": self.prior.describe(),
        }


@dataclass(frozen=True)
class SolverConfig:
    damping: float = 0.7
    tol: float = 1e-5
    max_iter: int = 5000
    n_restarts: int = 8
    seed: int = 0
    init: OrderParameters | None = None
    quad: QuadSpec = QuadSpec()
    #: stop after the first stable fixed point when the problem is convex
    early_stop_convex: bool = True

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1 or self.n_restarts < 1:
            raise ValueError("max_iter and n_restarts must be positive")


@dataclass
class SaddleSolution:
    params: OrderParameters
    energy: float
    simplified_energy: float
    residuals: np.ndarray
    replicon_lhs: float
    stable: bool
    iterations: int
    converged: bool
    status: str = "ok"
    shell_active: bool = False
    clamped: int = 0
    restarts_tried: int = 0
    model: ModelSpec | None = field(default=None, repr=False)

    @property
    def error(self) -> float:
        return observables(self.params, self.model.rho if self.model else 1.0)["error"]

    def summary(self) -> dict:
        return {
            **self.params.as_dict(),
            "energy": self.energy,
            "simplified_energy": self.simplified_energy,
            "error": self.error,
            "replicon_lhs": self.replicon_lhs,
            "stable": self.stable,
            "iterations": self.iterations,
            "converged": self.converged,
            "status": self.status,
            "max_residual": float(np.max(np.abs(self.residuals))),
        }


# ---------------------------------------------------------------------------
# Moments


@dataclass
class _LossSide:
    V: float
    nodes: Nodes
    P: np.ndarray
    dP: np.ndarray


def _loss_side(p: OrderParameters, model: ModelSpec, quad: QuadSpec) -> _LossSide:
    V = p.tau / p.kappa
    if not (V > 0 and np.isfinite(V)):
        raise FeasibilityError(f"tau/kappa must be positive and finite, got {V}")
    if V >= model.loss.modulus:
        cls = ProxIllPosed if isinstance(model.loss, SpectralQuadratic) else ModulusViolation
        raise cls(f"tau/kappa={V:.6g} reaches the loss modulus {model.loss.modulus:.6g}")
    N = _nodes_for(p, model, quad, V)
    if isinstance(model.loss, ResidualLoss) and N.r_values is not None:
        e, de = model.loss.residual_map(N.r_values, V)
        P = N.y - e[N.r_index]
        dP = de[N.r_index]
    else:
        P = model.loss.prox(N.arg, N.y, V)
        dP = model.loss.dprox(N.arg, N.y, V)
    return _LossSide(V, N, P, dP)


def _nodes_for(p: OrderParameters, model: ModelSpec, quad: QuadSpec, V: float) -> Nodes:
    return loss_nodes(p.m, p.q, model.rho, model.channel, quad, model.loss.residual_breaks(V),
                      getattr(model.loss, "label_breaks", ()))


def _hat(p: OrderParameters, model: ModelSpec, ls: _LossSide):
    a, rho, V, N = model.alpha, model.rho, ls.V, ls.nodes
    EdP = N.mean(ls.dP)
    nu = a / V * (N.mean(N.a * ls.P) / math.sqrt(rho) - p.m / rho * EdP)
    kappa = math.sqrt(max(a * N.mean((N.arg - ls.P) ** 2), 0.0)) / V
    eta = a / V * (1.0 - EdP)
    return nu, kappa, eta


def _reg_moments(nu, kappa, eta, model: ModelSpec, quad: QuadSpec):
    N = reg_nodes(nu, kappa, eta, model.prior, quad)
    PR = model.reg.prox(N.arg, 1.0 / eta)
    return N, PR, N.mean(PR * PR)


def _shell_eta(nu, kappa, qt, model: ModelSpec, quad: QuadSpec) -> float:
    """Multiplier eta such that E[P_R^2] equals the shell radius qt."""
    c2 = nu * nu * model.rho + kappa * kappa
    if isinstance(model.reg, L2Reg):
        return math.sqrt(c2 / qt) - model.reg.lam
    lo = 1.0 / model.reg.modulus if np.isfinite(model.reg.modulus) else 0.0
    f = lambda e: _reg_moments(nu, kappa, e, model, quad)[2] - qt  # noqa: E731
    a = lo * 1.0001 + 1e-12
    b = max(2 * a, 1.0)
    while f(b) > 0:
        b *= 2.0
        if b > 1e12:
            raise FeasibilityError("shell multiplier bracket failed")
    if f(a) < 0:
        return a
    return optimize.brentq(f, a, b, xtol=1e-14)


@dataclass
class _Update:
    params: OrderParameters
    shell_active: bool
    clamped: bool
    degenerate: bool
    eta_loss: float
    loss_side: _LossSide | None


def _update(p: OrderParameters, model: ModelSpec, quad: QuadSpec) -> _Update:
    ls = _loss_side(p, model, quad)
    nu, kappa, eta = _hat(p, model, ls)
    eta_loss = eta
    rho = model.rho
    if kappa == 0 and nu == 0 and not model.shell:
        # no data: the regularizer alone decides
        if isinstance(model.reg, L2Reg) and model.reg.lam > 0:
            return _Update(OrderParameters(0.0, 0.0, 0.0, 0.0, 0.0, 0.0), False, False, True, eta, ls)
        raise FeasibilityError("degenerate update with a regularizer without a unique minimizer")
    shell_active = False
    if model.a == model.b:
        eta = _shell_eta(nu, kappa, model.a, model, quad)
        shell_active = True
    else:
        if eta <= 0 or eta * model.reg.modulus <= 1.0:
            q_new = math.inf
        else:
            q_new = _reg_moments(nu, kappa, eta, model, quad)[2]
        if q_new > model.b:
            eta = _shell_eta(nu, kappa, model.b, model, quad)
            shell_active = True
        elif q_new < model.a:
            eta = _shell_eta(nu, kappa, model.a, model, quad)
            shell_active = True
        elif not np.isfinite(q_new):
            raise FeasibilityError("eta left the region where the regularizer proximal map is defined")
    N, PR, q = _reg_moments(nu, kappa, eta, model, quad)
    if shell_active:
        q = min(max(q, model.a), model.b)
    m = N.mean(N.a * PR)
    tau = N.mean(N.b * PR)
    clamped = False
    if q < m * m / rho - 1e-10:
        clamped = True
        q = m * m / rho
    new = OrderParameters(m, q, tau, kappa, nu, eta)
    return _Update(new, shell_active, clamped, False, eta_loss, ls)


def stationary_update(params: OrderParameters, model: ModelSpec, quad: QuadSpec = QuadSpec()) -> OrderParameters:
    """One synchronous sweep of the six stationarity relations."""
    return _update(params, model, quad).params


def residuals(params: OrderParameters, model: ModelSpec, quad: QuadSpec = QuadSpec()) -> np.ndarray:
    return stationary_update(params, model, quad).as_array() - params.as_array()


# ---------------------------------------------------------------------------
# Energies and observables


def energy(params: OrderParameters, model: ModelSpec, quad: QuadSpec = QuadSpec()) -> float:
    p, rho = params, model.rho
    ls = _loss_side(p, model, quad)
    N = ls.nodes
    loss_term = N.mean(model.loss.value(N.y, ls.P) + (N.arg - ls.P) ** 2 / (2.0 * ls.V))
    Nr, PR, _ = _reg_moments(p.nu, p.kappa, p.eta, model, quad)
    reg_term = Nr.mean(model.reg.value(PR) + 0.5 * p.eta * (Nr.arg - PR) ** 2)
    quadratic = p.kappa * p.tau / 2 - (p.nu**2 * rho + p.kappa**2) / (2 * p.eta) + p.nu * p.m - p.eta * p.q / 2
    return float(quadratic + model.alpha * loss_term + reg_term)


def _loss_mean(params, model, quad) -> float:
    ls = _loss_side(params, model, quad)
    return ls.nodes.mean(model.loss.value(ls.nodes.y, ls.P))


def simplified_energy(params: OrderParameters, model: ModelSpec, quad: QuadSpec = QuadSpec()) -> float:
    """alpha E[L(y, P)] + E[R(P_R)], equal to the energy at a fixed point."""
    Nr, PR, _ = _reg_moments(params.nu, params.kappa, params.eta, model, quad)
    return float(model.alpha * _loss_mean(params, model, quad) + Nr.mean(model.reg.value(PR)))


def observables(params: OrderParameters, rho: float = 1.0) -> dict:
    return {"error": rho - 2.0 * params.m + params.q, "m": params.m, "q": params.q}


def replicon_lhs(alpha: float, df_sq: float, dg_sq: float, eta: float = 1.0) -> float:
    """alpha E[(df)^2] E[(dg)^2] / eta^2.

    The 1/eta^2 factor makes the condition invariant under the rescaling of the
    output denoiser that leaves the message-passing fixed point unchanged.
    """
    return alpha * df_sq * dg_sq / eta**2


def replicon(params: OrderParameters, model: ModelSpec, quad: QuadSpec = QuadSpec(), h: float = FD_STEP) -> dict:
    """Replicon stability via central differences of the two denoisers."""
    V = params.V
    N = _nodes_for(params, model, quad, V)
    g = lambda w: (model.loss.prox(w, N.y, V) - w) / V  # noqa: E731
    dg = (g(N.arg + h) - g(N.arg - h)) / (2 * h)
    Nr = reg_nodes(params.nu, params.kappa, params.eta, model.prior, quad)
    f = lambda u: model.reg.prox(u, 1.0 / params.eta)  # noqa: E731
    df = (f(Nr.arg + h) - f(Nr.arg - h)) / (2 * h)
    df_sq, dg_sq = Nr.mean(df * df), N.mean(dg * dg)
    lhs = replicon_lhs(model.alpha, df_sq, dg_sq, params.eta)
    return {"lhs": float(lhs), "stable": bool(lhs < 1 - 1e-8), "df_sq": df_sq, "dg_sq": dg_sq,
            "lhs_unscaled": float(model.alpha * df_sq * dg_sq)}


# ---------------------------------------------------------------------------
# Solver


def _default_init(model: ModelSpec) -> OrderParameters:
    rho = model.rho
    q = min(max(0.5 * rho, model.a), model.b) if model.shell else 0.5 * rho
    m = 0.5 * math.sqrt(rho * q)
    V = min(0.5, 0.5 * model.loss.modulus)
    return OrderParameters(m, q, V, 1.0, 1.0, 1.0)


def _random_init(model: ModelSpec, rng: np.random.Generator) -> OrderParameters:
    rho = model.rho
    lo, hi = max(model.a, 1e-3), min(model.b, 1e2)
    if hi < lo:
        lo = hi = model.a
    q = float(rng.uniform(lo, hi))
    m = float(rng.uniform(-1, 1) * math.sqrt(rho * q))
    kappa = float(10 ** rng.uniform(-2, 2))
    eta = float(10 ** rng.uniform(-2, 2))
    vmax = min(1e2, 0.9 * model.loss.modulus)
    V = float(10 ** rng.uniform(-2, math.log10(vmax)))
    nu = float(10 ** rng.uniform(-2, 2))
    return OrderParameters(m, q, V * kappa, kappa, nu, eta)


def _iterate(x0: OrderParameters, model: ModelSpec, cfg: SolverConfig):
    x = x0.as_array()
    mu = cfg.damping
    clamps = 0
    pinned = 0
    for it in range(1, cfg.max_iter + 1):
        up = _update(OrderParameters.from_array(x), model, cfg.quad)
        if up.degenerate:
            return up.params, it, True, up, clamps
        clamps += up.clamped
        F = up.params.as_array()
        if not np.all(np.isfinite(F)):
            raise FeasibilityError("non-finite update")
        r = F - x
        if np.max(np.abs(r)) < cfg.tol:
            return up.params, it, True, up, clamps
        x_next = mu * F + (1 - mu) * x
        x = _safeguard(x, x_next, model)
        pinned = pinned + 1 if x is not x_next else 0
        if pinned > 50:
            raise PinnedAtModulus("iteration pinned at the loss modulus; fixed point lies outside the weakly convex regime")
    return OrderParameters.from_array(x), cfg.max_iter, False, up, clamps


def _safeguard(x, x_new, model: ModelSpec, margin: float = 0.995):
    """Shorten the damped step so that tau/kappa stays below the loss modulus."""
    V0 = model.loss.modulus
    if not np.isfinite(V0) or (x_new[3] > 0 and x_new[2] > 0 and x_new[2] / x_new[3] < margin * V0):
        return x_new
    t = 0.5
    for _ in range(60):
        cand = x + t * (x_new - x)
        if cand[3] > 0 and cand[2] > 0 and cand[2] / cand[3] < margin * V0:
            return cand
        t *= 0.5
    return x


def _convex(model: ModelSpec) -> bool:
    return not np.isfinite(model.loss.modulus) and not np.isfinite(model.reg.modulus) and not model.a > 0


def _finish(p: OrderParameters, model: ModelSpec, cfg: SolverConfig, its: int, conv: bool, up: _Update,
            clamps: int) -> SaddleSolution:
    if up.degenerate:
        res = np.zeros(6)
        return SaddleSolution(p, 0.0, 0.0, res, 0.0, True, its, True, "degenerate", False, clamps, 0, model)
    res = residuals(p, model, cfg.quad)
    E = energy(p, model, cfg.quad)
    Es = simplified_energy(p, model, cfg.quad)
    rep = replicon(p, model, cfg.quad)
    return SaddleSolution(p, E, Es, res, rep["lhs"], rep["stable"], its, conv, "ok" if conv else "max_iter",
                          up.shell_active, clamps, 0, model)


def solve(model: ModelSpec, cfg: SolverConfig = SolverConfig()) -> SaddleSolution:
    """Damped fixed-point iteration with seeded restarts.

    Among converged fixed points the stable one with minimal energy is
    returned. When every fixed point fails the replicon test, the best one is
    returned with status 'unstable' and an AllUnstable warning.
    """
    rng = np.random.default_rng(cfg.seed)
    found: list[SaddleSolution] = []
    failures = []
    tried = 0
    for k in range(cfg.n_restarts):
        if k == 0:
            x0 = cfg.init if cfg.init is not None else _default_init(model)
        else:
            x0 = _random_init(model, rng)
        tried += 1
        try:
            p, its, conv, up, clamps = _iterate(x0, model, cfg)
        except (ModulusViolation, FeasibilityError, FloatingPointError, ValueError, ZeroDivisionError) as exc:
            log.debug("restart %d failed: %s", k, exc)
            failures.append(exc)
            continue
        if not conv:
            failures.append(NoConvergence(f"restart {k} hit max_iter"))
            continue
        sol = _finish(p, model, cfg, its, conv, up, clamps)
        found.append(sol)
        if sol.stable and _convex(model) and cfg.early_stop_convex:
            break
    if not found:
        ill = [f for f in failures if isinstance(f, ProxIllPosed)]
        if ill:
            raise ill[0]
        raise NoConvergence(f"no restart converged ({len(failures)} failures; last: {failures[-1] if failures else None})",
                            failures)
    stable = [s for s in found if s.stable]
    pool = stable if stable else found
    best = min(pool, key=lambda s: s.energy)
    best.restarts_tried = tried
    if not stable:
        best.status = "unstable"
        warnings.warn("no replicon-stable fixed point found", AllUnstable, stacklevel=2)
    return best


# ---------------------------------------------------------------------------
# Negative regularization landscape


@dataclass
class LandscapeRow:
    q: float
    h: float
    dh: float
    stable: bool
    converged: bool
    params: OrderParameters | None = None
    message: str = ""

    def curve(self, lam: float) -> float:
        return self.h + 0.5 * lam * self.q


def _shell_model(model: ModelSpec, q: float) -> ModelSpec:
    return replace(model, reg=L2Reg(0.0), a=q, b=q)


def _shell_point(model: ModelSpec, q: float, cfg: SolverConfig, init=None) -> LandscapeRow:
    shell = _shell_model(model, q)
    if init is not None:
        init = replace(init, q=q, m=float(np.clip(init.m, -math.sqrt(model.rho * q), math.sqrt(model.rho * q))))
    try:
        sol = solve(shell, replace(cfg, init=init))
    except (NoConvergence, ModulusViolation, FeasibilityError) as exc:
        return LandscapeRow(q, math.nan, math.nan, False, False, None, str(exc))
    p = sol.params
    up = _update(p, shell, cfg.quad)
    h = model.alpha * _loss_mean(p, shell, cfg.quad)
    # envelope theorem: dh/dq = (eta_loss - eta_shell) / 2
    dh = 0.5 * (up.eta_loss - p.eta)
    return LandscapeRow(q, float(h), float(dh), sol.stable, sol.converged, p)


def landscape(model: ModelSpec, q_grid: Sequence[float], cfg: SolverConfig = SolverConfig(),
              warm_start: bool = True) -> list[LandscapeRow]:
    """Minimal training loss h(q) on spherical shells of squared radius q.

    The regularizer of `model` is ignored; the curve for a ridge penalty lam is
    LandscapeRow.curve(lam) = h(q) + lam q / 2.
    """
    rows = []
    init = None
    for q in q_grid:
        row = _shell_point(model, float(q), cfg, init if warm_start else None)
        if row.converged and row.params is not None:
            init = row.params
        rows.append(row)
    return rows


@dataclass
class CriticalLambda:
    value: float
    bracket: tuple
    q_star: float


def critical_lambda(model: ModelSpec, q_grid: Sequence[float] | None = None, cfg: SolverConfig = SolverConfig(),
                    width: float = 1e-3, rows: list[LandscapeRow] | None = None) -> CriticalLambda:
    """Most negative ridge strength that still leaves a finite-norm local minimum.

    A local minimum of h(q) + lam q / 2 exists iff -lam/2 < sup_q h'(q), so
    lam_c = -2 sup_q h'(q). The supremum is located on the grid and refined by
    golden-section search on the envelope derivative.
    """
    if model.alpha == 0:
        return CriticalLambda(0.0, (0.0, 0.0), math.nan)
    if rows is None:
        if q_grid is None:
            q_grid = np.logspace(-2, 3, 200)
        rows = landscape(model, q_grid, cfg)
    ok = [r for r in rows if r.converged and np.isfinite(r.dh)]
    if len(ok) < 3:
        raise GridTooCoarse("fewer than three converged landscape points")
    dh = np.array([r.dh for r in ok])
    i = int(np.argmax(dh))
    if i == 0 or i == len(ok) - 1:
        raise GridTooCoarse(f"sup of h' sits at the grid edge q={ok[i].q:.4g}")
    lo, hi = ok[i - 1].q, ok[i + 1].q
    best_q, best = ok[i].q, ok[i].dh
    spread = abs(max(ok[i - 1].dh, ok[i + 1].dh) - best)
    init = ok[i].params
    tight = replace(cfg, tol=min(cfg.tol, 1e-8))

    def neg(q):
        r = _shell_point(model, q, tight, init)
        if not r.converged:
            raise GridTooCoarse(f"refinement solve failed at q={q:.6g}")
        return -r.dh

    res = optimize.minimize_scalar(neg, bracket=(lo, best_q, hi), method="golden",
                                   options={"xtol": 1e-4})
    if -res.fun > best:
        best_q, best = float(res.x), float(-res.fun)
    # the curvature of h' at its maximum bounds the remaining error in q
    a, c = lo + (best_q - lo) * 1e-3, hi - (hi - best_q) * 1e-3
    spread = min(spread, abs(best + neg(a)), abs(best + neg(c)))
    err = 2.0 * max(min(spread, width / 4), 10 * tight.tol)
    val = -2.0 * best
    return CriticalLambda(val, (val - err, val), best_q)


# ---------------------------------------------------------------------------
# Spectral estimators


@dataclass
class SpectralSolution:
    m: float
    tau: float
    a_val: float
    b_val: float
    energy: float
    top_eigenvalue: float
    converged: bool
    solution: SaddleSolution | None = None
    informative: bool = True


def spectral_model(channel: ChannelSpec, T, alpha: float, t_bounds=(-1.0, 1.0), name: str = "T",
                   label_breaks=()) -> ModelSpec:
    """Shell problem whose minimizer is the top eigenvector of sum T(y) x x^T / d."""
    lo, hi = t_bounds
    loss = SpectralQuadratic(lambda y: -np.asarray(T(y), dtype=float), t_min=-hi, t_max=-lo, name=f"-{name}",
                             label_breaks=tuple(label_breaks))
    return ModelSpec(alpha, loss, L2Reg(0.0), channel, GaussianPrior(1.0), 1.0, 1.0)


def _spectral_moments(V, model: ModelSpec, quad: QuadSpec, nodes: Nodes):
    """E[(s^2 - 1) D], E[(1 - D)^2], E[(s^2 - 1)(1 - D)^2] with D the proximal slope."""
    D = model.loss.dprox(nodes.arg, nodes.y, V)
    s2 = nodes.a2
    return nodes.mean((s2 - 1.0) * D), nodes.mean((1.0 - D) ** 2), nodes.mean((s2 - 1.0) * (1.0 - D) ** 2)


def spectral_solve(channel: ChannelSpec, T, alpha: float, cfg: SolverConfig = SolverConfig(),
                   t_bounds=(-1.0, 1.0), name: str = "T", label_breaks=(), n_scan: int = 400) -> SpectralSolution:
    """Asymptotic overlap of the leading eigenvector of A = sum_mu T(y_mu) x_mu x_mu^T.

    This is the unit-sphere problem with loss -T(y) z^2 and no regularizer, so
    the proximal map is linear, P = D omega with D = 1 / (1 - 2 V T(y)). On the
    sphere the stationarity relations collapse to

        alpha E[(s^2 - 1) D] = 1
        m^2 = (1 - alpha E[(1 - D)^2]) / (1 + alpha E[(s^2 - 1)(1 - D)^2])

    The first equation is solved for V in (0, V0) by bracketing and Brent's
    method; the six order parameters are then rebuilt and checked against the
    general stationary map. Without a root giving 0 < m^2 <= 1 no eigenvalue
    separates from the bulk and m = 0 is returned with informative=False.

    a_val = E[(s - m h / sqrt(1 - m^2)) P] and b_val = E[(omega - P)^2] / V^2.
    """
    model = spectral_model(channel, T, alpha, t_bounds, name, label_breaks)
    V0 = model.loss.modulus
    quad = cfg.quad
    # D depends on y only, so one node set serves every V
    probe = loss_nodes(0.0, 1.0, 1.0, channel, quad, (), model.loss.label_breaks)
    if np.allclose(model.loss.T(probe.y), 0.0) or alpha == 0:
        return SpectralSolution(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, True, None, False)
    hi_V = V0 * (1 - 1e-9) if np.isfinite(V0) else 1e6
    Vs = hi_V * np.linspace(0.0, 1.0, n_scan + 1)[1:] ** 2
    g = np.array([alpha * _spectral_moments(v, model, quad, probe)[0] - 1.0 for v in Vs])
    root = None
    # the largest eigenvalue sits at the crossing closest to the pole
    for i in range(len(Vs) - 1, 0, -1):
        if np.sign(g[i]) != np.sign(g[i - 1]):
            root = optimize.brentq(lambda v: alpha * _spectral_moments(v, model, quad, probe)[0] - 1.0,
                                   Vs[i - 1], Vs[i], xtol=1e-15, rtol=1e-14)
            break
    if root is None:
        return SpectralSolution(0.0, math.nan, math.nan, math.nan, math.nan, math.nan, True, None, False)
    V = float(root)
    _, e2, se2 = _spectral_moments(V, model, quad, probe)
    m2 = (1.0 - alpha * e2) / (1.0 + alpha * se2)
    if not 0.0 < m2 <= 1.0 + 1e-12:
        return SpectralSolution(0.0, V, math.nan, math.nan, math.nan, math.nan, True, None, False)
    m = math.sqrt(min(m2, 1.0))
    kappa = math.sqrt(max(1.0 - m * m, 0.0)) / V
    p = OrderParameters(m, 1.0, kappa * V, kappa, m / V, 1.0 / V)
    up = _update(p, model, quad)
    sol = _finish(p, model, cfg, 0, True, up, 0)
    resid = float(np.max(np.abs(sol.residuals)))
    sol.converged = resid < max(cfg.tol, 1e-8)
    sol.status = "ok" if sol.converged else "residual"
    ls = _loss_side(p, model, quad)
    N = ls.nodes
    a_val = N.mean(N.a * ls.P) - p.m * N.mean(ls.dP)
    b_val = N.mean((N.arg - ls.P) ** 2) / ls.V**2
    return SpectralSolution(m, V, a_val, b_val, sol.energy, -sol.energy, sol.converged, sol)
