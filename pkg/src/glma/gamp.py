"""Generalized approximate message passing built from the saddle-point denoisers.

With V = tau/kappa and the saddle multiplier eta, the two scalar maps are

    G(p, y) = g*(p, y) / eta,  g*(p, y) = (prox_{V L(y,.)}(p) - p) / V
    f(w)    = prox_{R/eta}(w)

and the iteration reads

    p^t     = X f(w^t) / sqrt(d) - b^t G(p^{t-1}, y),   b^t = (1/d) sum_i f'(w_i^t)
    w^{t+1} = X^T G(p^t, y) / sqrt(d) - c^t f(w^t),     c^t = (1/d) sum_mu dG/dp(p_mu^t)

A fixed point (w, p) of this map satisfies the first-order conditions of the
empirical risk at w_hat = f(w). The 1/eta scale on G makes the fixed point of
the state evolution coincide with the saddle point (mu = nu/eta,
Sigma = kappa^2/eta^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .empirics import Dataset, objective
from .expect import QuadSpec, loss_nodes, reg_nodes
from .prox import FD_STEP, LossSpec, RegSpec
from .saddle import FeasibilityError, ModelSpec, OrderParameters, SaddleSolution

__all__ = [
    "Diverged",
    "Denoisers",
    "GampState",
    "GampConfig",
    "GampRun",
    "SeRecord",
    "init_w0",
    "gamp_step",
    "run",
    "state_evolution_run",
    "se_fixed_point",
    "energy_along",
]


class Diverged(RuntimeError):
    def __init__(self, msg, run=None):
        super().__init__(msg)
        self.run = run


@dataclass(frozen=True)
class Denoisers:
    """Scalar maps used by the iteration; derivatives by central differences."""

    loss: LossSpec
    reg: RegSpec
    V: float
    eta: float
    h: float = FD_STEP

    @classmethod
    def from_solution(cls, sol: SaddleSolution | OrderParameters, loss: LossSpec, reg: RegSpec) -> "Denoisers":
        p = sol.params if isinstance(sol, SaddleSolution) else sol
        return cls(loss, reg, p.tau / p.kappa, p.eta)

    def G(self, p, y):
        return (self.loss.prox(p, y, self.V) - p) / (self.V * self.eta)

    def dG(self, p, y):
        return (self.G(p + self.h, y) - self.G(p - self.h, y)) / (2 * self.h)

    def f(self, w):
        return self.reg.prox(w, 1.0 / self.eta)

    def df(self, w):
        return (self.f(w + self.h) - self.f(w - self.h)) / (2 * self.h)


@dataclass
class GampState:
    w: np.ndarray | None
    p: np.ndarray | None
    w_hat: np.ndarray
    g_prev: np.ndarray
    onsager_b: float = 0.0
    onsager_c: float = 0.0
    t: int = 0
    diag_w: float = math.nan
    diag_p: float = math.nan


@dataclass(frozen=True)
class GampConfig:
    max_t: int = 200
    eps_stop: float = 1e-6
    projected: bool = False
    c_proj: float | None = None  # defaults to q of the solution
    onsager: bool = True
    diverge: float = 1e6
    keep_iterates: bool = False


@dataclass
class GampRun:
    m: list = field(default_factory=list)
    q: list = field(default_factory=list)
    diag_w: list = field(default_factory=list)
    diag_p: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    converged: bool = False
    status: str = "max_t"
    final: GampState | None = None

    @property
    def w_hat(self) -> np.ndarray:
        return self.final.w_hat

    def contraction_rate(self, floor: float = 1e-12) -> float:
        """Least-squares slope of log diag_w, returned as a per-iteration factor."""
        d = np.asarray(self.diag_w, dtype=float)
        t = np.arange(d.size)
        keep = np.isfinite(d) & (d > floor)
        if keep.sum() < 3:
            return math.nan
        slope = np.polyfit(t[keep], np.log(d[keep]), 1)[0]
        return float(np.exp(slope))


def init_w0(sol: SaddleSolution | OrderParameters, teacher: np.ndarray, rng: np.random.Generator,
            rho: float | None = None) -> np.ndarray:
    """(m/rho) w + sqrt(q - m^2/rho) xi, the stationary initialization."""
    p = sol.params if isinstance(sol, SaddleSolution) else sol
    teacher = np.asarray(teacher, dtype=float)
    if rho is None:
        rho = sol.model.rho if isinstance(sol, SaddleSolution) and sol.model else 1.0
    Q = p.q - p.m**2 / rho
    if Q < -1e-10:
        raise FeasibilityError(f"q - m^2/rho = {Q:.3g} is negative")
    Q = max(Q, 0.0)
    out = p.m / rho * teacher
    if Q > 0:
        out = out + math.sqrt(Q) * rng.standard_normal(teacher.size)
    return out


def _project(v, c, d):
    nrm = np.linalg.norm(v)
    if nrm == 0:
        return v, 1.0
    s = math.sqrt(c * d) / nrm
    return v * s, s


def gamp_step(state: GampState, X: np.ndarray, y: np.ndarray, den: Denoisers, onsager: bool = True,
              projection: float | None = None) -> GampState:
    """One synchronous update; `state.w_hat` must already hold f(w^t)."""
    n, d = X.shape
    sq = math.sqrt(d)
    w_hat = state.w_hat
    b = state.onsager_b if onsager else 0.0
    p = X @ w_hat / sq - b * state.g_prev
    g = den.G(p, y)
    c = float(np.sum(den.dG(p, y)) / d) if onsager else 0.0
    w_new = X.T @ g / sq - c * w_hat
    f_new = den.f(w_new)
    b_new = float(np.mean(den.df(w_new)))
    if projection is not None:
        f_new, scale = _project(f_new, projection, d)
        b_new *= scale
    diag_w = math.nan if state.w is None else float(np.linalg.norm(w_new - state.w) / sq)
    diag_p = math.nan if state.p is None else float(np.linalg.norm(p - state.p) / math.sqrt(n))
    return GampState(w_new, p, f_new, g, b_new, c, state.t + 1, diag_w, diag_p)


def run(data: Dataset, sol: SaddleSolution, loss: LossSpec, reg: RegSpec, cfg: GampConfig = GampConfig(),
        seed: int = 0, w0: np.ndarray | None = None) -> GampRun:
    """Iterate from the stationary initialization until diag_w < eps_stop or max_t."""
    den = Denoisers.from_solution(sol, loss, reg)
    rng = np.random.default_rng(seed)
    rho = data.model.rho
    if w0 is None:
        w0 = init_w0(sol, data.teacher, rng, rho)
    proj = None
    if cfg.projected:
        proj = cfg.c_proj if cfg.c_proj is not None else sol.params.q
        w0, _ = _project(w0, proj, data.d)
    state = GampState(None, None, w0, np.zeros(data.n), 0.0, 0.0, 0)
    out = GampRun()

    def record(st):
        out.m.append(float(st.w_hat @ data.teacher / data.d))
        out.q.append(float(st.w_hat @ st.w_hat / data.d))
        if cfg.keep_iterates:
            out.iterates.append(st.w_hat.copy())

    record(state)
    for _ in range(cfg.max_t):
        state = gamp_step(state, data.X, data.y, den, cfg.onsager, proj)
        record(state)
        out.diag_w.append(state.diag_w)
        out.diag_p.append(state.diag_p)
        if not np.all(np.isfinite(state.w_hat)) or (np.isfinite(state.diag_w) and state.diag_w > cfg.diverge):
            out.status = "diverged"
            out.final = state
            raise Diverged(f"diag exceeded {cfg.diverge:g} at t={state.t}", out)
        if state.diag_w < cfg.eps_stop:
            out.converged = True
            out.status = "converged"
            break
    out.final = state
    return out


# ---------------------------------------------------------------------------
# State evolution


@dataclass(frozen=True)
class SeRecord:
    beta_t: float
    omega_tt: float
    mu_t: float
    sigma_tt: float


def se_fixed_point(sol: SaddleSolution, rho: float = 1.0) -> SeRecord:
    p = sol.params
    return SeRecord(p.m / rho, max(p.q - p.m**2 / rho, 0.0), p.nu / p.eta, (p.kappa / p.eta) ** 2)


def _se_output(beta, omega, model: ModelSpec, den: Denoisers, quad: QuadSpec):
    rho = model.rho
    N = loss_nodes(rho * beta, rho * beta**2 + omega, rho, model.channel, quad, model.loss.residual_breaks(den.V),
                   getattr(model.loss, "label_breaks", ()))
    G = den.G(N.arg, N.y)
    dG = den.dG(N.arg, N.y)
    c = model.alpha * N.mean(dG)
    mu = model.alpha * math.sqrt(rho) * N.mean(N.a * G) / rho - c * beta
    sigma = model.alpha * N.mean(G * G)
    return mu, sigma


def _se_input(mu, sigma, model: ModelSpec, den: Denoisers, quad: QuadSpec, proj: float | None):
    rho = model.rho
    N = reg_nodes(mu, math.sqrt(max(sigma, 0.0)), 1.0, model.prior, quad)
    f = den.f(N.arg)
    Ef2 = N.mean(f * f)
    beta = N.mean(N.a * f) / rho
    if proj is not None and Ef2 > 0:
        s = math.sqrt(proj / Ef2)
        beta, Ef2 = beta * s, proj
    return beta, max(Ef2 - rho * beta**2, 0.0)


def state_evolution_run(model: ModelSpec, sol: SaddleSolution, T: int, init: SeRecord | None = None,
                        quad: QuadSpec = QuadSpec(), projected: bool = False,
                        c_proj: float | None = None) -> list[SeRecord]:
    """Scalar recursions (beta, Omega) -> (mu, Sigma) -> (beta, Omega).

    Starts from the law of the stationary initialization unless `init` is given.
    """
    den = Denoisers.from_solution(sol, model.loss, model.reg)
    proj = (c_proj if c_proj is not None else sol.params.q) if projected else None
    rec = init if init is not None else se_fixed_point(sol, model.rho)
    out = [rec]
    beta, omega = rec.beta_t, rec.omega_tt
    for _ in range(T):
        mu, sigma = _se_output(beta, omega, model, den, quad)
        beta, omega = _se_input(mu, sigma, model, den, quad, proj)
        out.append(SeRecord(beta, omega, mu, sigma))
    return out


def energy_along(iterates, data: Dataset, loss: LossSpec, reg: RegSpec) -> list[float]:
    """Empirical objective A_d at each estimate."""
    return [objective(data, w, loss, reg) for w in iterates]
