"""Scalar proximal calculus for weakly convex losses and regularizers.

Losses are functions L(y, z) of a label y and a preactivation z. Most catalog
entries depend on the residual r = y - z only, through a scalar profile l(r).
All array-valued methods broadcast over numpy inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

__all__ = [
    "ModulusViolation",
    "BracketFailure",
    "LossSpec",
    "L2Loss",
    "HuberLoss",
    "TukeyLoss",
    "CauchyLoss",
    "ZeroLoss",
    "SpectralQuadratic",
    "RegSpec",
    "L2Reg",
    "CustomReg",
    "ProxConfig",
    "ProxResult",
    "make_loss",
    "make_reg",
    "prox_scalar",
    "moreau_envelope",
    "lipschitz_constant",
    "verify_weak_convexity",
    "WeakConvexityReport",
    "denoiser_g",
    "denoiser_f",
    "fd_derivative",
]

FD_STEP = 1e-4


class ModulusViolation(ValueError):
    """Raised when the scaling V reaches the weak-convexity modulus."""


class BracketFailure(RuntimeError):
    """Raised when no finite bracket around the proximal minimizer exists."""


# ---------------------------------------------------------------------------
# Losses


class LossSpec:
    """Base class for losses L(y, z)."""

    kind: str = "abstract"
    #: largest V0 such that V0 * L(y, .) + z^2/2 is convex
    modulus: float = np.inf
    lower_bound: float = 0.0
    pl_order: int = 2
    closed_form: bool = False

    def value(self, y, z):
        raise NotImplementedError

    def dz(self, y, z):
        raise NotImplementedError

    def dzz(self, y, z):
        raise NotImplementedError

    def prox(self, omega, y, V):
        """Vectorized proximal map of V * L(y, .) evaluated at omega."""
        raise NotImplementedError

    def dprox(self, omega, y, V):
        """Derivative of the proximal map in omega (implicit function rule)."""
        z = self.prox(omega, y, V)
        return 1.0 / (1.0 + V * self.dzz(y, z))

    def params(self) -> dict:
        return {}

    def describe(self) -> dict:
        return {"kind": self.kind, **self.params()}

    def residual_breaks(self, V) -> tuple:
        """Residuals y - omega at which the proximal derivative is not smooth."""
        return ()

    def _check(self, V):
        if np.any(np.asarray(V) < 0):
            raise ValueError("scaling V must be nonnegative")
        if np.any(np.asarray(V) >= self.modulus):
            raise ModulusViolation(
                f"V={np.max(V):.6g} reaches the modulus {self.modulus:.6g} of {self.kind}"
            )

    def __repr__(self):
        inner = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({inner})"

    def __eq__(self, other):
        return type(self) is type(other) and self.params() == other.params()

    def __hash__(self):
        return hash((type(self).__name__, tuple(sorted(self.params().items()))))


class ResidualLoss(LossSpec):
    """Loss of the form l(y - z) with l even, l(0) = 0 and r l'(r) >= 0."""

    newton_tol = 1e-14
    newton_iter = 200

    def ell(self, r):
        raise NotImplementedError

    def dell(self, r):
        raise NotImplementedError

    def d2ell(self, r):
        raise NotImplementedError

    def value(self, y, z):
        return self.ell(np.subtract(y, z))

    def dz(self, y, z):
        return -self.dell(np.subtract(y, z))

    def dzz(self, y, z):
        return self.d2ell(np.subtract(y, z))

    def residual_prox(self, c, V):
        """Solve r + V l'(r) = c for r by safeguarded Newton."""
        c = np.asarray(c, dtype=float)
        lo = np.minimum(c, 0.0)
        hi = np.maximum(c, 0.0)
        r = c / (1.0 + V * self.d2ell(np.zeros_like(c)))
        r = np.clip(r, lo, hi)
        for _ in range(self.newton_iter):
            F = r + V * self.dell(r) - c
            pos = F > 0
            hi = np.where(pos, r, hi)
            lo = np.where(pos, lo, r)
            J = 1.0 + V * self.d2ell(r)
            with np.errstate(divide="ignore", invalid="ignore"):
                r_new = r - F / J
            bad = ~np.isfinite(r_new) | (r_new < lo) | (r_new > hi) | (J <= 0)
            r_new = np.where(bad, 0.5 * (lo + hi), r_new)
            done = np.abs(r_new - r) <= self.newton_tol * (1.0 + np.abs(r))
            r = r_new
            if np.all(done | (hi - lo <= self.newton_tol * (1.0 + np.abs(r)))):
                break
        return r

    def residual_map(self, c, V):
        """Proximal residual e(c) and its derivative, with prox(omega, y) = y - e(y - omega)."""
        self._check(V)
        e = self.residual_prox(c, V)
        return e, 1.0 / (1.0 + V * self.d2ell(e))

    def prox(self, omega, y, V):
        self._check(V)
        y = np.asarray(y, dtype=float)
        r = self.residual_prox(y - np.asarray(omega, dtype=float), V)
        return y - r


@dataclass(frozen=True, eq=False, repr=False)
class L2Loss(ResidualLoss):
    kind = "l2"
    closed_form = True

    def ell(self, r):
        return 0.5 * np.square(r)

    def dell(self, r):
        return np.asarray(r, dtype=float)

    def d2ell(self, r):
        return np.ones_like(np.asarray(r, dtype=float))

    def residual_prox(self, c, V):
        return np.asarray(c, dtype=float) / (1.0 + V)

    def prox(self, omega, y, V):
        self._check(V)
        return (np.asarray(omega, dtype=float) + V * np.asarray(y, dtype=float)) / (1.0 + V)

    def dprox(self, omega, y, V):
        return np.broadcast_to(1.0 / (1.0 + V), np.broadcast(omega, y).shape).astype(float)


@dataclass(frozen=True, eq=False, repr=False)
class ZeroLoss(ResidualLoss):
    kind = "zero"
    closed_form = True
    pl_order = 1

    def ell(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    dell = ell
    d2ell = ell

    def prox(self, omega, y, V):
        self._check(V)
        return np.broadcast_to(np.asarray(omega, dtype=float), np.broadcast(omega, y).shape).copy()

    def dprox(self, omega, y, V):
        return np.ones(np.broadcast(omega, y).shape)


@dataclass(frozen=True, eq=False, repr=False)
class HuberLoss(ResidualLoss):
    xi: float = 1.0
    kind = "huber"
    closed_form = True
    pl_order = 1

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError("Huber threshold xi must be positive")

    def params(self):
        return {"xi": float(self.xi)}

    def ell(self, r):
        a = np.abs(r)
        return np.where(a <= self.xi, 0.5 * a * a, self.xi * a - 0.5 * self.xi**2)

    def dell(self, r):
        return np.clip(r, -self.xi, self.xi)

    def d2ell(self, r):
        return (np.abs(r) <= self.xi).astype(float)

    def residual_prox(self, c, V):
        c = np.asarray(c, dtype=float)
        inner = np.abs(c) <= self.xi * (1.0 + V)
        return np.where(inner, c / (1.0 + V), c - V * self.xi * np.sign(c))

    def residual_breaks(self, V):
        return (-self.xi * (1.0 + V), self.xi * (1.0 + V))

    def prox(self, omega, y, V):
        self._check(V)
        y = np.asarray(y, dtype=float)
        return y - self.residual_prox(y - np.asarray(omega, dtype=float), V)

    def dprox(self, omega, y, V):
        c = np.asarray(y, dtype=float) - np.asarray(omega, dtype=float)
        return np.where(np.abs(c) <= self.xi * (1.0 + V), 1.0 / (1.0 + V), 1.0)


@dataclass(frozen=True, eq=False, repr=False)
class TukeyLoss(ResidualLoss):
    """Tukey biweight with a cubic tail varrho * (|r| - xi)^3 beyond xi."""

    xi: float = 1.0
    varrho: float = 1e-2
    kind = "tukey"
    modulus = 1.25
    pl_order = 3

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError("Tukey threshold xi must be positive")
        if not self.varrho > 0:
            raise ValueError("Tukey tail coefficient varrho must be positive")

    def params(self):
        return {"xi": float(self.xi), "varrho": float(self.varrho)}

    def ell(self, r):
        a = np.abs(r)
        t = np.minimum(a / self.xi, 1.0) ** 2
        core = self.xi**2 / 6.0 * (1.0 - (1.0 - t) ** 3)
        return core + self.varrho * np.maximum(a - self.xi, 0.0) ** 3

    def dell(self, r):
        r = np.asarray(r, dtype=float)
        a = np.abs(r)
        t = np.minimum(a / self.xi, 1.0) ** 2
        core = r * (1.0 - t) ** 2
        tail = 3.0 * self.varrho * np.maximum(a - self.xi, 0.0) ** 2 * np.sign(r)
        return core + tail

    def d2ell(self, r):
        a = np.abs(r)
        t = np.minimum(a / self.xi, 1.0) ** 2
        return (1.0 - t) * (1.0 - 5.0 * t) + 6.0 * self.varrho * np.maximum(a - self.xi, 0.0)

    def residual_breaks(self, V):
        return (-self.xi, self.xi)

    def stationary_points(self, y):
        s = self.xi * np.sqrt(0.6)
        return [y - s, y + s, y - self.xi, y + self.xi]


@dataclass(frozen=True, eq=False, repr=False)
class CauchyLoss(ResidualLoss):
    xi: float = 1.0
    kind = "cauchy"
    modulus = 8.0
    pl_order = 1

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError("Cauchy scale xi must be positive")

    def params(self):
        return {"xi": float(self.xi)}

    def ell(self, r):
        return 0.5 * self.xi**2 * np.log1p(np.square(r) / self.xi**2)

    def dell(self, r):
        r = np.asarray(r, dtype=float)
        return r / (1.0 + r * r / self.xi**2)

    def d2ell(self, r):
        t = np.square(r) / self.xi**2
        return (1.0 - t) / (1.0 + t) ** 2

    def stationary_points(self, y):
        s = self.xi * np.sqrt(3.0)
        return [y - s, y + s]


@dataclass(frozen=True, eq=False, repr=False)
class SpectralQuadratic(LossSpec):
    """L(y, z) = T(y) z^2 for a bounded preprocessing T with T <= t_max."""

    transform: Callable = field(default=lambda y: np.zeros_like(np.asarray(y, float)))
    t_max: float = 0.0
    t_min: float = 0.0
    name: str = "custom"
    #: labels at which T is not smooth
    label_breaks: tuple = ()
    kind = "spectral"
    closed_form = True

    def __post_init__(self):
        if self.t_min > self.t_max:
            raise ValueError("t_min must not exceed t_max")

    @property
    def modulus(self):  # type: ignore[override]
        return np.inf if self.t_min >= 0 else 1.0 / (2.0 * -self.t_min)

    @property
    def lower_bound(self):  # type: ignore[override]
        return 0.0 if self.t_min >= 0 else -np.inf

    def params(self):
        return {"transform": self.name, "t_min": float(self.t_min), "t_max": float(self.t_max)}

    def T(self, y):
        return np.asarray(self.transform(np.asarray(y, dtype=float)), dtype=float)

    def value(self, y, z):
        return self.T(y) * np.square(z)

    def dz(self, y, z):
        return 2.0 * self.T(y) * np.asarray(z, dtype=float)

    def dzz(self, y, z):
        return np.broadcast_to(2.0 * self.T(y), np.broadcast(y, z).shape)

    def prox(self, omega, y, V):
        self._check(V)
        return np.asarray(omega, dtype=float) / (1.0 + 2.0 * V * self.T(y))

    def dprox(self, omega, y, V):
        return np.broadcast_to(1.0 / (1.0 + 2.0 * V * self.T(y)), np.broadcast(omega, y).shape)


def make_loss(kind: str, **params) -> LossSpec:
    kinds = {"l2": L2Loss, "huber": HuberLoss, "tukey": TukeyLoss, "cauchy": CauchyLoss, "zero": ZeroLoss}
    try:
        cls = kinds[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {sorted(kinds)}") from None
    return cls(**params)


# ---------------------------------------------------------------------------
# Regularizers


class RegSpec:
    kind: str = "abstract"
    modulus: float = np.inf
    lower_bound: float = 0.0
    quadratic_growth: tuple | None = None
    closed_form: bool = False

    def value(self, w):
        raise NotImplementedError

    def dw(self, w):
        raise NotImplementedError

    def prox(self, u, V):
        raise NotImplementedError

    def dprox(self, u, V):
        return fd_derivative(lambda x: self.prox(x, V), u)

    def params(self) -> dict:
        return {}

    def describe(self) -> dict:
        return {"kind": self.kind, **self.params()}

    def _check(self, V):
        if np.any(np.asarray(V) < 0):
            raise ValueError("scaling V must be nonnegative")
        if np.any(np.asarray(V) >= self.modulus):
            raise ModulusViolation(f"V={np.max(V):.6g} reaches the regularizer modulus {self.modulus:.6g}")


@dataclass(frozen=True)
class L2Reg(RegSpec):
    """R(w) = lam * w^2 / 2; a negative lam is weakly convex."""

    lam: float = 0.0
    kind = "l2"
    closed_form = True

    @property
    def modulus(self):  # type: ignore[override]
        return np.inf if self.lam >= 0 else 1.0 / -self.lam

    @property
    def lower_bound(self):  # type: ignore[override]
        return 0.0 if self.lam >= 0 else -np.inf

    @property
    def quadratic_growth(self):  # type: ignore[override]
        return (self.lam / 2.0, 0.0) if self.lam > 0 else None

    def params(self):
        return {"lam": float(self.lam)}

    def value(self, w):
        return 0.5 * self.lam * np.square(w)

    def dw(self, w):
        return self.lam * np.asarray(w, dtype=float)

    def prox(self, u, V):
        self._check(V)
        return np.asarray(u, dtype=float) / (1.0 + V * self.lam)

    def dprox(self, u, V):
        return np.broadcast_to(1.0 / (1.0 + V * self.lam), np.shape(u)).astype(float)


@dataclass(frozen=True)
class CustomReg(RegSpec):
    """User-supplied regularizer with a declared modulus; prox solved numerically."""

    fn: Callable = field(default=lambda w: np.zeros_like(np.asarray(w, float)))
    grad: Callable | None = None
    declared_modulus: float = np.inf
    declared_lower_bound: float = 0.0
    growth: tuple | None = None
    name: str = "custom"
    kind = "custom"

    @property
    def modulus(self):  # type: ignore[override]
        return self.declared_modulus

    @property
    def lower_bound(self):  # type: ignore[override]
        return self.declared_lower_bound

    @property
    def quadratic_growth(self):  # type: ignore[override]
        return self.growth

    def params(self):
        return {"name": self.name}

    def value(self, w):
        return np.asarray(self.fn(np.asarray(w, dtype=float)), dtype=float)

    def dw(self, w):
        if self.grad is not None:
            return np.asarray(self.grad(np.asarray(w, dtype=float)), dtype=float)
        return fd_derivative(self.value, w)

    def prox(self, u, V):
        self._check(V)
        u = np.asarray(u, dtype=float)
        fn = _as_scalar_fn(self.value)
        out = [prox_scalar(fn, float(x), V, modulus=self.modulus, lower_bound=self.lower_bound).z for x in u.ravel()]
        return np.asarray(out).reshape(u.shape)


def make_reg(kind: str, **params) -> RegSpec:
    if kind.lower() == "l2":
        return L2Reg(**params)
    raise ValueError(f"unknown regularizer kind {kind!r}; expected 'l2'")


# ---------------------------------------------------------------------------
# Scalar proximal machinery


@dataclass(frozen=True)
class ProxConfig:
    tol: float = 1e-12
    n_scan: int = 257
    tie_tol: float = 1e-10
    max_expand: int = 60


@dataclass(frozen=True)
class ProxResult:
    z: float
    envelope: float
    multiple: bool = False


def _as_scalar_fn(f):
    return lambda z: float(f(np.asarray(z, dtype=float)))


def _resolve(base, y):
    """Return (scalar function, derivative or None, modulus, lower bound, extra starts)."""
    if isinstance(base, LossSpec):
        fn = lambda z: float(base.value(y, z))  # noqa: E731
        dfn = lambda z: float(base.dz(y, z))  # noqa: E731
        starts = [y]
        if hasattr(base, "stationary_points"):
            starts += list(base.stationary_points(y))
        return fn, dfn, base.modulus, base.lower_bound, starts
    if isinstance(base, RegSpec):
        return _as_scalar_fn(base.value), _as_scalar_fn(base.dw), base.modulus, base.lower_bound, [0.0]
    return _as_scalar_fn(base), None, np.inf, None, [0.0]


def prox_scalar(base, omega: float, V: float = 1.0, y: float = 0.0, cfg: ProxConfig = ProxConfig(),
                modulus: float | None = None, lower_bound: float | None = None) -> ProxResult:
    """Global minimizer of z -> V*base(z) + (omega - z)^2/2.

    `base` is a LossSpec (evaluated at label y), a RegSpec, or a plain callable
    whose modulus and lower bound may be declared through the keywords.
    """
    fn, dfn, V0, mu, starts = _resolve(base, y)
    if modulus is not None:
        V0 = modulus
    if lower_bound is not None:
        mu = lower_bound
    if V < 0:
        raise ValueError("scaling V must be nonnegative")
    if V >= V0:
        raise ModulusViolation(f"V={V:.6g} reaches the modulus {V0:.6g}")
    omega = float(omega)
    if V == 0:
        return ProxResult(omega, 0.0, False)
    if getattr(base, "closed_form", False):
        z = float(base.prox(omega, y, V) if isinstance(base, LossSpec) else base.prox(omega, V))
        return ProxResult(z, V * fn(z) + 0.5 * (omega - z) ** 2, False)

    obj = lambda z: V * fn(z) + 0.5 * (omega - z) ** 2  # noqa: E731
    f_omega = obj(omega)
    # any minimizer satisfies (z - omega)^2 / 2 <= V (f(omega) - inf f)
    if mu is not None and np.isfinite(mu):
        radius = np.sqrt(max(2.0 * (f_omega - V * mu), 0.0)) + 1e-12
    else:
        radius = 1.0
        for _ in range(cfg.max_expand):
            if obj(omega - radius) > f_omega and obj(omega + radius) > f_omega:
                break
            radius *= 2.0
        else:
            raise BracketFailure("objective does not grow away from omega")
    lo, hi = omega - radius, omega + radius
    grid = np.concatenate([np.linspace(lo, hi, cfg.n_scan), [omega], [s for s in starts if lo < s < hi]])
    grid = np.unique(grid)
    vals = np.array([obj(z) for z in grid])
    cands = []
    for i in range(len(grid)):
        left = vals[i - 1] if i > 0 else np.inf
        right = vals[i + 1] if i + 1 < len(grid) else np.inf
        if vals[i] <= left and vals[i] <= right:
            a = grid[max(i - 1, 0)]
            b = grid[min(i + 1, len(grid) - 1)]
            if b > a:
                res = optimize.minimize_scalar(obj, bounds=(a, b), method="bounded",
                                               options={"xatol": cfg.tol})
                z, v = (res.x, res.fun) if res.fun <= vals[i] else (grid[i], vals[i])
                if dfn is not None:
                    z, v = _polish(obj, dfn, V, omega, a, b, z, v)
            else:
                z, v = grid[i], vals[i]
            cands.append((v, z))
    best = min(v for v, _ in cands)
    winners = sorted(z for v, z in cands if v <= best + cfg.tie_tol * (1.0 + abs(best)))
    distinct = [winners[0]]
    for z in winners[1:]:
        if z - distinct[-1] > 1e-6:
            distinct.append(z)
    z = distinct[0]
    return ProxResult(float(z), float(obj(z)), len(distinct) > 1)


def _polish(obj, dfn, V, omega, a, b, z, v):
    """Refine a bracketed minimizer as a root of the objective's derivative."""
    grad = lambda x: V * dfn(x) + (x - omega)  # noqa: E731
    ga, gb = grad(a), grad(b)
    if not (ga < 0 < gb):
        return z, v
    zr = optimize.brentq(grad, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    vr = obj(zr)
    return (zr, vr) if vr <= v + 1e-13 * (1 + abs(v)) else (z, v)


def moreau_envelope(base, omega: float, V: float = 1.0, y: float = 0.0, cfg: ProxConfig = ProxConfig()) -> float:
    return prox_scalar(base, omega, V, y, cfg).envelope


def lipschitz_constant(V: float, V0: float) -> float:
    """Lipschitz constant V0 / (V0 - V) of the proximal selection."""
    if not 0 <= V < V0:
        raise ModulusViolation(f"need 0 <= V < V0, got V={V}, V0={V0}")
    if np.isinf(V0):
        return 1.0
    return V0 / (V0 - V)


@dataclass(frozen=True)
class WeakConvexityReport:
    min_curvature: float
    min_second_derivative: float
    passed: bool


def verify_weak_convexity(f, V0: float, grid=None, h: float = FD_STEP) -> WeakConvexityReport:
    """Check that V0 f + z^2/2 is convex on a grid by central differences.

    `f` is a scalar vectorized function, or a LossSpec evaluated at y = 0.
    The default grid spans [-10 xi, 10 xi] with 4001 points.
    """
    if isinstance(f, LossSpec):
        scale = getattr(f, "xi", 1.0)
        loss = f
        f = lambda z: loss.value(0.0, z)  # noqa: E731
    else:
        scale = 1.0
    if grid is None:
        grid = np.linspace(-10 * scale, 10 * scale, 4001)
    z = np.asarray(grid, dtype=float)
    d2 = (f(z + h) - 2.0 * f(z) + f(z - h)) / h**2
    curv = V0 * d2 + 1.0
    mc = float(np.min(curv))
    return WeakConvexityReport(mc, float(np.min(d2)), mc >= -1e-6)


def fd_derivative(fn, x, h: float = FD_STEP):
    x = np.asarray(x, dtype=float)
    return (fn(x + h) - fn(x - h)) / (2.0 * h)


def denoiser_g(omega, y, tau: float, kappa: float, loss: LossSpec):
    """Output denoiser (kappa/tau) (prox_{(tau/kappa) L(y,.)}(omega) - omega)."""
    V = tau / kappa
    return (loss.prox(omega, y, V) - np.asarray(omega, dtype=float)) / V


def denoiser_f(w, eta: float, reg: RegSpec):
    """Input denoiser prox_{R/eta}(w)."""
    return reg.prox(w, 1.0 / eta)
