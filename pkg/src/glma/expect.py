"""Gaussian expectations over the scalar variables of the asymptotic problem.

The teacher preactivation is sqrt(rho) * s with s ~ N(0, 1); the label y is
drawn from an output channel at that preactivation. The student preactivation
is omega = (m / sqrt(rho)) s + sqrt(q - m^2/rho) h with h ~ N(0, 1) independent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_hermitenorm

__all__ = [
    "QuadratureDivergence",
    "QuadSpec",
    "hermite_nodes",
    "ChannelSpec",
    "GaussianAdditive",
    "EpsilonContaminated",
    "Deterministic",
    "SquareLaw",
    "make_channel",
    "TeacherPrior",
    "GaussianPrior",
    "RademacherPrior",
    "make_prior",
    "sample_channel",
    "expect_sh_y",
    "expect_wg",
    "student_field",
    "Nodes",
    "loss_nodes",
    "reg_nodes",
    "Q_CLAMP",
    "panel_nodes",
]

Q_CLAMP = 1e-12


class QuadratureDivergence(RuntimeError):
    """Adaptive refinement exceeded its node budget."""


@dataclass(frozen=True)
class QuadSpec:
    hermite_order: int = 101
    channel_nodes: int | str | None = None  # None: same as hermite_order
    abs_tol: float = 1e-9
    rel_tol: float = 1e-7
    max_channel_nodes: int = 1025
    prune: float = 1e-18

    def __post_init__(self):
        if self.hermite_order < 3 or self.hermite_order % 2 == 0:
            raise ValueError("hermite_order must be odd and at least 3")
        cn = self.channel_nodes
        if cn is not None and cn != "adaptive" and not (isinstance(cn, int) and cn >= 1):
            raise ValueError("channel_nodes must be a positive integer, 'adaptive' or None")

    def doubled(self) -> "QuadSpec":
        return QuadSpec(2 * self.hermite_order + 1, self.channel_nodes, self.abs_tol, self.rel_tol,
                        self.max_channel_nodes, self.prune)


@lru_cache(maxsize=32)
def _hermite(n: int):
    x, w = roots_hermitenorm(n)
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def hermite_nodes(n: int):
    """Nodes and normalized weights for E[f(Z)], Z ~ N(0, 1)."""
    return _hermite(int(n))


def _tensor(n: int, dim: int, prune: float):
    x, w = hermite_nodes(n)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    weights = np.ones_like(grids[0])
    for wg in np.meshgrid(*([w] * dim), indexing="ij"):
        weights = weights * wg
    keep = weights > prune * weights.max()
    return [g[keep] for g in grids], weights[keep]


@lru_cache(maxsize=8)
def _legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def panel_nodes(sd: float, breaks: Sequence[float] = (), per_panel: int = 16, width: float = 0.5,
                span: float = 9.0):
    """Composite Gauss-Legendre rule for E[f(X)], X ~ N(0, sd^2).

    Panels have width at most `width * sd` on [-span sd, span sd] and are split
    at `breaks`, so integrands with kinks at known points converge
    geometrically in `per_panel`.
    """
    if sd <= 0:
        return np.zeros(1), np.ones(1)
    lim = span * sd
    cuts = np.linspace(-lim, lim, int(np.ceil(2 * span / width)) + 1)
    inner = [b for b in breaks if -lim < b < lim]
    cuts = np.unique(np.concatenate([cuts, inner]))
    t, wt = _legendre(per_panel)
    lo, hi = cuts[:-1, None], cuts[1:, None]
    x = 0.5 * (hi - lo) * t[None, :] + 0.5 * (hi + lo)
    w = 0.5 * (hi - lo) * wt[None, :] * np.exp(-0.5 * (x / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
    x, w = x.ravel(), w.ravel()
    return x, w / w.sum()


# ---------------------------------------------------------------------------
# Output channels


class ChannelSpec:
    kind = "abstract"
    #: whether labels are almost surely bounded
    bounded = False

    def sample(self, field, rng: np.random.Generator):
        raise NotImplementedError

    def components(self):
        """Linear-Gaussian mixture [(weight, a, var)] with y = a*field + sqrt(var)*z, or None."""
        return None

    def transform(self, field):
        """Deterministic map field -> y for channels without a linear-Gaussian form."""
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def describe(self) -> dict:
        return {"kind": self.kind, **self.params()}

    def field_breaks(self, label_breaks, rho: float = 1.0):
        """Values of s at which y = transform(sqrt(rho) s) crosses the given labels."""
        return ()


@dataclass(frozen=True)
class GaussianAdditive(ChannelSpec):
    delta: float = 1.0
    kind = "gaussian"

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("noise variance delta must be nonnegative")

    def params(self):
        return {"delta": float(self.delta)}

    def sample(self, field, rng):
        field = np.asarray(field, dtype=float)
        return field + np.sqrt(self.delta) * rng.standard_normal(field.shape)

    def components(self):
        return [(1.0, 1.0, self.delta)]


@dataclass(frozen=True)
class EpsilonContaminated(ChannelSpec):
    """y = field + sqrt(delta) z1 with prob. 1 - eps, y = sqrt(sigma) z2 otherwise."""

    eps: float = 0.1
    delta: float = 1.0
    sigma: float = 1.0
    kind = "contaminated"

    def __post_init__(self):
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError("contamination eps must lie in [0, 1]")
        if self.delta < 0 or self.sigma < 0:
            raise ValueError("noise variances must be nonnegative")

    def params(self):
        return {"eps": float(self.eps), "delta": float(self.delta), "sigma": float(self.sigma)}

    def sample(self, field, rng):
        field = np.asarray(field, dtype=float)
        z1 = rng.standard_normal(field.shape)
        z2 = rng.standard_normal(field.shape)
        outlier = rng.random(field.shape) < self.eps
        return np.where(outlier, np.sqrt(self.sigma) * z2, field + np.sqrt(self.delta) * z1)

    def components(self):
        comps = []
        if self.eps < 1.0:
            comps.append((1.0 - self.eps, 1.0, self.delta))
        if self.eps > 0.0:
            comps.append((self.eps, 0.0, self.sigma))
        return comps


@dataclass(frozen=True)
class Deterministic(ChannelSpec):
    phi: Callable = field(default=lambda t: np.asarray(t, dtype=float))
    name: str = "identity"
    linear: bool = True
    kind = "deterministic"

    def params(self):
        return {"phi": self.name}

    def sample(self, field, rng):
        return self.transform(field)

    def transform(self, field):
        return np.asarray(self.phi(np.asarray(field, dtype=float)), dtype=float)

    def components(self):
        return [(1.0, 1.0, 0.0)] if self.linear else None

    def field_breaks(self, label_breaks, rho=1.0):
        if self.linear:
            return tuple(b / np.sqrt(rho) for b in label_breaks)
        return ()


@dataclass(frozen=True)
class SquareLaw(ChannelSpec):
    kind = "square"

    def sample(self, field, rng):
        return self.transform(field)

    def transform(self, field):
        return np.square(np.asarray(field, dtype=float))

    def field_breaks(self, label_breaks, rho=1.0):
        r = [np.sqrt(b / rho) for b in label_breaks if b > 0]
        return tuple(sorted([-x for x in r] + r))


def make_channel(kind: str, **params) -> ChannelSpec:
    kinds = {"gaussian": GaussianAdditive, "contaminated": EpsilonContaminated, "square": SquareLaw}
    if kind == "identity":
        return Deterministic(**params)
    try:
        return kinds[kind](**params)
    except KeyError:
        raise ValueError(f"unknown channel kind {kind!r}; expected one of {sorted(kinds) + ['identity']}") from None


def sample_channel(channel: ChannelSpec, field, rng: np.random.Generator):
    """One draw of y given the teacher preactivation."""
    return channel.sample(field, rng)


# ---------------------------------------------------------------------------
# Teacher priors


class TeacherPrior:
    kind = "abstract"
    rho: float = 1.0

    def sample(self, d: int, rng: np.random.Generator):
        raise NotImplementedError

    def nodes(self, quad: QuadSpec):
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind, "rho": float(self.rho)}


@dataclass(frozen=True)
class GaussianPrior(TeacherPrior):
    rho: float = 1.0
    kind = "gaussian"

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("teacher second moment rho must be positive")

    def sample(self, d, rng):
        return np.sqrt(self.rho) * rng.standard_normal(d)

    def nodes(self, quad):
        x, w = hermite_nodes(quad.hermite_order)
        return np.sqrt(self.rho) * x, w


@dataclass(frozen=True)
class RademacherPrior(TeacherPrior):
    rho: float = 1.0
    kind = "rademacher"

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("teacher second moment rho must be positive")

    def sample(self, d, rng):
        return np.sqrt(self.rho) * rng.choice([-1.0, 1.0], size=d)

    def nodes(self, quad):
        r = np.sqrt(self.rho)
        return np.array([-r, r]), np.array([0.5, 0.5])


def make_prior(kind: str, rho: float = 1.0) -> TeacherPrior:
    if kind == "gaussian":
        return GaussianPrior(rho)
    if kind == "rademacher":
        return RademacherPrior(rho)
    raise ValueError(f"unknown prior kind {kind!r}; expected 'gaussian' or 'rademacher'")


# ---------------------------------------------------------------------------
# Generic expectations


def student_field(m: float, q: float, rho: float, s, h):
    """omega = (m/sqrt(rho)) s + sqrt(q - m^2/rho) h, with the variance clamped."""
    Q = max(q - m * m / rho, Q_CLAMP)
    return m / np.sqrt(rho) * np.asarray(s) + np.sqrt(Q) * np.asarray(h)


def _channel_layer(fn, channel, quad, rho, n_ch):
    (s, h), wsh = _tensor(quad.hermite_order, 2, quad.prune)
    field = np.sqrt(rho) * s
    comps = channel.components()
    if comps is None:
        return float(np.sum(wsh * fn(s, h, channel.transform(field))))
    z, wz = hermite_nodes(n_ch)
    total = 0.0
    for weight, a, var in comps:
        if var == 0:
            total += weight * float(np.sum(wsh * fn(s, h, a * field)))
            continue
        y = a * field[:, None] + np.sqrt(var) * z[None, :]
        vals = fn(s[:, None], h[:, None], y)
        total += weight * float(np.sum(wsh[:, None] * wz[None, :] * vals))
    return total


def expect_sh_y(fn: Callable, channel: ChannelSpec, quad: QuadSpec = QuadSpec(), rho: float = 1.0) -> float:
    """E[fn(s, h, y)] with s, h ~ N(0,1) independent and y ~ channel(sqrt(rho) s)."""
    cn = quad.channel_nodes
    if cn != "adaptive":
        return _channel_layer(fn, channel, quad, rho, quad.hermite_order if cn is None else cn)
    n = 21
    prev = _channel_layer(fn, channel, quad, rho, n)
    while True:
        n = 2 * n + 1
        if n > quad.max_channel_nodes:
            raise QuadratureDivergence(f"channel layer did not settle within {quad.max_channel_nodes} nodes")
        cur = _channel_layer(fn, channel, quad, rho, n)
        if abs(cur - prev) <= quad.abs_tol + quad.rel_tol * abs(cur):
            return cur
        prev = cur


def expect_wg(fn: Callable, prior: TeacherPrior, quad: QuadSpec = QuadSpec()) -> float:
    """E[fn(w, g)] with w ~ prior and g ~ N(0,1) independent."""
    wv, ww = prior.nodes(quad)
    g, wg = hermite_nodes(quad.hermite_order)
    vals = fn(wv[:, None], g[None, :])
    return float(np.sum(ww[:, None] * wg[None, :] * vals))


# ---------------------------------------------------------------------------
# Reduced node sets for the saddle-point integrands


@dataclass
class Nodes:
    """Weighted nodes carrying the arguments of a denoiser and the conditional
    means of the Gaussian variables that enter integrands linearly.

    Loss-side nodes for linear channels also carry the distinct residuals
    y - omega (`r_values`) and the map from nodes to them (`r_index`).
    """

    weight: np.ndarray
    arg: np.ndarray  # omega (loss side) or u (regularizer side)
    y: np.ndarray  # labels (loss side) or teacher coordinate (regularizer side)
    a: np.ndarray  # E[s | arg, y] or E[w | arg]
    b: np.ndarray  # E[h | arg, y] or E[g | arg]
    clamped: bool = False
    r_values: np.ndarray | None = None
    r_index: np.ndarray | None = None
    a2: np.ndarray | None = None  # E[s^2 | omega, y] on the loss side

    def mean(self, values) -> float:
        return float(np.dot(self.weight, values))


def _per_panel(quad: QuadSpec) -> int:
    return max(8, quad.hermite_order // 6)


def loss_nodes(m: float, q: float, rho: float, channel: ChannelSpec, quad: QuadSpec = QuadSpec(),
               resid_breaks: Sequence[float] = (), label_breaks: Sequence[float] = ()) -> Nodes:
    """Nodes over (omega, y) with E[s | omega, y] and E[h | omega, y].

    Valid for integrands of the form (c0 + c1 s + c2 h) F(omega, y). For linear
    channels the pair is parametrized by the residual r = y - omega and an
    independent complement; r is integrated piecewise between `resid_breaks`.
    For other channels s is integrated piecewise between the field values at
    which y crosses `label_breaks`.
    """
    Qraw = q - m * m / rho
    clamped = Qraw < Q_CLAMP
    Q = max(Qraw, Q_CLAMP)
    comps = channel.components()
    n = quad.hermite_order
    pp = _per_panel(quad)
    if comps is None:
        s, ws = panel_nodes(1.0, channel.field_breaks(label_breaks, rho), pp)
        h, wh = hermite_nodes(n)
        S, H = np.repeat(s, h.size), np.tile(h, s.size)
        w = np.repeat(ws, h.size) * np.tile(wh, s.size)
        keep = w > quad.prune * w.max()
        S, H, w = S[keep], H[keep], w[keep]
        omega = m / np.sqrt(rho) * S + np.sqrt(Q) * H
        y = channel.transform(np.sqrt(rho) * S)
        return Nodes(w / w.sum(), omega, y, S, H, clamped, a2=S * S)
    parts = []
    r_all, idx_all = [], []
    offset = 0
    t, wt = hermite_nodes(n)
    sr = np.sqrt(rho)
    for weight, a, var in comps:
        # coefficient vectors on the independent standard normals (s, h, z)
        om = np.array([m / sr, np.sqrt(Q), 0.0])
        rv = np.array([a * sr, 0.0, np.sqrt(var)]) - om
        sd_r = float(np.linalg.norm(rv))
        if sd_r > 1e-14 * (1.0 + float(np.linalg.norm(om))):
            e_r = rv / sd_r
            r, wr = panel_nodes(1.0, tuple(b / sd_r for b in resid_breaks), pp)
        else:
            sd_r, e_r = 0.0, np.zeros(3)
            r, wr = np.zeros(1), np.ones(1)
        tv = om - (om @ e_r) * e_r
        sd_t = float(np.linalg.norm(tv))
        e_t = tv / sd_t if sd_t > 0 else np.zeros(3)
        idx = np.repeat(np.arange(r.size), t.size)
        T = np.tile(t, r.size)
        w = wr[idx] * np.tile(wt, r.size)
        keep = w > quad.prune * w.max()
        idx, T, w = idx[keep], T[keep], w[keep]
        R = r[idx]
        omega = (om @ e_r) * R + sd_t * T
        y = omega + sd_r * R
        cs = e_r[0] * R + e_t[0] * T
        ch = e_r[1] * R + e_t[1] * T
        var_s = max(1.0 - e_r[0] ** 2 - e_t[0] ** 2, 0.0)
        parts.append((weight * w, omega, y, cs, ch, cs**2 + var_s))
        r_all.append(sd_r * r)
        idx_all.append(idx + offset)
        offset += r.size
    w, omega, y, a, b, a2 = [np.concatenate(p) for p in zip(*parts)]
    return Nodes(w, omega, y, a, b, clamped, np.concatenate(r_all), np.concatenate(idx_all), a2)


def reg_nodes(nu: float, kappa: float, eta: float, prior: TeacherPrior, quad: QuadSpec = QuadSpec()) -> Nodes:
    """Nodes over u = (nu w + kappa g) / eta with E[w | u] and E[g | u].

    Valid for integrands of the form (c0 + c1 w + c2 g) F(u).
    """
    g, wg = hermite_nodes(quad.hermite_order)
    rho = prior.rho
    if isinstance(prior, GaussianPrior):
        var = (nu * nu * rho + kappa * kappa) / eta**2
        if var <= 0:
            z = np.zeros(1)
            return Nodes(np.ones(1), z, z, z, z)
        sd = np.sqrt(var)
        u = sd * g
        cw = nu * rho / eta / var
        cg = kappa / eta / var
        return Nodes(wg.copy(), u, cw * u, cw * u, cg * u)
    wv, ww = prior.nodes(quad)
    W = np.repeat(wv, g.size)
    G = np.tile(g, wv.size)
    weight = np.repeat(ww, g.size) * np.tile(wg, wv.size)
    u = (nu * W + kappa * G) / eta
    return Nodes(weight, u, W, W, G)
