"""Synthetic teacher-student data and finite-dimensional empirical risk minimization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .prox import LossSpec, RegSpec
from .saddle import ModelSpec

__all__ = [
    "Dataset",
    "generate",
    "objective",
    "gradient",
    "GdConfig",
    "GdTrajectory",
    "erm_gd",
    "erm_minimize",
    "overlaps",
    "LengthMismatch",
]


class LengthMismatch(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    teacher: np.ndarray
    seed: int
    model: ModelSpec
    rescaled: bool = True

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def field(self) -> np.ndarray:
        return self.X @ self.teacher / np.sqrt(self.d)


def generate(model: ModelSpec, d: int, seed: int, rescale: bool = True) -> Dataset:
    """Gaussian design, teacher from the prior, labels from the channel.

    With `rescale` the teacher is normalized to |w|^2/d = rho exactly.
    """
    if d < 1:
        raise ValueError("d must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(model.alpha * d))
    teacher = model.prior.sample(d, rng)
    if rescale:
        nrm = np.linalg.norm(teacher)
        if nrm > 0:
            teacher = teacher * np.sqrt(model.rho * d) / nrm
    X = rng.standard_normal((n, d))
    s = X @ teacher / np.sqrt(d)
    y = model.channel.sample(s, rng)
    return Dataset(X, y, teacher, seed, model, rescale)


def objective(data: Dataset, w, loss: LossSpec, reg: RegSpec) -> float:
    """A_d(w) = (1/d) [sum_mu L(y_mu, x_mu.w/sqrt(d)) + sum_i R(w_i)]."""
    z = data.X @ w / np.sqrt(data.d)
    return float((np.sum(loss.value(data.y, z)) + np.sum(reg.value(w))) / data.d)


def gradient(data: Dataset, w, loss: LossSpec, reg: RegSpec) -> np.ndarray:
    """Gradient of d * A_d(w)."""
    z = data.X @ w / np.sqrt(data.d)
    return data.X.T @ loss.dz(data.y, z) / np.sqrt(data.d) + reg.dw(w)


@dataclass(frozen=True)
class GdConfig:
    lr: float | None = None  # default 0.05 / alpha
    max_steps: int = 20000
    grad_tol: float | None = None  # default 1e-7 * d, on the gradient of d * A_d
    diverge_norm: float = 1e6  # on |w|^2 / d
    diverge_objective: float = -1e8
    record_every: int = 1


@dataclass
class GdTrajectory:
    q: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    status: str = "max_steps"
    steps: int = 0
    w: np.ndarray | None = None

    @property
    def final_q(self) -> float:
        return self.q[-1]


def erm_gd(data: Dataset, loss: LossSpec, reg: RegSpec, init_norm: float, cfg: GdConfig = GdConfig(),
           seed: int = 0, w0: np.ndarray | None = None) -> GdTrajectory:
    """Plain gradient descent with step halving on objective increase.

    The start is uniform on the sphere |w|^2 = init_norm * d unless `w0` is given.
    """
    d = data.d
    rng = np.random.default_rng(seed)
    if w0 is None:
        w = rng.standard_normal(d)
        w *= np.sqrt(init_norm * d) / np.linalg.norm(w)
    else:
        w = np.array(w0, dtype=float)
    lr = cfg.lr if cfg.lr is not None else 0.05 / max(data.model.alpha, 1e-12)
    gtol = cfg.grad_tol if cfg.grad_tol is not None else 1e-7 * d
    traj = GdTrajectory()
    F = objective(data, w, loss, reg) * d
    for step in range(cfg.max_steps + 1):
        g = gradient(data, w, loss, reg)
        gn = float(np.linalg.norm(g))
        q = float(w @ w / d)
        if step % cfg.record_every == 0:
            traj.q.append(q)
            traj.objective.append(F / d)
            traj.grad_norm.append(gn)
        if not np.isfinite(F) or q > cfg.diverge_norm or F / d < cfg.diverge_objective:
            traj.status = "diverged"
            break
        if gn < gtol:
            traj.status = "converged"
            break
        if step == cfg.max_steps:
            break
        while True:
            w_new = w - lr * g
            F_new = objective(data, w_new, loss, reg) * d
            if F_new <= F or lr < 1e-12:
                break
            lr *= 0.5
        w, F = w_new, F_new
        traj.steps = step + 1
    if traj.q[-1] != float(w @ w / d):
        traj.q.append(float(w @ w / d))
        traj.objective.append(F / d)
        traj.grad_norm.append(float(np.linalg.norm(gradient(data, w, loss, reg))))
    traj.w = w
    return traj


def erm_minimize(data: Dataset, loss: LossSpec, reg: RegSpec, w0: np.ndarray | None = None,
                 gtol: float = 1e-9, max_iter: int = 5000) -> np.ndarray:
    """Quasi-Newton (L-BFGS) minimizer of A_d, used where only the endpoint matters."""
    d = data.d
    sq = np.sqrt(d)

    def fg(w):
        z = data.X @ w / sq
        f = (np.sum(loss.value(data.y, z)) + np.sum(reg.value(w))) / d
        g = (data.X.T @ loss.dz(data.y, z) / sq + reg.dw(w)) / d
        return f, g

    x0 = np.zeros(d) if w0 is None else np.asarray(w0, dtype=float)
    res = optimize.minimize(fg, x0, jac=True, method="L-BFGS-B",
                            options={"gtol": gtol / d, "ftol": 1e-15, "maxiter": max_iter, "maxcor": 20})
    return res.x


def overlaps(w_hat, teacher) -> dict:
    w_hat = np.asarray(w_hat, dtype=float)
    teacher = np.asarray(teacher, dtype=float)
    if w_hat.shape != teacher.shape:
        raise LengthMismatch(f"estimate has shape {w_hat.shape}, teacher {teacher.shape}")
    d = teacher.size
    m = float(w_hat @ teacher / d)
    q = float(w_hat @ w_hat / d)
    rho = float(teacher @ teacher / d)
    return {"m": m, "q": q, "rho": rho, "error": rho - 2 * m + q}
