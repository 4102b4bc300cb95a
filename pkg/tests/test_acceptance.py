"""End-to-end acceptance checks. Each test prints one CRITERION line with its verdict."""
import math
import time

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from glma.cli import TRANSFORMS, cmd_compare, curve_shape, cmd_landscape, load_config, spectral_empirics
from glma.empirics import GdConfig, erm_gd, generate, objective, overlaps
from glma.expect import EpsilonContaminated, GaussianAdditive, SquareLaw
from glma.gamp import Diverged, GampConfig, run, se_fixed_point, state_evolution_run
from glma.prox import (
    CauchyLoss,
    HuberLoss,
    L2Loss,
    L2Reg,
    TukeyLoss,
    lipschitz_constant,
    moreau_envelope,
    prox_scalar,
    verify_weak_convexity,
)
from glma.saddle import ModelSpec, SolverConfig, landscape, replicon, replicon_lhs, solve, spectral_solve

from acceptance_log import verdict
from oracles import grid_prox, ridge_cg, ridge_fixed_point

pytestmark = pytest.mark.acceptance

CATALOG = [L2Loss(), HuberLoss(1.0), TukeyLoss(1.5), CauchyLoss(1.0)]
RIDGE = ModelSpec(2.0, L2Loss(), L2Reg(0.1), GaussianAdditive(1.0))
HUBER = ModelSpec(2.0, HuberLoss(1.5), L2Reg(0.5), EpsilonContaminated(0.1, 1.0, 1.0))
SHELL = ModelSpec(10.0, HuberLoss(1.0), L2Reg(0.0), EpsilonContaminated(0.3, 1.0, 5.0), a=1.0, b=1.0)
LAM_BARRIER = -1.735


def _mean_sd(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1))


def test_criterion_01_prox_calculus():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_lip, worst_env, worst_grid = 0.0, 0.0, 0.0
    for loss in CATALOG:
        V0 = loss.modulus
        # 20 step sizes times 500 pairs
        for V in rng.uniform(0.02, 0.98, 20) * (V0 if np.isfinite(V0) else 5.0):
            w1, w2 = rng.normal(0, 5, 500), rng.normal(0, 5, 500)
            y = rng.normal(0, 2, 500)
            p1, p2 = loss.prox(w1, y, V), loss.prox(w2, y, V)
            L = lipschitz_constant(V, V0)
            worst_lip = max(worst_lip, float(np.max(np.abs(p1 - p2) - L * np.abs(w1 - w2))))
        for _ in range(50):
            V = rng.uniform(0.02, 0.98) * (V0 if np.isfinite(V0) else 5.0)
            w, y, h = rng.normal(0, 4), rng.normal(0, 2), 1e-5
            fd = (moreau_envelope(loss, w + h, V, y) - moreau_envelope(loss, w - h, V, y)) / (2 * h)
            exact = w - prox_scalar(loss, w, V, y).z
            worst_env = max(worst_env, abs(fd - exact) / max(abs(exact), 1e-2))
        for _ in range(10):
            V = rng.uniform(0.02, 0.98) * (V0 if np.isfinite(V0) else 5.0)
            w, y = rng.normal(0, 4), rng.normal(0, 2)
            z_ref, _ = grid_prox(lambda z: loss.value(y, z), w, V, lo=y - 25.0, hi=y + 25.0)
            worst_grid = max(worst_grid, abs(prox_scalar(loss, w, V, y).z - z_ref),
                             abs(float(loss.prox(np.array([w]), y, V)[0]) - z_ref))
    ok = worst_lip <= 1e-6 and worst_env < 1e-4 and worst_grid < 1e-6
    verdict(1, ok, f"Lipschitz excess {worst_lip:.2e} (<=1e-6), envelope derivative rel err {worst_env:.2e} (<1e-4), "
                   f"grid oracle {worst_grid:.2e} (<1e-6), {time.perf_counter() - t0:.1f}s")


def test_criterion_02_moduli():
    tukey_ok = verify_weak_convexity(TukeyLoss(1.5), 1.25)
    tukey_bad = verify_weak_convexity(TukeyLoss(1.5), 1.05 * 1.25)
    cauchy_ok = verify_weak_convexity(CauchyLoss(1.0), 8.0)
    cauchy_bad = verify_weak_convexity(CauchyLoss(1.0), 1.05 * 8.0)
    ok = (tukey_ok.passed and cauchy_ok.passed and not tukey_bad.passed and not cauchy_bad.passed
          and abs(tukey_ok.min_second_derivative + 0.8) < 1e-3
          and abs(cauchy_ok.min_second_derivative + 0.125) < 1e-3)
    verdict(2, ok, f"Tukey V0=5/4 passed={tukey_ok.passed}, 1.05x passed={tukey_bad.passed}, "
                   f"min L''={tukey_ok.min_second_derivative:.6f}; Cauchy V0=8 passed={cauchy_ok.passed}, "
                   f"1.05x passed={cauchy_bad.passed}, min L''={cauchy_ok.min_second_derivative:.6f}")


def test_criterion_03_quadratic_oracle():
    t0 = time.perf_counter()
    sol = solve(RIDGE, SolverConfig(tol=1e-10))
    ref = ridge_fixed_point(2.0, 0.1, 1.0)
    p = sol.params
    coord = max(abs(getattr(p, k) - ref[k]) for k in ("m", "q", "tau", "kappa", "nu", "eta"))
    ms, qs = [], []
    for seed in range(10):
        data = generate(RIDGE, 4000, seed)
        o = overlaps(ridge_cg(data.X, data.y, 0.1), data.teacher)
        ms.append(o["m"])
        qs.append(o["q"])
    (m_mean, m_sd), (q_mean, q_sd) = _mean_sd(ms), _mean_sd(qs)
    m_se, q_se = m_sd / math.sqrt(10), q_sd / math.sqrt(10)
    ok = coord < 1e-6 and abs(m_mean - p.m) < 3 * m_se and abs(q_mean - p.q) < 3 * q_se
    verdict(3, ok, f"closed form max coord err {coord:.2e} (<1e-6); ERM m {m_mean:.5f}+-{m_se:.5f} vs {p.m:.5f}, "
                   f"q {q_mean:.5f}+-{q_se:.5f} vs {p.q:.5f} (3 SE), {time.perf_counter() - t0:.1f}s")


def test_criterion_04_optimal_error_ordering(tmp_path):
    t0 = time.perf_counter()
    cfg = load_config("configs/compare.toml", "compare", seed=0, out=str(tmp_path))
    _, records = cmd_compare(cfg)
    by = {}
    for r in records:
        by.setdefault(r.extra["alpha"], {})[r.extra["loss"]] = r
    ordered, bad_alpha, covered, total = 0, [], 0, 0
    for alpha, recs in sorted(by.items()):
        err = {k: v.observables["error"] for k, v in recs.items()}
        if err["tukey"] < err["huber"] < err["l2"]:
            ordered += 1
        else:
            bad_alpha.append(f"{alpha:.3g}")
        for r in recs.values():
            total += 1
            covered += abs(r.observables["error"] - r.extra["erm_mean"]) <= 3 * r.extra["erm_se"]
    ok = ordered == len(by) and covered >= 0.9 * total
    verdict(4, ok, f"ordering Tukey<Huber<L2 at {ordered}/{len(by)} alphas (unordered at {bad_alpha}); "
                   f"theory within 3 SE of ERM at {covered}/{total} points (>=90%), {time.perf_counter() - t0:.0f}s")


@pytest.fixture(scope="module")
def shell_landscape(tmp_path_factory):
    t0 = time.perf_counter()
    cfg = load_config("configs/landscape.toml", "landscape", out=str(tmp_path_factory.mktemp("landscape")))
    _, (rows, summary) = cmd_landscape(cfg)
    return rows, summary, time.perf_counter() - t0


def test_criterion_05_landscape_shapes(shell_landscape):
    _, summary, elapsed = shell_landscape
    c = summary["curves"]
    shape = {lam: c[lam] for lam in ("1.0", "0.0", "-1.735", "-2.1")}
    unimodal = all(len(shape[k]["local_min"]) == 1 and not shape[k]["local_max"] for k in ("1.0", "0.0"))
    structured = len(shape["-1.735"]["local_min"]) >= 1 and len(shape["-1.735"]["local_max"]) >= 1
    none_below = not shape["-2.1"]["local_min"]
    lam_c = summary.get("lambda_c")
    ok = unimodal and structured and none_below and lam_c is not None and -2.1 < lam_c < -1.735
    verdict(5, ok, f"unimodal at 1,0: {unimodal}; -1.735 min {shape['-1.735']['local_min']} max "
                   f"{shape['-1.735']['local_max']}; -2.1 minima {shape['-2.1']['local_min']}; "
                   f"lambda_c {lam_c}; {elapsed:.0f}s")


def _refined_extrema(lam):
    """Local min and max of h(q) + lam q / 2, refined from a coarse scan."""
    cfg = SolverConfig(tol=1e-10)
    f = lambda q: landscape(SHELL, [q], cfg)[0].curve(lam)  # noqa: E731
    grid = np.linspace(2.0, 6.0, 41)
    shape = curve_shape(grid, [f(q) for q in grid])
    step = grid[1] - grid[0]
    q_min, q_max = shape["local_min"][0], shape["local_max"][0]
    q_min = minimize_scalar(f, bounds=(q_min - step, q_min + step), method="bounded", options={"xatol": 1e-4}).x
    q_max = minimize_scalar(lambda q: -f(q), bounds=(q_max - step, q_max + step), method="bounded",
                            options={"xatol": 1e-4}).x
    return float(q_min), float(q_max)


def test_criterion_06_gd_trajectories():
    t0 = time.perf_counter()
    q_min, q_max = _refined_extrema(LAM_BARRIER)
    reg = L2Reg(LAM_BARRIER)
    gd = GdConfig(lr=0.05, max_steps=20000)
    below, above = [], []
    for seed in range(5):
        data = generate(SHELL, 1000, seed)
        for q0 in (0.25 * q_max, 0.75 * q_max):
            tr = erm_gd(data, SHELL.loss, reg, q0, gd, seed=seed)
            below.append((seed, q0, tr.status, tr.final_q))
        for q0 in (2.0 * q_max, 4.0 * q_max):
            tr = erm_gd(data, SHELL.loss, reg, q0, gd, seed=seed)
            above.append((seed, q0, tr.status, tr.final_q))
    conv = [b for b in below if b[2] == "converged" and abs(b[3] - q_min) / q_min < 0.05]
    div = [a for a in above if a[2] == "diverged"]
    plateaus = sorted({round(b[3], 3) for b in below if b[2] == "converged"})
    ok = len(conv) == len(below) and len(div) == len(above)
    verdict(6, ok, f"landscape local min q={q_min:.4f}, local max q={q_max:.4f}; below: {len(conv)}/{len(below)} "
                   f"runs within 5% (plateaus {plateaus}, diverged {sum(b[2] == 'diverged' for b in below)}); "
                   f"above: {len(div)}/{len(above)} diverged; {time.perf_counter() - t0:.0f}s")


@pytest.fixture(scope="module")
def solutions():
    return {"ridge": solve(RIDGE, SolverConfig(tol=1e-10)), "huber": solve(HUBER, SolverConfig(tol=1e-10))}


@pytest.fixture(scope="module")
def gamp_runs(solutions):
    """Final overlaps, energy and contraction of GAMP for each setting, dimension and seed."""
    t0 = time.perf_counter()
    out = {}
    for name, sol in solutions.items():
        model = sol.model
        for d in (500, 1000, 2000, 4000):
            for seed in range(10):
                data = generate(model, d, seed)
                r = run(data, sol, model.loss, model.reg, GampConfig(eps_stop=1e-8, max_t=500), seed=seed)
                out[name, d, seed] = dict(m=r.m[-1], q=r.q[-1], converged=r.converged,
                                          A=objective(data, r.w_hat, model.loss, model.reg),
                                          rate=r.contraction_rate())
    return out, time.perf_counter() - t0


def test_criterion_07_gamp_state_evolution(solutions, gamp_runs):
    runs, elapsed = gamp_runs
    t0 = time.perf_counter()
    stat, match, contract = 0.0, [], []
    for name, sol in solutions.items():
        fp = se_fixed_point(sol)
        for r in state_evolution_run(sol.model, sol, 50)[1:]:
            stat = max(stat, abs(r.beta_t - fp.beta_t), abs(r.omega_tt - fp.omega_tt),
                       abs(r.mu_t - fp.mu_t), abs(r.sigma_tt - fp.sigma_tt))
        m_mean, m_sd = _mean_sd([runs[name, 4000, s]["m"] for s in range(10)])
        q_mean, q_sd = _mean_sd([runs[name, 4000, s]["q"] for s in range(10)])
        match.append(abs(m_mean - sol.params.m) <= 3 * m_sd and abs(q_mean - sol.params.q) <= 3 * q_sd
                     and all(runs[name, 4000, s]["converged"] for s in range(10)))
        contract.append(max(runs[name, 4000, s]["rate"] for s in range(10)))
    data = generate(RIDGE, 4000, 0)
    try:
        off = run(data, solutions["ridge"], RIDGE.loss, RIDGE.reg, GampConfig(onsager=False))
        m_sd = _mean_sd([runs["ridge", 4000, s]["m"] for s in range(10)])[1]
        off_fails = not off.converged or abs(off.m[-1] - solutions["ridge"].params.m) > 3 * m_sd
    except Diverged:
        off_fails = True
    ok = stat < 1e-6 and all(match) and all(c < 1 for c in contract) and off_fails
    verdict(7, ok, f"SE drift {stat:.1e} (<1e-6); GAMP vs SE within 3 SD ridge/huber {match}; "
                   f"max contraction rate {contract[0]:.3f}/{contract[1]:.3f} (<1); Onsager-off fails matching "
                   f"{off_fails}; {elapsed + time.perf_counter() - t0:.0f}s")


def test_criterion_08_energy_matching(solutions, gamp_runs):
    runs, _ = gamp_runs
    lines, ok = [], True
    for name, sol in solutions.items():
        E = sol.energy
        gaps = [float(np.mean([abs(runs[name, d, s]["A"] - E) / abs(E) for s in range(10)]))
                for d in (500, 1000, 2000, 4000)]
        signed = [abs(np.mean([runs[name, d, s]["A"] - E for s in range(10)])) / abs(E)
                  for d in (500, 1000, 2000, 4000)]
        mono = all(b <= a for a, b in zip(gaps, gaps[1:]))
        ok &= gaps[-1] < 0.02 and mono
        lines.append(f"{name} mean rel gap " + "/".join(f"{g:.2e}" for g in gaps) + f" non-increasing={mono}"
                     + " (gap of seed mean " + "/".join(f"{g:.1e}" for g in signed) + ")")
    verdict(8, ok, "; ".join(lines) + " (d=500..4000, last <2%)")


def test_criterion_09_spectral():
    t0 = time.perf_counter()
    tr = TRANSFORMS["clipped_inverse"]
    channel = SquareLaw()
    alphas = [0.3, 0.4, 0.5, 0.6, 0.8, 1.0, 1.5, 2.0, 3.0]
    within, amp_ok, detail = 0, [], []
    for alpha in alphas:
        res = spectral_solve(channel, tr.fn, alpha, SolverConfig(), tr.bounds, "clipped_inverse", tr.breaks)
        emp = [spectral_empirics(channel, tr, alpha, 2000, s, res.solution if res.informative else None,
                                 amp=res.informative) for s in range(5)]
        m_mean, m_sd = _mean_sd([e["m"] for e in emp])
        se = m_sd / math.sqrt(5)
        hit = abs(m_mean - res.m) <= 3 * se
        within += hit
        detail.append(f"{alpha:g}:{res.m:.3f}/{m_mean:.3f}+-{se:.3f}{'' if hit else '!'}")
        if res.informative:
            gap = np.mean([abs(e["lambda_amp"] - e["lambda_true"]) / abs(e["lambda_true"]) for e in emp])
            amp_ok.append(bool(gap < 0.01))
    ok = within == len(alphas) and all(amp_ok) and amp_ok
    verdict(9, ok, f"overlap theory/eigh within 3 SE at {within}/{len(alphas)} alphas [{' '.join(detail)}]; "
                   f"lambda_amp within 1% at {sum(amp_ok)}/{len(amp_ok)} informative alphas; "
                   f"{time.perf_counter() - t0:.0f}s")


def test_criterion_10_replicon(solutions):
    a = replicon_lhs(0.5, 0.25, 0.25)
    b = replicon_lhs(20.0, 0.81, 0.81)
    p = solutions["ridge"].params
    rep = replicon(p, RIDGE)
    closed = 2.0 * (p.eta / (p.eta + 0.1)) ** 2 / (1 + p.tau / p.kappa) ** 2
    ok = abs(a - 0.03125) <= 1e-12 and abs(b - 13.122) <= 1e-12 and abs(rep["lhs_unscaled"] - closed) < 1e-6
    verdict(10, ok, f"constant cases {a!r}, {b!r}; ridge lhs {rep['lhs_unscaled']:.12f} vs closed form "
                    f"{closed:.12f} (diff {abs(rep['lhs_unscaled'] - closed):.1e})")
