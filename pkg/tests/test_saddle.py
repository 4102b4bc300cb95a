import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glma.expect import Deterministic, EpsilonContaminated, GaussianAdditive, QuadSpec, SquareLaw
from glma.prox import CauchyLoss, HuberLoss, L2Loss, L2Reg, TukeyLoss, ZeroLoss
from glma.saddle import (
    GridTooCoarse,
    ModelSpec,
    OrderParameters,
    SolverConfig,
    critical_lambda,
    energy,
    landscape,
    observables,
    replicon,
    replicon_lhs,
    residuals,
    simplified_energy,
    solve,
    spectral_solve,
    stationary_update,
)

from oracles import ridge_fixed_point, spectral_closed_form

CONTAM = EpsilonContaminated(0.1, 1.0, 1.0)
RIDGE = ModelSpec(2.0, L2Loss(), L2Reg(0.1), GaussianAdditive(1.0))
T_CLIP = lambda y: np.maximum(-1.0, 1.0 - 1.0 / np.maximum(y, 1e-300))  # noqa: E731


@pytest.fixture(scope="module")
def ridge_solution():
    return solve(RIDGE, SolverConfig(tol=1e-10))


@pytest.fixture(scope="module")
def huber_solution():
    return solve(ModelSpec(2.0, HuberLoss(1.5), L2Reg(0.5), CONTAM))


@pytest.fixture(scope="module")
def tukey_solution():
    return solve(ModelSpec(5.0, TukeyLoss(4.0), L2Reg(0.5), CONTAM))


def test_model_validation():
    with pytest.raises(ValueError, match="a <= b"):
        ModelSpec(1.0, L2Loss(), L2Reg(1.0), CONTAM, a=2.0, b=1.0)
    with pytest.raises(ValueError, match="quadratic growth"):
        ModelSpec(1.0, L2Loss(), L2Reg(0.0), CONTAM)
    with pytest.raises(ValueError):
        ModelSpec(-1.0, L2Loss(), L2Reg(1.0), CONTAM)


def test_energy_of_zero_loss_and_regularizer():
    model = ModelSpec(1.0, ZeroLoss(), L2Reg(0.0), GaussianAdditive(1.0), a=0.0, b=10.0)
    p = OrderParameters(0.0, 1.0, 1.0, 2.0, 0.0, 1.0)
    assert energy(p, model) == pytest.approx(-1.5, abs=1e-12)


def test_quadratic_update_matches_hand_derivation():
    # V = 1/2, so eta = kappa = nu = alpha/(1+V) = 4/3 and P_R = (nu w + kappa g)/(eta + lam)
    model = ModelSpec(2.0, L2Loss(), L2Reg(1.0), GaussianAdditive(1.0))
    new = stationary_update(OrderParameters(0.5, 1.0, 0.5, 1.0, 0.5, 1.0), model)
    expected = [4 / 7, 32 / 49, 4 / 7, 4 / 3, 4 / 3, 4 / 3]
    assert np.allclose(new.as_array(), expected, atol=1e-12)


def test_no_data_is_degenerate():
    sol = solve(ModelSpec(0.0, L2Loss(), L2Reg(1.0), CONTAM))
    assert sol.status == "degenerate"
    assert np.all(sol.params.as_array() == 0.0)


def test_ridge_matches_closed_form(ridge_solution):
    ref = ridge_fixed_point(2.0, 0.1, 1.0)
    got = ridge_solution.params
    for k in OrderParameters.NAMES:
        assert getattr(got, k) == pytest.approx(ref[k], abs=1e-6), k


def test_ridge_energy_is_the_asymptotic_risk(ridge_solution):
    ref = ridge_fixed_point(2.0, 0.1, 1.0)
    train = 2.0 * 0.5 * (ref["q"] - 2 * ref["m"] + 2.0) / (1 + ref["V"]) ** 2
    risk = train + 0.5 * 0.1 * ref["q"]
    assert ridge_solution.energy == pytest.approx(risk, abs=1e-8)


@pytest.mark.parametrize("name", ["ridge_solution", "huber_solution", "tukey_solution"])
def test_energy_identity_and_feasibility(name, request):
    sol = request.getfixturevalue(name)
    tol = 1e-5
    assert sol.converged and sol.stable
    assert abs(sol.energy - sol.simplified_energy) < 10 * tol
    assert np.max(np.abs(sol.residuals)) < 10 * tol
    p = sol.params
    assert p.q >= p.m**2 - 1e-10 and p.tau > 0 and p.eta > 0 and p.kappa >= 0
    assert p.V < sol.model.loss.modulus and 1.0 / p.eta < sol.model.reg.modulus


def test_huber_fixed_point_residuals(huber_solution):
    res = residuals(huber_solution.params, huber_solution.model)
    assert np.max(np.abs(res)) < 1e-5


def test_noiseless_interpolation_recovers_teacher():
    sol = solve(ModelSpec(2.0, L2Loss(), L2Reg(1e-6), Deterministic()), SolverConfig(tol=1e-10))
    assert sol.error < 1e-3


def test_observables_examples():
    assert observables(OrderParameters(1, 1, 1, 1, 1, 1))["error"] == 0.0
    assert observables(OrderParameters(0, 1, 1, 1, 1, 1))["error"] == 2.0


def test_replicon_constant_derivatives():
    assert replicon_lhs(0.5, 0.25, 0.25) == pytest.approx(0.03125, abs=1e-12)
    assert replicon_lhs(20.0, 0.81, 0.81) == pytest.approx(13.122, abs=1e-12)


def test_replicon_ridge_closed_form(ridge_solution):
    p = ridge_solution.params
    rep = replicon(p, RIDGE)
    closed = 2.0 * (p.eta / (p.eta + 0.1)) ** 2 / (1 + p.V) ** 2
    assert rep["lhs_unscaled"] == pytest.approx(closed, abs=1e-6)
    assert rep["lhs"] == pytest.approx(closed / p.eta**2, abs=1e-6)
    assert rep["stable"]


def test_ridgeless_replicon_is_inverse_alpha():
    # at lam -> 0 and alpha > 1: eta = alpha - 1, f' = 1, dg = -1/(1+V) with V = 1/(alpha - 1)
    sol = solve(ModelSpec(5.0, L2Loss(), L2Reg(1e-9), GaussianAdditive(1.0)), SolverConfig(tol=1e-10))
    assert sol.replicon_lhs == pytest.approx(0.2, abs=1e-6)


@pytest.mark.parametrize("loss", [HuberLoss(1.5), TukeyLoss(3.0), CauchyLoss(1.0)], ids=repr)
def test_scale_consistency_under_doubled_order(loss):
    model = ModelSpec(2.0, loss, L2Reg(0.5), CONTAM)
    a = solve(model, SolverConfig(tol=1e-10, n_restarts=1))
    b = solve(model, SolverConfig(tol=1e-10, n_restarts=1, init=a.params, quad=QuadSpec().doubled()))
    assert np.max(np.abs(a.params.as_array() - b.params.as_array())) < 1e-5


def test_restarts_are_seeded():
    model = ModelSpec(5.0, TukeyLoss(4.0), L2Reg(0.5), CONTAM)
    a = solve(model, SolverConfig(seed=3, n_restarts=3))
    b = solve(model, SolverConfig(seed=3, n_restarts=3))
    assert np.array_equal(a.params.as_array(), b.params.as_array())


def _landscape_model(alpha, loss, channel):
    return ModelSpec(alpha, loss, L2Reg(0.0), channel, a=1.0, b=1.0)


@pytest.mark.parametrize("lam", [-4.5, -3.0, -1.0, 0.0, 1.0])
def test_square_loss_landscape_matches_ridge_path(lam):
    # the ridge solution at lam sits where h'(q) = -lam/2
    ref = ridge_fixed_point(10.0, lam, 1.0)
    h_ref = 10.0 * 0.5 * (ref["q"] - 2 * ref["m"] + 2.0) / (1 + ref["V"]) ** 2
    row = landscape(_landscape_model(10.0, L2Loss(), GaussianAdditive(1.0)), [ref["q"]])[0]
    assert row.h == pytest.approx(h_ref, abs=1e-4)
    assert row.dh == pytest.approx(-lam / 2, abs=1e-4)


def test_square_loss_landscape_is_convex():
    q = np.linspace(0.2, 5.0, 25)
    rows = landscape(_landscape_model(10.0, L2Loss(), GaussianAdditive(1.0)), q, SolverConfig(tol=1e-10))
    h = np.array([r.h for r in rows])
    assert np.all(np.diff(h, 2) >= -1e-6)


def test_square_loss_critical_lambda_is_not_attained():
    # h' increases to (sqrt(alpha) - 1)^2 / 2 only as q -> infinity
    model = _landscape_model(10.0, L2Loss(), GaussianAdditive(1.0))
    with pytest.raises(GridTooCoarse):
        critical_lambda(model, np.logspace(-1, 3, 30))
    row = landscape(model, [1e4])[0]
    limit = -((math.sqrt(10.0) - 1) ** 2)
    assert -2 * row.dh > limit
    assert -2 * row.dh == pytest.approx(limit, abs=0.05)


def test_critical_lambda_without_data():
    model = _landscape_model(0.0, HuberLoss(1.0), CONTAM)
    assert critical_lambda(model).value == 0.0


def test_landscape_derivative_matches_finite_differences():
    model = _landscape_model(10.0, HuberLoss(1.0), EpsilonContaminated(0.3, 1.0, 5.0))
    cfg = SolverConfig(tol=1e-11, n_restarts=1)
    for q in [0.5, 3.0, 40.0]:
        d = 1e-3 * q
        lo, mid, hi = landscape(model, [q - d, q, q + d], cfg)
        assert mid.dh == pytest.approx((hi.h - lo.h) / (2 * d), rel=1e-4, abs=1e-6)


def test_huber_landscape_slope_stays_bounded():
    # a linear-growth loss gives h'(q) = O(1): the lam = 0 curve keeps rising
    model = _landscape_model(10.0, HuberLoss(1.0), EpsilonContaminated(0.3, 1.0, 5.0))
    rows = landscape(model, np.logspace(1, 3, 6))
    dh = np.array([r.dh for r in rows])
    assert np.all(dh > 0) and np.all(dh < 2.0)


def test_spectral_zero_transform_is_uninformative():
    res = spectral_solve(SquareLaw(), lambda y: 0.0 * y, 2.0)
    assert res.m == 0.0 and res.b_val == 0.0 and not res.informative


def test_spectral_fixed_point_is_stationary():
    res = spectral_solve(SquareLaw(), T_CLIP, 3.0, label_breaks=(0.5,))
    assert res.informative and res.converged
    assert 0 < res.m < 1
    assert np.max(np.abs(res.solution.residuals)) < 1e-10
    # the iterative solver lands on the same point
    it = solve(res.solution.model, SolverConfig(tol=1e-10, n_restarts=1))
    assert abs(it.params.m) == pytest.approx(res.m, abs=1e-6)


@pytest.mark.parametrize("alpha", [1.0, 2.0])
def test_spectral_matches_outlier_formula(alpha):
    m, lam = spectral_closed_form(T_CLIP, alpha)
    res = spectral_solve(SquareLaw(), T_CLIP, alpha, label_breaks=(0.5,))
    assert res.m == pytest.approx(m, abs=1e-5)
    assert res.top_eigenvalue == pytest.approx(lam, abs=1e-5)


def test_spectral_below_transition():
    assert spectral_solve(SquareLaw(), T_CLIP, 0.4, label_breaks=(0.5,)).m == 0.0
    assert spectral_solve(SquareLaw(), T_CLIP, 0.5, label_breaks=(0.5,)).m < 0.05


@settings(max_examples=8, deadline=None)
@given(alpha=st.floats(0.3, 6.0), lam=st.floats(0.05, 3.0), delta=st.floats(0.0, 2.0))
def test_ridge_closed_form_property(alpha, lam, delta):
    sol = solve(ModelSpec(alpha, L2Loss(), L2Reg(lam), GaussianAdditive(delta)), SolverConfig(tol=1e-10))
    ref = ridge_fixed_point(alpha, lam, delta)
    assert sol.params.m == pytest.approx(ref["m"], abs=1e-6)
    assert sol.params.q == pytest.approx(ref["q"], abs=1e-6)


def test_simplified_energy_excludes_multipliers(huber_solution):
    p = huber_solution.params
    shifted = OrderParameters(p.m, p.q, p.tau, p.kappa * 1.1, p.nu, p.eta)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert simplified_energy(shifted, huber_solution.model) != pytest.approx(energy(shifted, huber_solution.model))
