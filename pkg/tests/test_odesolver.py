import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from chembalance import kinetics as kin
from chembalance import odesolver as ode
from chembalance.mechanism import ONE_ATM, ThermoRangeError, parse_mechanism
from chembalance.odesolver import ToleranceSpec

import odefix
from conftest import synthetic_mechanism

TOL = ToleranceSpec(1e-8, 1e-5)


# --- norm ---------------------------------------------------------------------


def test_wrms_examples():
    assert ode.wrms_norm(np.full(3, 1e-8), np.zeros(3), TOL) == pytest.approx(1.0, rel=1e-14)
    assert ode.wrms_norm(np.zeros(3), np.ones(3), TOL) == 0.0
    assert ode.wrms_norm([2e-8, 0.0], [0.0, 0.0], TOL) == pytest.approx(np.sqrt(2.0), rel=1e-14)


def test_wrms_length_mismatch():
    with pytest.raises(ValueError):
        ode.wrms_norm([1.0], [1.0, 2.0], TOL)


def test_tolerance_validation():
    with pytest.raises(ValueError):
        ToleranceSpec(0.0, 1e-5)
    with pytest.raises(ValueError):
        ToleranceSpec(1e-8, -1.0)


# --- single step ------------------------------------------------------------------


def classical_tableau():
    """Convert the transformed (A, C, M) coefficients back to (alpha, Gamma, b)."""
    g = ode.GAMMA
    gamma_inv = np.eye(6) / g - ode.RODAS_C
    Gamma = np.linalg.inv(gamma_inv)
    alpha = ode.RODAS_A @ Gamma
    b = ode.RODAS_M @ Gamma
    return alpha, Gamma, b


def stability_function(z):
    alpha, Gamma, b = classical_tableau()
    return 1.0 + z * b @ np.linalg.solve(np.eye(6) - z * (alpha + Gamma), np.ones(6))


def test_classical_tableau_is_consistent():
    alpha, Gamma, b = classical_tableau()
    np.testing.assert_allclose(np.diag(Gamma), ode.GAMMA, rtol=1e-13)
    assert np.allclose(np.triu(alpha), 0.0) and np.allclose(np.triu(Gamma, 1), 0.0, atol=1e-13)
    # order conditions 1 and 2 of a Rosenbrock method
    assert b.sum() == pytest.approx(1.0, abs=1e-12)
    beta = (alpha + Gamma).sum(axis=1)
    assert b @ beta == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("z", [-1e-3, -0.5, -3.0, -40.0, -1e4, 0.7])
def test_step_reproduces_stability_function(z):
    h = 0.1
    lam = z / h
    y1, err, stats = ode.rosenbrock_step(odefix.linear_fun, odefix.linear_jac, [1.0], h, TOL, args=(lam,))
    assert y1[0] == pytest.approx(stability_function(z), rel=1e-12, abs=1e-14)
    assert stats.lu_factorizations == 1 and stats.jacobian_evals == 1


def test_l_stability():
    assert abs(stability_function(-1e12)) < 1e-10


def test_zero_rhs_step():
    y = np.array([0.3, -2.0, 5.0])
    y1, err, _ = ode.rosenbrock_step(odefix.zero_fun, odefix.zero_jac, y, 0.5, TOL)
    np.testing.assert_array_equal(y1, y)
    assert np.all(err == 0.0)


def rk4_step(f, y, h):
    k1 = f(y)
    k2 = f(y + h / 2 * k1)
    k3 = f(y + h / 2 * k2)
    k4 = f(y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def test_stiff_relaxation_step_vs_rk4():
    lam, h = -1e6, 0.1
    y0 = np.array([1.0, 0.0])
    y1, err, _ = ode.rosenbrock_step(odefix.relax_fun, odefix.relax_jac, y0, h, TOL, args=(lam,))
    assert ode.wrms_norm(err, np.maximum(np.abs(y0), np.abs(y1)), TOL) <= 1.0
    assert y1[0] == pytest.approx(np.cos(h), abs=1e-6)

    def f(y):
        return np.array([lam * (y[0] - np.cos(y[1])), 1.0])

    y = y0.copy()
    for _ in range(5):
        y = rk4_step(f, y, h)
    assert abs(y[0]) > 1e20


def test_nonpositive_step_rejected():
    with pytest.raises(ValueError):
        ode.rosenbrock_step(odefix.zero_fun, odefix.zero_jac, [1.0], 0.0, TOL)


# --- convergence order -----------------------------------------------------------------


def fixed_step_error(h, t_end=2.0):
    args = (1.0, 3.0)
    y = np.array([1.5, 3.0])
    for _ in range(int(round(t_end / h))):
        y, _, _ = ode.rosenbrock_step(odefix.brusselator_fun, odefix.brusselator_jac, y, h, TOL, args=args)
    ref = solve_ivp(
        lambda t, y: [1 + y[0] ** 2 * y[1] - 4 * y[0], 3 * y[0] - y[0] ** 2 * y[1]],
        (0.0, t_end), [1.5, 3.0], method="DOP853", rtol=1e-13, atol=1e-14,
    ).y[:, -1]
    return np.abs(y - ref).max()


def convergence_slope():
    hs = 0.2 / 2.0 ** np.arange(5)
    errs = [fixed_step_error(h) for h in hs]
    return np.polyfit(np.log(hs), np.log(errs), 1)[0]


def test_fourth_order_convergence():
    assert 3.5 <= convergence_slope() <= 4.5


# --- adaptive integration -------------------------------------------------------------


def chain_exact(k1, k2, t):
    a = np.exp(-k1 * t)
    b = k1 / (k2 - k1) * (np.exp(-k1 * t) - np.exp(-k2 * t))
    return a, b


def chain_error(mech, k1, k2, dt, tol):
    phi, _ = ode.integrate(mech, np.array([1000.0, 1.0, 0.0]), ONE_ATM, dt, tol)
    a, b = chain_exact(k1, k2, dt)
    return max(abs(phi.Y[0] - a), abs(phi.Y[1] - b)), phi


@pytest.mark.parametrize("mode", ode.JACOBIAN_MODES)
def test_linear_chain_closed_form(chain_mechanism, mode):
    k1, k2 = 3.0, 7.0
    mech = chain_mechanism(k1, k2)
    phi, stats = ode.integrate(mech, np.array([1000.0, 1.0, 0.0]), ONE_ATM, 0.5, TOL, jacobian_mode=mode)
    a, b = chain_exact(k1, k2, 0.5)
    assert abs(phi.Y[0] - a) <= 10 * TOL.reltol
    assert abs(phi.Y[1] - b) <= 10 * TOL.reltol
    assert phi.T == pytest.approx(1000.0, abs=1e-9)  # isothermal up to round-off


def test_tolerance_monotonicity(chain_mechanism):
    mech = chain_mechanism(3.0, 7.0)
    errs = [
        chain_error(mech, 3.0, 7.0, 0.5, ToleranceSpec(1e-6 * 10.0**-k, 1e-3 * 10.0**-k))[0]
        for k in range(6)
    ]
    assert all(b <= a for a, b in zip(errs, errs[1:])), errs


def test_zero_reaction_single_step():
    mech = parse_mechanism(synthetic_mechanism(["A", "B", "C"], []))
    y0 = np.array([1234.0, 0.2, 0.3])
    phi, stats = ode.integrate(mech, y0, ONE_ATM, 1e-3)
    np.testing.assert_array_equal(phi.as_array(), y0)
    assert stats.steps_accepted == 1 and stats.steps_rejected == 0


def test_lands_exactly_on_dt():
    y, stats = ode.integrate_ode(odefix.linear_fun, odefix.linear_jac, [1.0], 0.37, TOL, args=(-2.0,))
    assert y[0] == pytest.approx(np.exp(-0.74), rel=1e-5)
    assert stats.steps_accepted > 1


def test_interval_validation(h2, stoich_h2_air):
    phi = kin.CompositionVector.from_mass_fractions(1200.0, stoich_h2_air)
    with pytest.raises(ValueError):
        ode.integrate(h2, phi, ONE_ATM, 0.0)
    with pytest.raises(ValueError):
        ode.integrate(h2, phi, ONE_ATM, 1e-5, jacobian_mode="newton")


def test_out_of_range_raises(h2):
    y = np.concatenate(([5000.0], np.full(8, 0.05)))
    with pytest.raises(ThermoRangeError):
        ode.integrate(h2, y, ONE_ATM, 1e-6)


def test_step_underflow_raises():
    # blow-up y' = y^2 style instability forces h to collapse
    with pytest.raises(ode.StiffnessError) as exc:
        ode.integrate_ode(odefix.linear_fun, odefix.linear_jac, [1.0], 1.0, ToleranceSpec(1e-12, 1e-12), args=(1e4,))
    assert exc.value.t < 1.0


@pytest.fixture(scope="module")
def ignition_runs(h2, stoich_h2_air):
    phi = kin.CompositionVector.from_mass_fractions(1200.0, stoich_h2_air)
    return {m: ode.integrate(h2, phi, ONE_ATM, 1e-4, TOL, jacobian_mode=m) for m in ode.JACOBIAN_MODES}


def test_ignition_modes_agree(ignition_runs):
    (pa, sa), (pf, sf) = ignition_runs["analytic"], ignition_runs["fd"]
    assert pa.T > 2000.0
    assert abs(pa.T - pf.T) <= 10 * TOL.reltol * pa.T
    assert sa.rhs_evals < sf.rhs_evals


def test_fd_cost_arithmetic(h2, ignition_runs):
    n = h2.n_state
    for mode, (_, s) in ignition_runs.items():
        attempts = s.steps_accepted + s.steps_rejected
        extra = 2 * n * s.jacobian_evals if mode == "fd" else 0
        # one base-point evaluation per Jacobian, five new stages per attempt
        assert s.rhs_evals == s.jacobian_evals + 5 * attempts + extra
        assert s.lu_factorizations <= attempts


def test_element_drift_over_ignition(h2, stoich_h2_air, ignition_runs):
    phi, _ = ignition_runs["analytic"]
    before = kin.element_mass_fractions(h2, stoich_h2_air)
    after = kin.element_mass_fractions(h2, phi.full_mass_fractions())
    for e in before:
        assert abs(after[e] - before[e]) <= 1e-8 * before[e]


def test_determinism_across_threads(h2, stoich_h2_air):
    y0 = kin.CompositionVector.from_mass_fractions(1400.0, stoich_h2_air)
    ref, _ = ode.integrate(h2, y0, ONE_ATM, 2e-5)
    out = []
    ts = [threading.Thread(target=lambda: out.append(ode.integrate(h2, y0, ONE_ATM, 2e-5)[0])) for _ in range(4)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    for phi in out:
        assert phi.as_array().tobytes() == ref.as_array().tobytes()


@settings(max_examples=25, deadline=None)
@given(st.floats(800.0, 2400.0), st.integers(0, 2**32 - 1))
def test_integration_preserves_invariants(h2, T, seed):
    rng = np.random.default_rng(seed)
    Y = rng.random(h2.n_species) * np.array([1, 1, 1, 0.01, 0.01, 0.01, 0.01, 0.01, 1])
    Y /= Y.sum()
    phi, stats = ode.integrate(h2, kin.CompositionVector.from_mass_fractions(T, Y), ONE_ATM, 2e-6)
    assert phi.T > 0
    assert phi.full_mass_fractions().sum() == pytest.approx(1.0, abs=1e-14)
    assert stats.lu_factorizations <= stats.steps_accepted + stats.steps_rejected
    before = kin.element_mass_fractions(h2, Y)
    after = kin.element_mass_fractions(h2, phi.full_mass_fractions())
    for e in before:
        assert abs(after[e] - before[e]) <= 1e-8 * max(before[e], 1e-3)


def test_stats_addition():
    a = ode.IntegratorStats(1, 2, 3, 4, 5, 0.5)
    assert a + a == ode.IntegratorStats(2, 4, 6, 8, 10, 1.0)
