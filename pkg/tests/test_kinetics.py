import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chembalance import kinetics as kin
from chembalance.mechanism import (
    ONE_ATM,
    R_CAL,
    R_UNIVERSAL,
    ElementImbalanceError,
    MechanismError,
    ReactionSpec,
    ThermoRangeError,
    parse_mechanism,
)
from chembalance.odesolver import ToleranceSpec, integrate

from conftest import random_state, synthetic_mechanism

# N2 low-range coefficients, copied by hand from the bundled file
N2_LOW = [3.298677, 1.4082404e-03, -3.963222e-06, 5.641515e-09, -2.444854e-12, -1020.8999, 3.950372]


def arrhenius(A, b, Ea):
    return ReactionSpec({"A": 1}, {"B": 1}, A, b, Ea, False, None, "A => B")


# --- thermo ---------------------------------------------------------------


def test_constant_cp_species():
    mech = parse_mechanism(synthetic_mechanism(["A", "B"], []))
    cp, _, _ = kin.thermo_props(mech.species[0], 650.0)
    assert cp == pytest.approx(3.5 * R_UNIVERSAL, rel=1e-15)


def test_n2_cp_matches_direct_polynomial(h2):
    n2 = h2.species[h2.species_index("N2")]
    # independent evaluation: Horner form over reversed coefficients
    cp_r = np.polyval(N2_LOW[4::-1], 1000.0)
    cp, _, _ = kin.thermo_props(n2, 1000.0)
    assert cp == pytest.approx(cp_r * R_UNIVERSAL, rel=1e-12)


def test_thermo_continuous_at_tmid(h2):
    for sp in h2.species:
        lo = kin.nasa_eval(sp.low, sp.t_mid)
        hi = kin.nasa_eval(sp.high, sp.t_mid)
        for a, b in zip(lo, hi):
            assert abs(a - b) <= 1e-3 * max(abs(a), 1.0)


def test_thermo_out_of_range(h2):
    with pytest.raises(ThermoRangeError):
        kin.thermo_props(h2.species[0], 4000.0)
    with pytest.raises(ThermoRangeError):
        kin.rhs(h2, np.concatenate(([4000.0], np.full(8, 0.1))))


# --- rate constants --------------------------------------------------------


@pytest.mark.parametrize(
    "A,b,Ea,T,expected",
    [
        (1e13, 0.0, 0.0, 1234.0, 1e13),
        (1.0, 1.0, 0.0, 300.0, 300.0),
        (1.0, 0.0, R_CAL * 1000 * math.log(2), 1000.0, 0.5),
    ],
)
def test_rate_constant(A, b, Ea, T, expected):
    assert kin.rate_constant(arrhenius(A, b, Ea), T) == pytest.approx(expected, rel=1e-14)


def _reversible_pair(a7_shift):
    shifted = f"3.5 0 0 0 0 0 {a7_shift!r}"
    text = synthetic_mechanism(["A", "B"], ["A <=> B  1000 0 0"], thermo={"B": shifted})
    mech = parse_mechanism(text)
    return mech, mech.reactions[0]


def test_reverse_rate_zero_gibbs():
    mech, r = _reversible_pair(0.0)
    assert kin.reverse_rate_constant(mech, r, 900.0) == pytest.approx(1000.0, rel=1e-14)


def test_reverse_rate_gibbs_ln10():
    # shifting B's entropy constant by ln 10 gives dG/RT = -ln 10
    mech, r = _reversible_pair(math.log(10.0))
    assert kin.reverse_rate_constant(mech, r, 900.0) == pytest.approx(100.0, rel=1e-12)


def test_reverse_rate_h2_reaction_direct(h2):
    # H + O2 <=> O + OH, evaluated with an independent formula
    r = next(r for r in h2.reactions if r.reactants == {"H": 1, "O2": 1})
    T = 1500.0
    coeffs = {sp.name: sp.high if T > sp.t_mid else sp.low for sp in h2.species}

    def g_rt(name):
        a = coeffs[name]
        h = a[0] + a[1] * T / 2 + a[2] * T**2 / 3 + a[3] * T**3 / 4 + a[4] * T**4 / 5 + a[5] / T
        s = a[0] * np.log(T) + a[1] * T + a[2] * T**2 / 2 + a[3] * T**3 / 3 + a[4] * T**4 / 4 + a[6]
        return h - s

    dg = g_rt("O") + g_rt("OH") - g_rt("H") - g_rt("O2")
    kc = np.exp(-dg)  # delta nu = 0
    kf = r.A * T**r.b * np.exp(-r.Ea / (1.9872036 * T))
    assert kin.reverse_rate_constant(h2, r, T) == pytest.approx(kf / kc, rel=1e-10)


def test_reverse_of_irreversible_raises():
    mech = parse_mechanism(synthetic_mechanism(["A", "B"], ["A => B 1 0 0"]))
    with pytest.raises(ValueError):
        kin.reverse_rate_constant(mech, mech.reactions[0], 1000.0)


# --- production rates ------------------------------------------------------


def test_mass_action_first_order():
    mech = parse_mechanism(synthetic_mechanism(["A", "B"], ["A => B  3 0 0"]))
    T = 300.0
    p = 2e6 * R_UNIVERSAL * 1e-3 * T  # pure A at 2 mol/cm^3
    w = kin.production_rates(mech, np.array([T, 1.0]), p)
    assert w == pytest.approx([-6.0, 6.0], rel=1e-12)


def test_third_body_scales_with_total_concentration():
    plain = parse_mechanism(synthetic_mechanism(["A", "B", "C"], ["A + A => B + A  5 0 0"]))
    tb = parse_mechanism(synthetic_mechanism(["A", "B", "C"], ["A + M => B + M  5 0 0"]))
    T, p = 1000.0, ONE_ATM
    y = np.array([T, 0.3, 0.2])
    c_total = p / (R_UNIVERSAL * 1e-3 * T) * 1e-6
    c_a = 0.3 * c_total
    w = kin.production_rates(tb, y, p)
    assert w[0] == pytest.approx(-5 * c_a * c_total, rel=1e-12)
    # bimolecular reference with [A] in place of [M]
    w_ref = kin.production_rates(plain, y, p)
    assert w[0] / w_ref[0] == pytest.approx(c_total / c_a, rel=1e-12)


def test_third_body_efficiency():
    tb = parse_mechanism(synthetic_mechanism(["A", "B", "C"], ["A + M => B + M  5 0 0  M( C:0.0 )"]))
    T, p = 1000.0, ONE_ATM
    c_total = p / (R_UNIVERSAL * 1e-3 * T) * 1e-6
    w = kin.production_rates(tb, np.array([T, 0.3, 0.2]), p)
    # C carries 0.5 of the mass and contributes nothing to M
    assert w[0] == pytest.approx(-5 * 0.3 * c_total * 0.5 * c_total, rel=1e-12)


def test_negative_mass_fraction_clipped_for_rates():
    mech = parse_mechanism(synthetic_mechanism(["A", "B"], ["A => B  3 0 0"]))
    w = kin.production_rates(mech, np.array([1000.0, -1e-6]))
    assert np.all(w == 0.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mass_and_element_conservation(h2, seed):
    y = random_state(np.random.default_rng(seed), h2.n_species)
    w = kin.production_rates(h2, y)
    W = h2.molecular_weights
    scale = np.abs(w * W).max()
    assert abs(np.dot(w, W)) <= 1e-10 * scale + 1e-300
    for el in h2.elements:
        n = np.array([sp.composition.get(el.symbol, 0) for sp in h2.species])
        mag = np.abs(n * w).max()
        assert abs(np.dot(n, w)) <= 1e-10 * mag + 1e-300


# --- rhs ---------------------------------------------------------------------


def test_zero_reaction_rhs_is_exactly_zero():
    mech = parse_mechanism(synthetic_mechanism(["A", "B", "C"], []))
    f = kin.rhs(mech, np.array([1500.0, 0.2, 0.3]))
    assert np.all(f == 0.0)


def _ignition_rhs_scale(h2, Y):
    phi = kin.CompositionVector.from_mass_fractions(1200.0, Y)
    peak = 0.0
    for _ in range(40):
        phi, _ = integrate(h2, phi, ONE_ATM, 5e-6, ToleranceSpec(1e-10, 1e-8))
        peak = max(peak, np.abs(kin.rhs(h2, phi)).max())
    return peak


def test_cold_mixture_is_frozen(h2, stoich_h2_air):
    cold = kin.rhs(h2, kin.CompositionVector.from_mass_fractions(300.0, stoich_h2_air))
    assert np.abs(cold).max() < 1e-8 * _ignition_rhs_scale(h2, stoich_h2_air)


def test_heat_release_during_ignition_onset(h2, stoich_h2_air):
    phi = kin.CompositionVector.from_mass_fractions(1200.0, stoich_h2_air)
    # the pristine mixture is slightly endothermic (initiation); once the
    # radical pool forms, chain branching and recombination heat the gas
    phi, _ = integrate(h2, phi, ONE_ATM, 1e-5)
    assert kin.rhs(h2, phi)[0] > 0


def test_mass_fraction_rates_sum_with_implied(h2):
    y = random_state(np.random.default_rng(3), h2.n_species)
    f = kin.rhs(h2, y)
    w = kin.production_rates(h2, y) * 1e6
    rho = ONE_ATM / (R_UNIVERSAL * 1e-3 * y[0] * np.sum(np.append(y[1:], 1 - y[1:].sum()) / h2.molecular_weights))
    np.testing.assert_allclose(f[1:], w[:-1] * h2.molecular_weights[:-1] / rho, rtol=1e-12, atol=1e-300)


def test_counter_is_per_caller(h2):
    y = random_state(np.random.default_rng(1), h2.n_species)
    a, b = kin.EvalCounter(), kin.EvalCounter()
    kin.rhs(h2, y, counter=a)
    kin.rhs(h2, y, counter=a)
    kin.analytical_jacobian(h2, y, counter=b)
    assert (a.rhs_evals, a.jacobian_evals, b.rhs_evals, b.jacobian_evals) == (2, 0, 0, 1)


# --- Jacobians ---------------------------------------------------------------


def column_scaled_error(J, Jref):
    norms = np.linalg.norm(Jref, axis=0)
    norms[norms == 0] = 1.0
    return np.max(np.abs(J - Jref) / norms)


def test_linear_chain_jacobian_block(chain_mechanism):
    mech = chain_mechanism(k1=3.0, k2=7.0)
    J = kin.analytical_jacobian(mech, np.array([1000.0, 0.6, 0.3]))
    np.testing.assert_allclose(J[1:, 1:], [[-3.0, 0.0], [3.0, -7.0]], rtol=1e-13, atol=1e-13)
    assert np.abs(J[0]).max() <= 1e-14 * 7.0


def test_inert_species_column_vanishes():
    # X is inert; equal weights and cp freeze density and heat-capacity coupling
    mech = parse_mechanism(synthetic_mechanism(["A", "X", "B"], ["A => B  4 0 0"]))
    J = kin.analytical_jacobian(mech, np.array([1100.0, 0.5, 0.2]))
    assert np.all(np.abs(J[1:, 2]) <= 1e-15)


def test_fd_matches_linear_chain(chain_mechanism):
    mech = chain_mechanism(k1=3.0, k2=7.0)
    y = np.array([1000.0, 0.6, 0.3])
    np.testing.assert_allclose(kin.fd_jacobian(mech, y)[1:, 1:], [[-3.0, 0.0], [3.0, -7.0]], atol=1e-8)


def test_fd_of_zero_rhs_is_zero():
    mech = parse_mechanism(synthetic_mechanism(["A", "B", "C"], []))
    assert np.all(kin.fd_jacobian(mech, np.array([900.0, 0.2, 0.5])) == 0.0)


def test_fd_cost_is_2n(h2):
    c = kin.EvalCounter()
    kin.fd_jacobian(h2, random_state(np.random.default_rng(0), h2.n_species), counter=c)
    assert c.rhs_evals == 2 * h2.n_state and c.jacobian_evals == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_analytic_jacobian_matches_fd(h2, seed):
    y = random_state(np.random.default_rng(seed), h2.n_species)
    J = kin.analytical_jacobian(h2, y)
    assert column_scaled_error(J, kin.fd_jacobian(h2, y)) < 1e-5


def test_third_body_and_reversible_jacobian():
    text = synthetic_mechanism(
        ["A", "B", "C"],
        ["A + M <=> B + M  1e12 0.5 8000  M( B:2.5 C:0.4 )", "A + B <=> C + C  3e11 0 4000"],
        thermo={"B": "3.1 1e-3 0 0 0 -500 1.0", "C": "4.0 -2e-4 0 0 0 300 2.0"},
    )
    mech = parse_mechanism(text)
    rng = np.random.default_rng(5)
    for _ in range(20):
        y = random_state(rng, 3)
        assert column_scaled_error(kin.analytical_jacobian(mech, y), kin.fd_jacobian(mech, y)) < 1e-6


# --- mechanism parsing ---------------------------------------------------------


def test_minimal_mechanism():
    mech = parse_mechanism(synthetic_mechanism(["A", "B"], ["A => B  1 0 0"]))
    assert mech.n_species == 2 and len(mech.reactions) == 1


def test_bundled_mechanism_loads(h2):
    assert h2.n_species == 9
    assert h2.species_names[-1] == "N2"
    assert len(h2.reactions) >= 20


def test_element_imbalance_reported():
    text = """
ELEMENTS
H 1.00794
O 15.9994
END
SPECIES
H2  H:2 200 1000 3500
  3.5 0 0 0 0 0 0
  3.5 0 0 0 0 0 0
OH  H:1 O:1 200 1000 3500
  3.5 0 0 0 0 0 0
  3.5 0 0 0 0 0 0
H2O H:2 O:1 200 1000 3500
  3.5 0 0 0 0 0 0
  3.5 0 0 0 0 0 0
END
REACTIONS
H2 + OH => H2O  1e13 0 0
END
"""
    with pytest.raises(ElementImbalanceError) as exc:
        parse_mechanism(text)
    assert exc.value.deficit == {"H": -1}  # products minus reactants: 2 - 3
    assert "H2 + OH" in str(exc.value)


@pytest.mark.parametrize(
    "reaction",
    ["A => Q  1 0 0", "A => B  0 0 0", "A => B  -1 0 0"],
)
def test_bad_reactions(reaction):
    with pytest.raises(MechanismError):
        parse_mechanism(synthetic_mechanism(["A", "B"], [reaction]))


def test_malformed_thermo_range():
    text = synthetic_mechanism(["A", "B"], []).replace("A X:1 200 1000 5000", "A X:1 200 6000 5000")
    with pytest.raises(MechanismError):
        parse_mechanism(text)


def test_stream_sums_checked():
    with pytest.raises(MechanismError):
        parse_mechanism(synthetic_mechanism(["A", "B"], [], streams=["fuel A:0.9", "oxidizer B:1.0"]))


# --- mixture fraction ------------------------------------------------------------


def test_bilger_streams(h2):
    fuel = h2.mass_fractions(h2.fuel_stream)
    ox = h2.mass_fractions(h2.oxidizer_stream)
    assert kin.bilger_z(h2, fuel) == pytest.approx(1.0, abs=1e-12)
    assert kin.bilger_z(h2, ox) == pytest.approx(0.0, abs=1e-12)
    assert kin.bilger_z(h2, 0.5 * fuel + 0.5 * ox) == pytest.approx(0.5, abs=1e-12)


def test_bilger_stoichiometric(h2, stoich_h2_air):
    # by hand: 8 g O2 per g H2; Z_st = 1 / (1 + 7.9367 / 0.233)
    z_hand = 1.0 / (1.0 + 2 * 15.9994 / (4 * 1.00794) / 0.233)
    assert abs(z_hand - 0.0285) / 0.0285 < 0.02
    assert kin.bilger_z(h2, stoich_h2_air) == pytest.approx(z_hand, rel=0.02)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_bilger_linearity(h2, seed, alpha):
    rng = np.random.default_rng(seed)
    fuel = h2.mass_fractions(h2.fuel_stream)
    ox = h2.mass_fractions(h2.oxidizer_stream)
    # two mixtures inside the stream hull so clamping never engages
    a, b = rng.random(2)
    ya = a * fuel + (1 - a) * ox
    yb = b * fuel + (1 - b) * ox
    z_mix = kin.bilger_z(h2, alpha * ya + (1 - alpha) * yb)
    assert z_mix == pytest.approx(alpha * kin.bilger_z(h2, ya) + (1 - alpha) * kin.bilger_z(h2, yb), abs=1e-12)


def test_bilger_map_agrees(h2):
    rng = np.random.default_rng(2)
    Ys = rng.random((20, h2.n_species))
    Ys /= Ys.sum(axis=1, keepdims=True)
    bm = kin.BilgerMap(h2)
    np.testing.assert_allclose(bm(Ys), [kin.bilger_z(h2, Y) for Y in Ys], atol=1e-12)


def test_degenerate_streams(h2):
    same = h2.with_streams({"N2": 1.0}, {"N2": 1.0})
    with pytest.raises(kin.DegenerateStreamsError):
        kin.bilger_z(same, same.mass_fractions({"N2": 1.0}))


def test_composition_vector_roundtrip(h2, stoich_h2_air):
    phi = kin.CompositionVector.from_mass_fractions(1000.0, stoich_h2_air)
    phi.check()
    np.testing.assert_array_equal(kin.CompositionVector.from_array(phi.as_array()).Y, phi.Y)
    assert phi.full_mass_fractions().sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        kin.CompositionVector(-1.0, phi.Y).check()
