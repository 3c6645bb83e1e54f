import numpy as np
import pytest

from chembalance.mechanism import bundled_mechanism, parse_mechanism

CONST_CP = "3.5 0 0 0 0 0 0"


def synthetic_mechanism(species, reactions, streams=None, thermo=None, weight=28.0):
    """Build a mechanism text from isomer species X:1 with constant cp = 3.5 R.

    ``thermo`` may map a species name to a replacement 7-coefficient string
    used for both ranges.
    """
    thermo = thermo or {}
    lines = ["ELEMENTS", f"X {weight}", "END", "SPECIES"]
    for name in species:
        coeffs = thermo.get(name, CONST_CP)
        lines.append(f"{name} X:1 200 1000 5000")
        lines.append(f"    {coeffs}")
        lines.append(f"    {coeffs}")
    lines.append("END")
    lines.append("REACTIONS")
    lines.extend(reactions)
    lines.append("END")
    if streams:
        lines += ["STREAMS", *streams, "END"]
    return "\n".join(lines) + "\n"


@pytest.fixture(scope="session")
def h2():
    return bundled_mechanism("h2o2")


@pytest.fixture(scope="session")
def stoich_h2_air():
    """Stoichiometric H2/air mass fractions in the h2o2 species order."""
    mech = bundled_mechanism("h2o2")
    w_h2 = 2 * 1.00794
    w_o2 = 2 * 15.9994
    y_o2_air = 0.233
    # 2 H2 + O2: mass of H2 per mass of O2
    s = 2 * w_h2 / w_o2
    y_o2 = y_o2_air / (1 + s * y_o2_air)
    y_h2 = s * y_o2
    Y = mech.mass_fractions({"H2": y_h2, "O2": y_o2, "N2": 1 - y_h2 - y_o2})
    return Y


def random_state(rng, n_species, T_range=(800.0, 2500.0)):
    Y = rng.random(n_species)
    Y /= Y.sum()
    return np.concatenate(([rng.uniform(*T_range)], Y[:-1]))


@pytest.fixture
def chain_mechanism():
    def build(k1=3.0, k2=None):
        rx = [f"A => B   {k1} 0 0"]
        species = ["A", "B"]
        if k2 is not None:
            rx.append(f"B => C   {k2} 0 0")
            species.append("C")
        return parse_mechanism(synthetic_mechanism(species, rx))

    return build
