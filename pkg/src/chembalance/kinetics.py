"""Thermochemistry, reaction rates, the reactor RHS and its Jacobian.

The reactor is adiabatic at constant pressure.  Its state is
``(T, Y_1, ..., Y_{N-1})``; the last declared species (the bath gas) carries
the implied mass fraction ``1 - sum(Y)``, so mass is conserved by
construction.  The heavy lifting is in :mod:`chembalance._chem`; this module
validates inputs, converts units at the boundary and raises proper errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from chembalance import _chem
from chembalance.mechanism import (
    ONE_ATM,
    R_CAL,
    R_UNIVERSAL,
    Mechanism,
    ReactionSpec,
    SpeciesSpec,
    ThermoRangeError,
)


@dataclass
class EvalCounter:
    """Per-caller instrumentation; pass one in to count RHS evaluations."""

    rhs_evals: int = 0
    jacobian_evals: int = 0


@dataclass(frozen=True)
class CompositionVector:
    """Reactor state: temperature and the first N-1 mass fractions."""

    T: float
    Y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Y", np.asarray(self.Y, dtype=float))

    @classmethod
    def from_array(cls, y: np.ndarray) -> CompositionVector:
        return cls(float(y[0]), np.array(y[1:], dtype=float))

    @classmethod
    def from_mass_fractions(cls, T: float, Y_full: Sequence[float]) -> CompositionVector:
        Y_full = np.asarray(Y_full, dtype=float)
        return cls(float(T), Y_full[:-1].copy())

    @classmethod
    def from_composition(cls, mech: Mechanism, T: float, composition: Mapping[str, float]):
        Y = mech.mass_fractions(composition)
        return cls.from_mass_fractions(T, Y / Y.sum())

    def as_array(self) -> np.ndarray:
        return np.concatenate(([self.T], self.Y))

    @property
    def implied(self) -> float:
        return 1.0 - math.fsum(self.Y)

    def full_mass_fractions(self) -> np.ndarray:
        return np.append(self.Y, self.implied)

    def check(self, tol: float = 1e-10) -> None:
        if not self.T > 0:
            raise ValueError(f"temperature must be positive, got {self.T}")
        if np.any(self.Y < 0) or np.any(self.Y > 1):
            raise ValueError("stored mass fractions must lie in [0, 1]")
        if not -tol <= self.implied <= 1 + tol:
            raise ValueError(f"implied mass fraction {self.implied} outside [0, 1]")


State = Union[CompositionVector, np.ndarray]


def _state(phi: State) -> np.ndarray:
    if isinstance(phi, CompositionVector):
        return phi.as_array()
    return np.ascontiguousarray(phi, dtype=float)


def _raise_range(mech: Mechanism, T: float):
    for sp in mech.species:
        if not sp.t_low <= T <= sp.t_high:
            raise ThermoRangeError(sp.name, T, sp.t_low, sp.t_high)
    raise ValueError(f"invalid temperature {T!r}")


# ---------------------------------------------------------------------------
# thermo and rate constants


def nasa_eval(a: Sequence[float], T: float) -> tuple[float, float, float]:
    """cp/R, h/RT and s/R of one NASA-7 coefficient set."""
    cp = a[0] + a[1] * T + a[2] * T**2 + a[3] * T**3 + a[4] * T**4
    h = a[0] + a[1] * T / 2 + a[2] * T**2 / 3 + a[3] * T**3 / 4 + a[4] * T**4 / 5 + a[5] / T
    s = a[0] * math.log(T) + a[1] * T + a[2] * T**2 / 2 + a[3] * T**3 / 3 + a[4] * T**4 / 4 + a[6]
    return cp, h, s


def thermo_props(s: SpeciesSpec, T: float) -> tuple[float, float, float]:
    """Molar cp [J/(kmol K)], h [J/kmol] and s [J/(kmol K)] of a species."""
    if not s.t_low <= T <= s.t_high:
        raise ThermoRangeError(s.name, T, s.t_low, s.t_high)
    cp, h, entropy = nasa_eval(s.coefficients(T), T)
    return cp * R_UNIVERSAL, h * R_UNIVERSAL * T, entropy * R_UNIVERSAL


def rate_constant(r: ReactionSpec, T: float) -> float:
    """Forward Arrhenius rate constant in the mol-cm-s units of the mechanism."""
    if not T > 0:
        raise ValueError("temperature must be positive")
    return r.A * T**r.b * math.exp(-r.Ea / (R_CAL * T))


def equilibrium_constant(mech: Mechanism, r: ReactionSpec, T: float) -> float:
    """Concentration-based K_c in mol/cm^3 units."""
    dS = dH = 0.0
    by_name = {s.name: s for s in mech.species}
    for stoich, sign in ((r.reactants, -1), (r.products, 1)):
        for name, nu in stoich.items():
            _, h, s = thermo_props(by_name[name], T)
            dS += sign * nu * s
            dH += sign * nu * h
    Kp = math.exp(dS / R_UNIVERSAL - dH / (R_UNIVERSAL * T))
    # p_atm / (R T) in mol/cm^3
    c0 = ONE_ATM / (R_UNIVERSAL * 1e-3 * T) * 1e-6
    return Kp * c0**r.delta_nu


def reverse_rate_constant(
    mech: Mechanism, r: ReactionSpec, T: float, k_f: float | None = None
) -> float:
    if not r.reversible:
        raise ValueError(f"reaction '{r.equation}' is irreversible")
    if k_f is None:
        k_f = rate_constant(r, T)
    return k_f / equilibrium_constant(mech, r, T)


# ---------------------------------------------------------------------------
# source terms


def production_rates(mech: Mechanism, phi: State, p: float = ONE_ATM) -> np.ndarray:
    """Net molar production rate of every species, mol/(cm^3 s)."""
    y = _state(phi)
    wdot = np.empty(mech.n_species)
    if not _chem.production_rates(mech.tables, float(p), y, wdot):
        _raise_range(mech, y[0])
    return wdot * 1e-6


def rhs(mech: Mechanism, phi: State, p: float = ONE_ATM, counter: EvalCounter | None = None):
    """Time derivative of the state vector (T in K/s, Y in 1/s)."""
    y = _state(phi)
    f = np.empty_like(y)
    if not _chem.chem_fun(y, (mech.tables, float(p)), f):
        _raise_range(mech, y[0])
    if counter is not None:
        counter.rhs_evals += 1
    return f


def analytical_jacobian(
    mech: Mechanism, phi: State, p: float = ONE_ATM, counter: EvalCounter | None = None
) -> np.ndarray:
    y = _state(phi)
    J = np.zeros((y.size, y.size))
    if not _chem.chem_jac(y, (mech.tables, float(p)), J):
        _raise_range(mech, y[0])
    if counter is not None:
        counter.jacobian_evals += 1
    return J


def fd_jacobian(
    mech: Mechanism,
    phi: State,
    p: float = ONE_ATM,
    eta: float = 1e-6,
    floor: float = 1.0,
    counter: EvalCounter | None = None,
) -> np.ndarray:
    """Central-difference Jacobian.

    Column j is perturbed by ``max(eta*|y_j|, eta*floor)``; ``floor`` plays
    the role of the absolute tolerance for components near zero.
    """
    y = _state(phi)
    J = np.zeros((y.size, y.size))
    ok, count = _chem.fd_jacobian(_chem.chem_fun, (mech.tables, float(p)), y, J, eta, floor)
    if counter is not None:
        counter.rhs_evals += count
        counter.jacobian_evals += 1
    if not ok:
        _raise_range(mech, y[0])
    return J


# ---------------------------------------------------------------------------
# mixture fraction


class DegenerateStreamsError(ValueError):
    pass


def element_mass_fractions(mech: Mechanism, Y_full: np.ndarray) -> dict[str, float]:
    Y_full = np.asarray(Y_full, dtype=float)
    out = {}
    for el in mech.elements:
        total = 0.0
        for sp, Yk in zip(mech.species, Y_full):
            n = sp.composition.get(el.symbol, 0)
            if n:
                total += n * el.atomic_weight * Yk / sp.molecular_weight
        out[el.symbol] = total
    return out


_BILGER_WEIGHTS = {"C": 2.0, "H": 0.5, "O": -1.0}


def bilger_beta(mech: Mechanism, Y_full: np.ndarray) -> float:
    Z = element_mass_fractions(mech, Y_full)
    weights = {el.symbol: el.atomic_weight for el in mech.elements}
    return sum(c * Z[e] / weights[e] for e, c in _BILGER_WEIGHTS.items() if e in Z)


def bilger_z(mech: Mechanism, Y_full: np.ndarray) -> float:
    """Bilger mixture fraction of a full mass-fraction vector."""
    Y_full = np.asarray(Y_full, dtype=float)
    if abs(Y_full.sum() - 1.0) > 1e-8:
        raise ValueError(f"mass fractions sum to {Y_full.sum()!r}")
    b_fuel = bilger_beta(mech, mech.mass_fractions(mech.fuel_stream))
    b_ox = bilger_beta(mech, mech.mass_fractions(mech.oxidizer_stream))
    if b_fuel == b_ox:
        raise DegenerateStreamsError("fuel and oxidizer streams have the same Bilger coupling function")
    z = (bilger_beta(mech, Y_full) - b_ox) / (b_fuel - b_ox)
    return min(max(z, 0.0), 1.0)


class BilgerMap:
    """Precomputed linear map from full mass fractions to Z, for whole fields."""

    def __init__(self, mech: Mechanism):
        n = mech.n_species
        coeff = np.zeros(n)
        weights = {el.symbol: el.atomic_weight for el in mech.elements}
        for k, sp in enumerate(mech.species):
            for e, c in _BILGER_WEIGHTS.items():
                if e in weights:
                    coeff[k] += c * sp.composition.get(e, 0) / sp.molecular_weight
        self.coeff = coeff
        self.b_fuel = float(coeff @ mech.mass_fractions(mech.fuel_stream))
        self.b_ox = float(coeff @ mech.mass_fractions(mech.oxidizer_stream))
        if self.b_fuel == self.b_ox:
            raise DegenerateStreamsError("fuel and oxidizer streams have the same Bilger coupling function")

    def __call__(self, Y_full: np.ndarray) -> np.ndarray:
        z = (np.asarray(Y_full) @ self.coeff - self.b_ox) / (self.b_fuel - self.b_ox)
        return np.clip(z, 0.0, 1.0)
