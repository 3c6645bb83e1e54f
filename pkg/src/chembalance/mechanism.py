"""Kinetic mechanism data model and the line-oriented mechanism file parser.

A mechanism file has four sections, each opened by its keyword on a line of
its own and closed by ``END``::

    ELEMENTS
    H  1.00794
    END
    SPECIES
    H2  H:2  200 1000 3500
        a1 .. a7 (low range)
        a1 .. a7 (high range)
    END
    REACTIONS
    H + O2 <=> O + OH     3.547e15  -0.406  16599
    H + O2 + M => HO2 + M 6.366e20 -1.72 524.8   M( H2:2.0 H2O:11 )
    END
    STREAMS
    fuel      H2:1.0
    oxidizer  O2:0.233 N2:0.767
    END

``#`` starts a comment.  A line beginning with whitespace continues the
previous entry, so NASA coefficient blocks can be wrapped freely.  Reaction
rate parameters are in the Chemkin convention (mol, cm^3, s, cal/mol); the
conversion to SI happens once, when the evaluation tables are built.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

#: Universal gas constant, J/(kmol K).
R_UNIVERSAL = 8314.462618
#: Gas constant in cal/(mol K), the unit of activation energies.
R_CAL = 1.9872036
ONE_ATM = 101325.0

_SECTIONS = ("ELEMENTS", "SPECIES", "REACTIONS", "STREAMS")


class MechanismError(ValueError):
    """Raised when a mechanism file is malformed or fails validation."""


class ElementImbalanceError(MechanismError):
    def __init__(self, reaction: str, deficit: Mapping[str, float]):
        self.reaction = reaction
        self.deficit = dict(deficit)
        parts = ", ".join(f"{e}: {d:+g}" for e, d in self.deficit.items())
        super().__init__(
            f"reaction '{reaction}' does not balance elements "
            f"(products minus reactants: {parts})"
        )


class ThermoRangeError(ValueError):
    """Temperature outside a species' NASA polynomial validity range."""

    def __init__(self, species: str, T: float, t_low: float, t_high: float):
        self.species = species
        self.T = T
        super().__init__(
            f"T = {T:g} K outside [{t_low:g}, {t_high:g}] K for species {species}"
        )


@dataclass(frozen=True)
class Element:
    symbol: str
    atomic_weight: float  # kg/kmol

    def __post_init__(self):
        if not self.atomic_weight > 0:
            raise MechanismError(f"element {self.symbol}: atomic weight must be positive")


@dataclass(frozen=True)
class SpeciesSpec:
    """A species with its elemental composition and NASA-7 thermo fit.

    ``low`` and ``high`` hold a1..a7 for [t_low, t_mid] and [t_mid, t_high].
    """

    name: str
    composition: Mapping[str, int]
    molecular_weight: float  # kg/kmol
    t_low: float
    t_mid: float
    t_high: float
    low: tuple[float, ...]
    high: tuple[float, ...]

    def coefficients(self, T: float) -> tuple[float, ...]:
        return self.low if T <= self.t_mid else self.high


@dataclass(frozen=True)
class ReactionSpec:
    reactants: Mapping[str, int]
    products: Mapping[str, int]
    A: float  # mol, cm^3, s, K
    b: float
    Ea: float  # cal/mol
    reversible: bool = True
    third_body: Mapping[str, float] | None = None
    equation: str = ""

    @property
    def is_third_body(self) -> bool:
        return self.third_body is not None

    def efficiency(self, species: str) -> float:
        if self.third_body is None:
            return 0.0
        return self.third_body.get(species, 1.0)

    @property
    def order(self) -> int:
        """Molecularity of the forward rate law, counting M as one."""
        return sum(self.reactants.values()) + (1 if self.is_third_body else 0)

    @property
    def delta_nu(self) -> int:
        return sum(self.products.values()) - sum(self.reactants.values())


@dataclass(frozen=True)
class Mechanism:
    elements: tuple[Element, ...]
    species: tuple[SpeciesSpec, ...]
    reactions: tuple[ReactionSpec, ...]
    fuel_stream: Mapping[str, float] = field(default_factory=dict)
    oxidizer_stream: Mapping[str, float] = field(default_factory=dict)
    name: str = ""

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_state(self) -> int:
        """Length of the state vector (T, Y_1 .. Y_{N-1})."""
        return len(self.species)

    @property
    def species_names(self) -> list[str]:
        return [s.name for s in self.species]

    def species_index(self, name: str) -> int:
        try:
            return self.species_names.index(name)
        except ValueError:
            raise KeyError(f"unknown species {name!r}") from None

    @cached_property
    def molecular_weights(self) -> np.ndarray:
        return np.array([s.molecular_weight for s in self.species])

    def mass_fractions(self, composition: Mapping[str, float]) -> np.ndarray:
        """Full mass-fraction vector from a ``{species: Y}`` mapping."""
        Y = np.zeros(self.n_species)
        for name, value in composition.items():
            Y[self.species_index(name)] = value
        return Y

    def with_streams(self, fuel: Mapping[str, float], oxidizer: Mapping[str, float]) -> Mechanism:
        mech = replace(self, fuel_stream=dict(fuel), oxidizer_stream=dict(oxidizer))
        mech._check_streams()
        return mech

    @cached_property
    def tables(self):
        """Flat SI arrays consumed by the compiled kernels (built once)."""
        from chembalance._chem import build_tables

        return build_tables(self)

    def _check_streams(self) -> None:
        names = set(self.species_names)
        for label, stream in (("fuel", self.fuel_stream), ("oxidizer", self.oxidizer_stream)):
            if not stream:
                continue
            unknown = set(stream) - names
            if unknown:
                raise MechanismError(f"{label} stream names unknown species {sorted(unknown)}")
            if any(v < 0 for v in stream.values()):
                raise MechanismError(f"{label} stream has negative mass fractions")
            total = math.fsum(stream.values())
            if abs(total - 1.0) > 1e-10:
                raise MechanismError(f"{label} stream mass fractions sum to {total!r}, not 1")


def molecular_weight(composition: Mapping[str, int], elements: Mapping[str, Element]) -> float:
    return math.fsum(count * elements[e].atomic_weight for e, count in composition.items())


def check_thermo_continuity(sp: SpeciesSpec, rtol: float = 1e-3) -> None:
    """Raise if cp, h or s jump by more than ``rtol`` at the midpoint temperature."""
    from chembalance.kinetics import nasa_eval

    T = sp.t_mid
    lo = nasa_eval(sp.low, T)
    hi = nasa_eval(sp.high, T)
    # h/RT and s/R can pass through zero; compare against an O(1) floor.
    for label, a, b in zip(("cp", "h", "s"), lo, hi):
        scale = max(abs(a), abs(b), 1.0)
        if abs(a - b) > rtol * scale:
            raise MechanismError(
                f"species {sp.name}: {label} discontinuous at T_mid={T:g} K "
                f"(low {a:.6g}, high {b:.6g})"
            )


def check_element_balance(r: ReactionSpec, species: Mapping[str, SpeciesSpec]) -> None:
    atoms: dict[str, int] = {}
    for name, nu in r.reactants.items():
        for e, n in species[name].composition.items():
            atoms[e] = atoms.get(e, 0) - nu * n
    for name, nu in r.products.items():
        for e, n in species[name].composition.items():
            atoms[e] = atoms.get(e, 0) + nu * n
    deficit = {e: d for e, d in atoms.items() if d != 0}
    if deficit:
        raise ElementImbalanceError(r.equation, deficit)


# ---------------------------------------------------------------------------
# parsing


def _logical_lines(text: str):
    """Yield (lineno, tokens) with continuation lines folded into their entry."""
    entry: list[str] = []
    start = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        if line[0].isspace() and entry:
            entry.extend(line.split())
            continue
        if entry:
            yield start, entry
        entry, start = line.split(), lineno
    if entry:
        yield start, entry


_TB_RE = re.compile(r"M\(\s*(.*?)\s*\)")
_ARROW_RE = re.compile(r"\s*(<=>|=>|=)\s*")


def _parse_pairs(tokens, cast, where: str) -> dict:
    out = {}
    for tok in tokens:
        name, sep, value = tok.partition(":")
        if not sep or not name:
            raise MechanismError(f"{where}: expected name:value, got {tok!r}")
        try:
            out[name] = out.get(name, 0) + cast(value)
        except ValueError:
            raise MechanismError(f"{where}: bad value in {tok!r}") from None
    return out


def _parse_side(side: str, where: str) -> tuple[dict[str, int], bool]:
    stoich: dict[str, int] = {}
    has_m = False
    for term in side.split(" + "):
        term = term.strip()
        if not term:
            raise MechanismError(f"{where}: empty term in '{side}'")
        if term == "M":
            has_m = True
            continue
        m = re.fullmatch(r"(\d+)\s*(\S+)", term)
        coeff, name = (int(m.group(1)), m.group(2)) if m else (1, term)
        if coeff < 1:
            raise MechanismError(f"{where}: stoichiometric coefficient must be >= 1")
        stoich[name] = stoich.get(name, 0) + coeff
    return stoich, has_m


def _parse_reaction(tokens: list[str], where: str) -> ReactionSpec:
    line = " ".join(tokens)
    third_body = None
    m = _TB_RE.search(line)
    if m:
        third_body = _parse_pairs(m.group(1).split(), float, where)
        line = (line[: m.start()] + line[m.end():]).strip()
    parts = line.split()
    if len(parts) < 4:
        raise MechanismError(f"{where}: reaction needs an equation and A, b, Ea")
    try:
        A, b, Ea = (float(x) for x in parts[-3:])
    except ValueError:
        raise MechanismError(f"{where}: could not read A, b, Ea from {parts[-3:]}") from None
    equation = " ".join(parts[:-3])
    arrow = _ARROW_RE.search(equation)
    if arrow is None:
        raise MechanismError(f"{where}: no '=>' or '<=>' in '{equation}'")
    reversible = arrow.group(1) != "=>"
    reactants, m_left = _parse_side(equation[: arrow.start()], where)
    products, m_right = _parse_side(equation[arrow.end():], where)
    if m_left != m_right:
        raise MechanismError(f"{where}: M must appear on both sides or neither")
    if m_left and third_body is None:
        third_body = {}
    if third_body is not None and not m_left:
        raise MechanismError(f"{where}: efficiencies given but no '+ M' in equation")
    if not A > 0:
        raise MechanismError(f"{where}: pre-exponential factor must be positive, got {A:g}")
    return ReactionSpec(
        reactants=reactants,
        products=products,
        A=A,
        b=b,
        Ea=Ea,
        reversible=reversible,
        third_body=third_body,
        equation=equation,
    )


def _parse_species(tokens: list[str], elements: Mapping[str, Element], where: str) -> SpeciesSpec:
    name = tokens[0]
    comp_tokens = [t for t in tokens[1:] if ":" in t]
    numbers = tokens[1 + len(comp_tokens):]
    if tokens[1 : 1 + len(comp_tokens)] != comp_tokens:
        raise MechanismError(f"{where}: composition must precede the thermo data")
    composition = _parse_pairs(comp_tokens, int, where)
    unknown = set(composition) - set(elements)
    if unknown:
        raise MechanismError(f"{where}: species {name} uses undeclared elements {sorted(unknown)}")
    if len(numbers) != 17:
        raise MechanismError(
            f"{where}: species {name} needs Tlow Tmid Thigh and 14 NASA coefficients, "
            f"got {len(numbers)} numbers"
        )
    try:
        values = [float(x) for x in numbers]
    except ValueError:
        raise MechanismError(f"{where}: non-numeric thermo data for {name}") from None
    t_low, t_mid, t_high = values[:3]
    if not (0 < t_low < t_mid < t_high):
        raise MechanismError(f"{where}: species {name} needs 0 < Tlow < Tmid < Thigh")
    return SpeciesSpec(
        name=name,
        composition=composition,
        molecular_weight=molecular_weight(composition, elements),
        t_low=t_low,
        t_mid=t_mid,
        t_high=t_high,
        low=tuple(values[3:10]),
        high=tuple(values[10:17]),
    )


def parse_mechanism(text: str, name: str = "") -> Mechanism:
    """Parse and fully validate mechanism file content."""
    section = None
    elements: dict[str, Element] = {}
    species: dict[str, SpeciesSpec] = {}
    reactions: list[ReactionSpec] = []
    streams: dict[str, dict[str, float]] = {}

    for lineno, tokens in _logical_lines(text):
        where = f"line {lineno}"
        head = tokens[0]
        if section is None:
            if head not in _SECTIONS or len(tokens) != 1:
                raise MechanismError(f"{where}: expected a section keyword, got {head!r}")
            section = head
            continue
        if head == "END" and len(tokens) == 1:
            section = None
            continue
        if section == "ELEMENTS":
            if len(tokens) != 2:
                raise MechanismError(f"{where}: element entry is 'symbol weight'")
            if head in elements:
                raise MechanismError(f"{where}: duplicate element {head}")
            try:
                weight = float(tokens[1])
            except ValueError:
                raise MechanismError(f"{where}: bad atomic weight {tokens[1]!r}") from None
            elements[head] = Element(head, weight)
        elif section == "SPECIES":
            sp = _parse_species(tokens, elements, where)
            if sp.name in species:
                raise MechanismError(f"{where}: duplicate species {sp.name}")
            species[sp.name] = sp
        elif section == "REACTIONS":
            reactions.append(_parse_reaction(tokens, where))
        else:
            if head not in ("fuel", "oxidizer"):
                raise MechanismError(f"{where}: stream must be 'fuel' or 'oxidizer'")
            streams[head] = _parse_pairs(tokens[1:], float, where)
    if section is not None:
        raise MechanismError(f"section {section} is missing its END")
    if not species:
        raise MechanismError("mechanism declares no species")

    for sp in species.values():
        check_thermo_continuity(sp)
    for r in reactions:
        used = set(r.reactants) | set(r.products) | set(r.third_body or {})
        unknown = used - set(species)
        if unknown:
            raise MechanismError(f"reaction '{r.equation}' references unknown species {sorted(unknown)}")
        check_element_balance(r, species)

    mech = Mechanism(
        elements=tuple(elements.values()),
        species=tuple(species.values()),
        reactions=tuple(reactions),
        fuel_stream=streams.get("fuel", {}),
        oxidizer_stream=streams.get("oxidizer", {}),
        name=name,
    )
    mech._check_streams()
    return mech


def load_mechanism(path: str | Path) -> Mechanism:
    path = Path(path)
    return parse_mechanism(path.read_text(), name=path.stem)


def bundled_mechanism(name: str = "h2o2") -> Mechanism:
    """Load one of the mechanisms shipped in ``chembalance/data``."""
    text = resources.files("chembalance").joinpath("data").joinpath(f"{name}.mech").read_text()
    return parse_mechanism(text, name=name)
