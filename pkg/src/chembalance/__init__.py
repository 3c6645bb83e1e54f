"""Load-balanced finite-rate chemistry with an analytical Jacobian."""

from chembalance.mechanism import (
    Mechanism,
    MechanismError,
    bundled_mechanism,
    load_mechanism,
    parse_mechanism,
)

__version__ = "0.1.0"

__all__ = [
    "Mechanism",
    "MechanismError",
    "bundled_mechanism",
    "load_mechanism",
    "parse_mechanism",
]
