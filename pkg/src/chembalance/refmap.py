"""Zonal reference mapping.

Cells are binned by mixture fraction.  In each zone the lowest cell id is
the reference and is always solved; any other cell close enough to the
reference in Z and T reuses the reference's chemical increment instead of
being solved.  Everything here works on one worker's cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


class RefMapInvariantError(RuntimeError):
    pass


@dataclass(frozen=True)
class RefMapConfig:
    z_bins: int = 20
    eps_z: float = 1e-3
    eps_t: float = 10.0
    enabled: bool = True

    def __post_init__(self):
        if self.z_bins < 1:
            raise ValueError("z_bins must be at least 1")
        if not (self.eps_z >= 0 and self.eps_t >= 0):
            raise ValueError("similarity tolerances must be nonnegative")


@dataclass(frozen=True)
class ZoneAssignment:
    """Per-cell zone, reference position and disposition for one cell set.

    ``ref_pos[i]`` is the position (not the id) of cell i's zone reference;
    ``mapped[i]`` is True when the cell borrows its reference's increment.
    """

    cell_ids: np.ndarray
    zone: np.ndarray
    ref_pos: np.ndarray
    mapped: np.ndarray
    references: dict[int, int]

    @property
    def explicit(self) -> np.ndarray:
        return ~self.mapped

    @property
    def n_explicit(self) -> int:
        return int(self.explicit.sum())

    @property
    def n_mapped(self) -> int:
        return int(self.mapped.sum())


def assign_zones(cell_ids: Sequence[int], Z: Sequence[float], T: Sequence[float], config: RefMapConfig) -> ZoneAssignment:
    ids = np.asarray(cell_ids, dtype=np.int64)
    Z = np.asarray(Z, dtype=float)
    T = np.asarray(T, dtype=float)
    n = ids.size
    if Z.shape != (n,) or T.shape != (n,):
        raise ValueError("cell_ids, Z and T must have equal lengths")
    if n and (Z.min() < 0 or Z.max() > 1):
        raise ValueError("mixture fraction must lie in [0, 1]")
    zone = np.clip(np.floor(Z * config.z_bins).astype(np.int64), 0, config.z_bins - 1)
    if not config.enabled:
        return ZoneAssignment(ids, zone, np.arange(n), np.zeros(n, dtype=bool), {})

    ref_pos = np.empty(n, dtype=np.int64)
    references = {}
    # lowest id per zone: sort by (zone, id) and take each run's first entry
    order = np.lexsort((ids, zone))
    if n:
        starts = np.flatnonzero(np.r_[True, zone[order][1:] != zone[order][:-1]])
        bounds = np.r_[starts, n]
        for a, b in zip(bounds[:-1], bounds[1:]):
            head = order[a]
            ref_pos[order[a:b]] = head
            references[int(zone[head])] = int(ids[head])
    mapped = (
        (ref_pos != np.arange(n))
        & (np.abs(Z - Z[ref_pos]) <= config.eps_z)
        & (np.abs(T - T[ref_pos]) <= config.eps_t)
    )
    return ZoneAssignment(ids, zone, ref_pos, mapped, references)


def apply_mapping(assignment: ZoneAssignment, old: np.ndarray, solved: Mapping[int, np.ndarray]) -> np.ndarray:
    """Assemble new states for all cells of ``assignment``.

    ``old`` holds the pre-chemistry state rows (T, Y_1..Y_{N-1}) in assignment
    order; ``solved`` maps every explicit cell id to its new state row.  A
    mapped cell gets ``own + (ref_new - ref_old)`` with the stored mass
    fractions clipped to [0, 1]; a cell identical to its reference gets a
    copy of the reference result.
    """
    old = np.asarray(old, dtype=float)
    new = np.empty_like(old)
    ids = assignment.cell_ids
    for i in np.flatnonzero(assignment.explicit):
        try:
            new[i] = solved[int(ids[i])]
        except KeyError:
            raise RefMapInvariantError(f"no solution for explicitly solved cell {ids[i]}") from None
    for i in np.flatnonzero(assignment.mapped):
        r = assignment.ref_pos[i]
        if assignment.mapped[r]:
            raise RefMapInvariantError(f"reference cell {ids[r]} is itself mapped")
        if np.array_equal(old[i], old[r]):
            new[i] = new[r]
            continue
        row = old[i] + (new[r] - old[r])
        y = np.clip(row[1:], 0.0, 1.0)
        total = math.fsum(y)
        if total > 1.0:
            # keep the implied species nonnegative
            y /= total
        row[1:] = y
        new[i] = row
    return new
