"""Shear-layer iteration loop and the single-cell timing sweep.

Each shear-layer iteration runs refmap assignment, problem construction,
the mode-dependent solve on P worker threads, result assembly and a mixing
step.  Workers are timed with per-thread CPU clocks around solve calls only.
The reported wall time models a parallel machine: the slowest worker's busy
time per iteration, summed over iterations, plus the serial mixing time.
Actual elapsed time is reported alongside.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from chembalance.balancer import CellSolveError, ChemistryProblem, imbalance_ratio, run_group
from chembalance.kinetics import CompositionVector, State, _state
from chembalance.mechanism import Mechanism
from chembalance.odesolver import IntegratorStats, ToleranceSpec, solve_state
from chembalance.refmap import RefMapConfig, ZoneAssignment, apply_mapping, assign_zones

from chembalance.harness.config import RunConfig
from chembalance.harness.field import FieldState, init_shear_layer, mixing_step


@dataclass(frozen=True)
class Mode:
    jacobian: str
    balance: bool
    refmap: bool


MODES = {
    "standard": Mode("fd", False, False),
    "balanced": Mode("fd", True, True),
    "balanced-analytic": Mode("analytic", True, True),
}

# first-iteration cost estimate; any uniform value works
UNIFORM_COST = 1e-4


class BenchmarkError(RuntimeError):
    pass


@dataclass
class BenchmarkReport:
    mode: str
    workers: int
    busy: np.ndarray  # (iterations, workers) seconds
    explicit: np.ndarray  # (iterations, workers) cells solved by each owner's problem set
    mapped: np.ndarray
    moved: np.ndarray  # (iterations,) cells shipped to another worker
    mixing_s: float
    elapsed_s: float
    stats: IntegratorStats
    max_T: float
    baseline_wall: Optional[float] = None
    baseline_name: str = "self"
    final_field: Optional[FieldState] = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        return self.busy.shape[0]

    @property
    def imbalance(self) -> np.ndarray:
        return np.array([imbalance_ratio(row) for row in self.busy])

    def mean_imbalance(self, first: int = 10, last: int = 50) -> float:
        """Mean ratio over iterations first..last, counted from 1, inclusive."""
        sel = self.imbalance[first - 1 : last]
        if sel.size == 0:
            raise ValueError(f"no iterations in {first}..{last}")
        return float(sel.mean())

    @property
    def wall_s(self) -> float:
        return float(self.busy.max(axis=1).sum() + self.mixing_s) if self.iterations else self.mixing_s

    @property
    def chi_su(self) -> float:
        if self.baseline_wall is None:
            return 1.0
        return self.baseline_wall / self.wall_s

    def with_baseline(self, baseline: BenchmarkReport, name: str | None = None) -> BenchmarkReport:
        self.baseline_wall = baseline.wall_s
        self.baseline_name = name or baseline.mode
        return self


def partition(n_cells: int, workers: int) -> list[np.ndarray]:
    """Contiguous id blocks, one per worker (x-row blocks for the shear layer)."""
    return np.array_split(np.arange(n_cells), workers)


def _warm_up(mech: Mechanism, field: FieldState, tol: ToleranceSpec, fd_eta: float) -> None:
    # load compiled kernels before anything is timed
    y0 = field.states[0].copy()
    for use_fd in (False, True):
        solve_state(mech.tables, field.p, y0, 1e-9, tol, use_fd, fd_eta, np.empty_like(y0))


def _assign(ids, field: FieldState, cfg: RefMapConfig, use_refmap: bool) -> ZoneAssignment:
    active = cfg if use_refmap else RefMapConfig(cfg.z_bins, cfg.eps_z, cfg.eps_t, enabled=False)
    return assign_zones(ids, field.Z[ids], field.T[ids], active)


def chemistry_step(
    field: FieldState,
    mech: Mechanism,
    config: RunConfig,
    mode: Mode,
    blocks: Sequence[np.ndarray],
    cost: np.ndarray,
    use_refmap: bool,
):
    """Advance the chemistry of every cell by one dt.

    Returns the new state array, per-worker busy/explicit/mapped counts, the
    number of shipped cells and summed integrator stats.  ``cost`` is read
    for estimates and updated with measured costs in place.
    """
    P = len(blocks)
    assignments = [_assign(ids, field, config.refmap, use_refmap) for ids in blocks]
    problems = []
    for asg in assignments:
        problems.append(
            [
                ChemistryProblem(int(c), CompositionVector(field.states[c, 0], field.states[c, 1:]), field.p, config.dt, float(cost[c]))
                for c in asg.cell_ids[asg.explicit]
            ]
        )
    try:
        results, _ = run_group(problems, mech, config.tolerance, mode.jacobian, config.theta, mode.balance, config.fd_eta)
    except CellSolveError as exc:
        c = exc.cell_id
        raise BenchmarkError(
            f"chemistry failed in cell {c} (x-row {c // field.ny}, y-col {c % field.ny}, T = {field.states[c, 0]:.1f} K): {exc.cause}"
        ) from exc

    new = np.empty_like(field.states)
    busy = np.zeros(P)
    explicit = np.zeros(P, dtype=np.int64)
    mapped = np.zeros(P, dtype=np.int64)
    stats = IntegratorStats()
    moved = 0
    for r, (asg, (sols, rec)) in enumerate(zip(assignments, results)):
        solved = {}
        for s in sols:
            solved[s.cell_id] = s.phi_new.as_array()
            cost[s.cell_id] = s.measured_cost
            stats = stats + s.stats
        new[asg.cell_ids] = apply_mapping(asg, field.states[asg.cell_ids], solved)
        busy[r] = rec.busy_s
        explicit[r] = asg.n_explicit
        mapped[r] = asg.n_mapped
        moved += rec.sent
    return new, busy, explicit, mapped, moved, stats


def run_benchmark(
    config: RunConfig,
    mech: Mechanism | None = None,
    baseline: BenchmarkReport | None = None,
    snapshot: Callable[[int, FieldState], None] | None = None,
    on_iteration: Callable[[int, np.ndarray], None] | None = None,
) -> BenchmarkReport:
    """Run the shear-layer benchmark described by ``config``.

    ``snapshot(iteration, field)`` is called every ``config.snapshot_every``
    iterations (and for the initial field) when given.
    """
    mode = MODES[config.mode]
    use_refmap = mode.refmap and config.refmap.enabled
    mech = mech or config.load_mechanism()
    field = init_shear_layer(config, mech)
    P = config.workers
    blocks = partition(field.n_cells, P)
    cost = np.full(field.n_cells, UNIFORM_COST)
    _warm_up(mech, field, config.tolerance, config.fd_eta)

    n = config.iterations
    busy = np.zeros((n, P))
    explicit = np.zeros((n, P), dtype=np.int64)
    mapped = np.zeros((n, P), dtype=np.int64)
    moved = np.zeros(n, dtype=np.int64)
    stats = IntegratorStats()
    mixing_s = 0.0
    if snapshot and config.snapshot_every:
        snapshot(0, field)
    t_start = time.perf_counter()
    for it in range(n):
        new, busy[it], explicit[it], mapped[it], moved[it], st = chemistry_step(
            field, mech, config, mode, blocks, cost, use_refmap
        )
        stats = stats + st
        field.states = new
        t0 = time.perf_counter()
        field = mixing_step(field, config.diffusivity, config.dt)
        mixing_s += time.perf_counter() - t0
        if on_iteration:
            on_iteration(it + 1, busy[it])
        if snapshot and config.snapshot_every and (it + 1) % config.snapshot_every == 0:
            snapshot(it + 1, field)
    elapsed = time.perf_counter() - t_start

    report = BenchmarkReport(
        config.mode, P, busy, explicit, mapped, moved, mixing_s, elapsed, stats,
        float(field.T.max()), final_field=field,
    )
    if baseline is not None:
        report.with_baseline(baseline)
    return report


# ---------------------------------------------------------------------------
# single cell


@dataclass(frozen=True)
class SingleCellRow:
    abstol: float
    reltol: float
    mode: str
    mean_s: float
    rhs_evals: int
    jacobian_evals: int


def single_cell_benchmark(
    mech: Mechanism,
    phi0: State,
    p: float,
    dt: float,
    sweep: Sequence[tuple[float, float]],
    modes: Sequence[str] = ("analytic", "fd"),
    reps: int = 10,
    fd_eta: float = 1e-6,
) -> list[SingleCellRow]:
    """Mean CPU time of one full solve per (tolerance, mode).

    Every repetition runs all (tolerance, mode) pairs in turn, so slow
    drifts of the machine affect them alike.  Counts are per solve (they do
    not vary).
    """
    if reps < 3:
        raise ValueError("at least 3 repetitions are needed for a mean")
    y0 = _state(phi0)
    out = np.empty_like(y0)
    cases = [(ToleranceSpec(a, r), m) for a, r in sweep for m in modes]
    counts = []
    for tol, m in cases:
        # untimed pass; also catches failures before timing starts
        res, st = solve_state(mech.tables, p, y0, dt, tol, m == "fd", fd_eta, out)
        if res is None:
            raise BenchmarkError(f"single-cell solve failed in mode {m} at tol {tol}: status {st[0]}")
        counts.append((st.rhs_evals, st.jacobian_evals))
    total = np.zeros(len(cases))
    for _ in range(reps):
        for k, (tol, m) in enumerate(cases):
            _, st = solve_state(mech.tables, p, y0, dt, tol, m == "fd", fd_eta, out)
            total[k] += st.cpu_time
    return [
        SingleCellRow(tol.abstol, tol.reltol, m, float(total[k] / reps), *counts[k])
        for k, (tol, m) in enumerate(cases)
    ]


SINGLE_CELL_COLUMNS = ("abstol", "reltol", "mode", "mean_seconds", "rhs_evals", "jacobian_evals")


def write_single_cell_csv(rows: Sequence[SingleCellRow], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SINGLE_CELL_COLUMNS)
        for r in rows:
            w.writerow([repr(r.abstol), repr(r.reltol), r.mode, f"{r.mean_s:.9e}", r.rhs_evals, r.jacobian_evals])
    return path
