"""Redistribution of per-cell chemistry problems between workers.

Each iteration every worker publishes the estimated costs of its problems,
all workers derive the same :class:`BalancePlan` from that shared picture,
busy workers ship problems to idle ones, and guest solutions travel back.

Wire format (all little-endian)::

    problems:   int64 count, then per problem
                int64 cell_id, f64 dt, f64 p, f64 T, f64 Y[n_y], f64 cost_estimate
    solutions:  int64 count, then per solution
                int64 cell_id, f64 T, f64 Y[n_y], f64 measured_cost,
                int64 accepted, rejected, rhs_evals, jacobian_evals, lu_factorizations,
                f64 cpu_time
    cost lists: int64 count, then per problem int64 cell_id, f64 cost_estimate

``n_y`` is the number of stored mass fractions (species count minus one);
both ends know it from the mechanism.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from chembalance.kinetics import CompositionVector
from chembalance.mechanism import Mechanism
from chembalance.odesolver import (
    JACOBIAN_MODES,
    IntegratorStats,
    StiffnessError,
    ToleranceSpec,
    solve_state,
)

THETA = 0.02


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ChemistryProblem:
    cell_id: int
    phi: CompositionVector
    p: float
    dt: float
    cost_estimate: float = 1.0

    def __post_init__(self):
        if not self.cost_estimate >= 0:
            raise ValueError(f"cell {self.cell_id}: negative cost estimate")


@dataclass(frozen=True)
class ChemistrySolution:
    cell_id: int
    phi_new: CompositionVector
    measured_cost: float
    stats: IntegratorStats


@dataclass(frozen=True)
class LoadVector:
    """Estimated total cost per worker rank."""

    loads: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "loads", tuple(float(x) for x in self.loads))
        if not self.loads:
            raise ValueError("load vector needs at least one worker")
        if any(not x >= 0 for x in self.loads):
            raise ValueError("loads must be nonnegative")

    def __len__(self):
        return len(self.loads)

    @property
    def mean(self) -> float:
        return sum(self.loads) / len(self.loads)


@dataclass(frozen=True)
class Transfer:
    from_rank: int
    to_rank: int
    cell_ids: tuple[int, ...]
    cost: float


@dataclass(frozen=True)
class BalancePlan:
    transfers: tuple[Transfer, ...] = ()

    def outgoing(self, rank: int) -> list[Transfer]:
        return [t for t in self.transfers if t.from_rank == rank]

    def incoming(self, rank: int) -> list[Transfer]:
        return [t for t in self.transfers if t.to_rank == rank]

    def __bool__(self):
        return bool(self.transfers)


# ---------------------------------------------------------------------------
# planning


def _by_magnitude(entries):
    # descending by |load - mean|, ties by ascending rank
    return sorted(entries, key=lambda e: (-e[1], e[0]))


def compute_plan(
    loads: LoadVector | Sequence[float],
    costs: Sequence[Sequence[tuple[int, float]]],
    theta: float = THETA,
) -> BalancePlan:
    """Greedy surplus/deficit pairing.

    ``costs[r]`` lists ``(cell_id, cost)`` for worker r.  Senders offer their
    problems highest cost first (ties by cell id); a problem moves only if it
    fits in both the sender's remaining surplus and the receiver's remaining
    deficit, so no worker crosses the mean.  A transfer whose total cost does
    not exceed ``theta * mean`` is dropped.
    """
    if not isinstance(loads, LoadVector):
        loads = LoadVector(tuple(loads))
    P = len(loads)
    if len(costs) != P:
        raise ValueError(f"{len(costs)} cost lists for {P} workers")
    mu = loads.mean
    senders = _by_magnitude([(r, x - mu) for r, x in enumerate(loads.loads) if x > mu])
    receivers = _by_magnitude([(r, mu - x) for r, x in enumerate(loads.loads) if x < mu])
    pool = {
        r: sorted(((float(c), int(cid)) for cid, c in costs[r]), key=lambda e: (-e[0], e[1]))
        for r, _ in senders
    }

    transfers = []
    i = j = 0
    surplus = senders[0][1] if senders else 0.0
    deficit = receivers[0][1] if receivers else 0.0
    while i < len(senders) and j < len(receivers):
        s, r = senders[i][0], receivers[j][0]
        room = min(surplus, deficit)
        moved, total, keep = [], 0.0, []
        for c, cid in pool[s]:
            if c <= room - total:
                moved.append(cid)
                total += c
            else:
                keep.append((c, cid))
        sender_bound = surplus <= deficit
        if moved and total > theta * mu:
            transfers.append(Transfer(s, r, tuple(moved), total))
            pool[s] = keep
            surplus -= total
            deficit -= total
        # advance whichever side bounded this pairing
        if sender_bound:
            i += 1
            surplus = senders[i][1] if i < len(senders) else 0.0
        else:
            j += 1
            deficit = receivers[j][1] if j < len(receivers) else 0.0
    return BalancePlan(tuple(transfers))


def apply_plan(loads: LoadVector | Sequence[float], plan: BalancePlan) -> tuple[float, ...]:
    """Estimated loads after executing ``plan``."""
    out = list(loads.loads if isinstance(loads, LoadVector) else loads)
    for t in plan.transfers:
        out[t.from_rank] -= t.cost
        out[t.to_rank] += t.cost
    return tuple(out)


def imbalance_ratio(times: Sequence[float]) -> float:
    """max / mean of per-worker busy times; 1 when nobody worked."""
    t = np.asarray(times, dtype=float)
    if t.size == 0:
        raise ValueError("need at least one worker")
    if np.any(t < 0):
        raise ValueError("busy times must be nonnegative")
    mean = t.mean()
    if mean == 0:
        return 1.0
    return float(t.max() / mean)


# ---------------------------------------------------------------------------
# wire format


class WireFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


_COUNT = np.dtype("<i8")


def problem_dtype(n_y: int) -> np.dtype:
    return np.dtype(
        [("cell_id", "<i8"), ("dt", "<f8"), ("p", "<f8"), ("T", "<f8"), ("Y", "<f8", (n_y,)), ("cost", "<f8")]
    )


def solution_dtype(n_y: int) -> np.dtype:
    return np.dtype(
        [("cell_id", "<i8"), ("T", "<f8"), ("Y", "<f8", (n_y,)), ("cost", "<f8"), ("counts", "<i8", (5,)), ("cpu", "<f8")]
    )


_COST_DTYPE = np.dtype([("cell_id", "<i8"), ("cost", "<f8")])


def _pack(records: np.ndarray) -> bytes:
    return np.array(len(records), dtype=_COUNT).tobytes() + records.tobytes()


def _unpack(buffer: bytes, dtype: np.dtype) -> np.ndarray:
    buffer = memoryview(buffer)
    if len(buffer) < 8:
        raise WireFormatError("buffer too short for the record count", 0)
    count = int(np.frombuffer(buffer[:8], dtype=_COUNT)[0])
    if count < 0:
        raise WireFormatError(f"negative record count {count}", 0)
    body = len(buffer) - 8
    whole = body // dtype.itemsize
    if whole < count:
        raise WireFormatError(f"truncated: {count} records announced, {whole} complete", 8 + whole * dtype.itemsize)
    if body != count * dtype.itemsize:
        raise WireFormatError("trailing bytes after the last record", 8 + count * dtype.itemsize)
    return np.frombuffer(buffer[8:], dtype=dtype, count=count)


def encode_problems(problems: Sequence[ChemistryProblem], n_y: int | None = None) -> bytes:
    if n_y is None:
        n_y = problems[0].phi.Y.size if problems else 0
    rec = np.empty(len(problems), dtype=problem_dtype(n_y))
    for i, pb in enumerate(problems):
        if pb.phi.Y.size != n_y:
            raise ValueError(f"cell {pb.cell_id} has {pb.phi.Y.size} mass fractions, expected {n_y}")
        rec[i] = (pb.cell_id, pb.dt, pb.p, pb.phi.T, pb.phi.Y, pb.cost_estimate)
    return _pack(rec)


def decode_problems(buffer: bytes, n_y: int) -> list[ChemistryProblem]:
    rec = _unpack(buffer, problem_dtype(n_y))
    return [
        ChemistryProblem(int(r["cell_id"]), CompositionVector(float(r["T"]), r["Y"].copy()), float(r["p"]), float(r["dt"]), float(r["cost"]))
        for r in rec
    ]


def encode_solutions(solutions: Sequence[ChemistrySolution], n_y: int) -> bytes:
    rec = np.empty(len(solutions), dtype=solution_dtype(n_y))
    for i, s in enumerate(solutions):
        st = s.stats
        counts = (st.steps_accepted, st.steps_rejected, st.rhs_evals, st.jacobian_evals, st.lu_factorizations)
        rec[i] = (s.cell_id, s.phi_new.T, s.phi_new.Y, s.measured_cost, counts, st.cpu_time)
    return _pack(rec)


def decode_solutions(buffer: bytes, n_y: int) -> list[ChemistrySolution]:
    rec = _unpack(buffer, solution_dtype(n_y))
    return [
        ChemistrySolution(
            int(r["cell_id"]),
            CompositionVector(float(r["T"]), r["Y"].copy()),
            float(r["cost"]),
            IntegratorStats.from_counts(r["counts"], float(r["cpu"])),
        )
        for r in rec
    ]


def encode_costs(pairs: Sequence[tuple[int, float]]) -> bytes:
    return _pack(np.array(list(pairs), dtype=_COST_DTYPE))


def decode_costs(buffer: bytes) -> list[tuple[int, float]]:
    return [(int(c), float(x)) for c, x in _unpack(buffer, _COST_DTYPE)]


# ---------------------------------------------------------------------------
# messaging


class MessengerError(RuntimeError):
    """Transport failure; the iteration cannot complete."""


class ProtocolError(RuntimeError):
    """A message arrived that the plan did not call for."""


TAG_COSTS, TAG_PROBLEMS, TAG_SOLUTIONS = "costs", "problems", "solutions"


class ThreadMessenger:
    """Endpoint of an in-process group with one FIFO channel per ordered pair.

    Build a group with :meth:`group`; hand endpoint r to the thread acting as
    rank r.  Channels are reliable and ordered, matching what an MPI
    transport would provide.
    """

    def __init__(self, rank: int, channels, timeout: float):
        self.rank = rank
        self._channels = channels
        self.size = len(channels)
        self.timeout = timeout

    @classmethod
    def group(cls, size: int, timeout: float = 120.0) -> list[ThreadMessenger]:
        if size < 1:
            raise ValueError("group needs at least one rank")
        channels = [[queue.SimpleQueue() for _ in range(size)] for _ in range(size)]
        return [cls(r, channels, timeout) for r in range(size)]

    def send(self, dest: int, tag: str, payload: bytes) -> None:
        if dest == self.rank:
            raise ProtocolError(f"rank {self.rank} sending to itself")
        self._channels[self.rank][dest].put((tag, bytes(payload)))

    def recv(self, source: int, tag: str) -> bytes:
        try:
            got, payload = self._channels[source][self.rank].get(timeout=self.timeout)
        except queue.Empty:
            raise MessengerError(f"rank {self.rank}: no message from rank {source} within {self.timeout} s") from None
        if got != tag:
            raise ProtocolError(f"rank {self.rank}: expected '{tag}' from rank {source}, got '{got}'")
        return payload

    def allgather(self, tag: str, payload: bytes) -> list[bytes]:
        for r in range(self.size):
            if r != self.rank:
                self.send(r, tag, payload)
        return [payload if r == self.rank else self.recv(r, tag) for r in range(self.size)]

    def assert_drained(self) -> None:
        for src in range(self.size):
            ch = self._channels[src][self.rank]
            if not ch.empty():
                tag, _ = ch.get()
                raise ProtocolError(f"rank {self.rank}: unplanned '{tag}' message from rank {src}")


# ---------------------------------------------------------------------------
# solving


class CellSolveError(RuntimeError):
    def __init__(self, cell_id: int, cause: StiffnessError):
        self.cell_id = cell_id
        self.cause = cause
        super().__init__(f"cell {cell_id}: {cause}")


def solve_problems(
    mech: Mechanism, problems: Sequence[ChemistryProblem], tol: ToleranceSpec, jacobian_mode: str, fd_eta: float = 1e-6
) -> tuple[list[ChemistrySolution], float]:
    """Solve in order; returns solutions and the summed per-solve CPU time."""
    if jacobian_mode not in JACOBIAN_MODES:
        raise ValueError(f"jacobian_mode must be one of {JACOBIAN_MODES}")
    use_fd = jacobian_mode == "fd"
    tab = mech.tables
    out = []
    busy = 0.0
    for pb in problems:
        y0 = pb.phi.as_array()
        y = np.empty_like(y0)
        res, stats = solve_state(tab, pb.p, y0, pb.dt, tol, use_fd, fd_eta, y)
        if res is None:
            status, t, h = stats
            raise CellSolveError(pb.cell_id, StiffnessError(f"integrator status {status}", y, t, h))
        busy += stats.cpu_time
        out.append(ChemistrySolution(pb.cell_id, CompositionVector(float(y[0]), y[1:]), stats.cpu_time, stats))
    return out, busy


@dataclass
class TimingRecord:
    rank: int
    busy_s: float = 0.0
    local_solved: int = 0
    guests_solved: int = 0
    sent: int = 0
    plan: BalancePlan = field(default_factory=BalancePlan)
    loads: tuple[float, ...] = ()


def run_balanced_iteration(
    problems: Sequence[ChemistryProblem],
    messenger: ThreadMessenger,
    mech: Mechanism,
    tol: ToleranceSpec,
    jacobian_mode: str,
    theta: float = THETA,
    balance: bool = True,
    fd_eta: float = 1e-6,
) -> tuple[list[ChemistrySolution], TimingRecord]:
    """One iteration of the redistribution protocol on this worker.

    Returns a solution for every local problem (guests solved elsewhere
    included) and this worker's timing record.
    """
    rank, size = messenger.rank, messenger.size
    n_y = mech.n_species - 1
    rec = TimingRecord(rank)
    if not balance or size == 1:
        sols, rec.busy_s = solve_problems(mech, problems, tol, jacobian_mode, fd_eta)
        rec.local_solved = len(sols)
        return sols, rec

    # phase 1: share cost pictures
    mine = [(pb.cell_id, pb.cost_estimate) for pb in problems]
    gathered = [decode_costs(b) for b in messenger.allgather(TAG_COSTS, encode_costs(mine))]
    loads = LoadVector(tuple(sum(c for _, c in g) for g in gathered))
    rec.loads = loads.loads

    # phase 2: every rank derives the same plan
    plan = compute_plan(loads, gathered, theta)
    rec.plan = plan

    # phase 3: ship, solve locals, then guests
    by_id = {pb.cell_id: pb for pb in problems}
    shipped = set()
    for t in plan.outgoing(rank):
        batch = [by_id[c] for c in t.cell_ids]
        shipped.update(t.cell_ids)
        messenger.send(t.to_rank, TAG_PROBLEMS, encode_problems(batch, n_y))
    rec.sent = len(shipped)
    local = [pb for pb in problems if pb.cell_id not in shipped]
    sols, rec.busy_s = solve_problems(mech, local, tol, jacobian_mode, fd_eta)
    rec.local_solved = len(sols)

    for t in plan.incoming(rank):
        guests = decode_problems(messenger.recv(t.from_rank, TAG_PROBLEMS), n_y)
        if [g.cell_id for g in guests] != list(t.cell_ids):
            raise ProtocolError(f"rank {rank}: guests from rank {t.from_rank} do not match the plan")
        guest_sols, busy = solve_problems(mech, guests, tol, jacobian_mode, fd_eta)
        rec.busy_s += busy
        rec.guests_solved += len(guest_sols)
        # phase 4: send solutions home
        messenger.send(t.from_rank, TAG_SOLUTIONS, encode_solutions(guest_sols, n_y))

    for t in plan.outgoing(rank):
        back = decode_solutions(messenger.recv(t.to_rank, TAG_SOLUTIONS), n_y)
        if sorted(s.cell_id for s in back) != sorted(t.cell_ids):
            raise ProtocolError(f"rank {rank}: solutions from rank {t.to_rank} do not match the plan")
        sols.extend(back)
    messenger.assert_drained()
    order = {pb.cell_id: i for i, pb in enumerate(problems)}
    sols.sort(key=lambda s: order[s.cell_id])
    return sols, rec


def run_group(worker_problems, mech, tol, jacobian_mode, theta=THETA, balance=True, fd_eta=1e-6, timeout=120.0):
    """Run one iteration with one thread per rank; returns per-rank results.

    Any worker failure aborts the iteration and is re-raised here.
    """
    size = len(worker_problems)
    msgrs = ThreadMessenger.group(size, timeout)
    results: list = [None] * size
    errors: list = [None] * size

    def work(r):
        try:
            results[r] = run_balanced_iteration(worker_problems[r], msgrs[r], mech, tol, jacobian_mode, theta, balance, fd_eta)
        except BaseException as exc:  # surfaced to the caller below
            errors[r] = exc

    threads = [threading.Thread(target=work, args=(r,), name=f"worker-{r}") for r in range(size)]
    t0 = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    elapsed = time.perf_counter() - t0
    failed = [e for e in errors if e is not None]
    if failed:
        # prefer the root cause over timeouts it induced elsewhere
        failed.sort(key=lambda e: isinstance(e, MessengerError))
        raise failed[0]
    return results, elapsed
