"""Adaptive stiff integration with a 4th-order Rosenbrock method (Rodas4).

The method is linearly implicit: each step attempt factorizes
``I/(gamma*h) - J`` once and reuses the factors for all six stages.  It is
L-stable and stiffly accurate, with an embedded 3rd-order solution whose
difference from the main one is simply the last stage increment.

Right-hand sides and Jacobians are compiled functions with the signatures
``fun(y, args, out) -> bool`` and ``jac(y, args, J) -> bool``; returning
False signals that the state is outside the model's domain (e.g. thermo range).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields

import numpy as np
from numba import njit

from chembalance import _chem
from chembalance.kinetics import CompositionVector, State, _raise_range, _state
from chembalance.linalg import lu_factor_inplace, lu_solve_inplace
from chembalance.mechanism import ONE_ATM, Mechanism

# Rodas4 in the transformed (A, C, M) form of Hairer & Wanner.
GAMMA = 0.25
STAGES = 6
RODAS_A = np.zeros((6, 6))
RODAS_C = np.zeros((6, 6))
RODAS_A[1, 0] = 1.544
RODAS_A[2, :2] = (0.9466785280815826, 0.2557011698983284)
RODAS_A[3, :3] = (3.314825187068521, 2.896124015972201, 0.9986419139977817)
RODAS_A[4, :4] = (1.221224509226641, 6.019134481288629, 12.53708332932087, -0.6878860361058950)
RODAS_A[5, :5] = (*RODAS_A[4, :4], 1.0)
RODAS_C[1, 0] = -5.6688
RODAS_C[2, :2] = (-2.430093356833875, -0.2063599157091915)
RODAS_C[3, :3] = (-0.1073529058151375, -9.594562251023355, -20.47028614809616)
RODAS_C[4, :4] = (7.496443313967647, -10.24680431464352, -33.99990352819905, 11.70890893206160)
RODAS_C[5, :5] = (
    8.083246795921522,
    -7.981132988064893,
    -31.52159432874371,
    16.31930543123136,
    -6.058818238834054,
)
RODAS_M = np.array([*RODAS_A[4, :4], 1.0, 1.0])
RODAS_E = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0])
# compile-time constants for the kernels (global arrays would defeat caching)
_A = tuple(RODAS_A.ravel())
_C = tuple(RODAS_C.ravel())
_M = tuple(RODAS_M)

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 5.0
H_INITIAL = 1e-7
MAX_STEPS = 500_000

# kernel status codes
OK = 0
UNDERFLOW = 1
BAD_STATE = 2
TOO_MANY_STEPS = 3

# stats slots
_ACC, _REJ, _RHS, _JAC, _LU = range(5)


class StiffnessError(RuntimeError):
    """Step size collapsed; carries the state where integration stalled."""

    def __init__(self, message: str, state: np.ndarray, t: float, h: float):
        self.state = state
        self.t = t
        self.h = h
        super().__init__(f"{message} at t = {t:.6e} s (h = {h:.3e} s), T = {state[0]:.2f} K")


@dataclass(frozen=True)
class ToleranceSpec:
    abstol: float = 1e-8
    reltol: float = 1e-5

    def __post_init__(self):
        if not (self.abstol > 0 and self.reltol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class IntegratorStats:
    steps_accepted: int = 0
    steps_rejected: int = 0
    rhs_evals: int = 0
    jacobian_evals: int = 0
    lu_factorizations: int = 0
    cpu_time: float = 0.0

    @classmethod
    def from_counts(cls, counts, cpu_time: float = 0.0) -> IntegratorStats:
        return cls(*(int(c) for c in counts[:5]), cpu_time=cpu_time)

    def __add__(self, other: IntegratorStats) -> IntegratorStats:
        return IntegratorStats(
            *(getattr(self, f.name) + getattr(other, f.name) for f in fields(self))
        )


@njit(cache=True, nogil=True)
def wrms(err, ref, abstol, reltol):
    n = err.shape[0]
    acc = 0.0
    for i in range(n):
        w = abstol + reltol * abs(ref[i])
        acc += (err[i] / w) ** 2
    return np.sqrt(acc / n)


@njit(cache=True, nogil=True)
def _attempt(fun, args, y, f0, J, h, G, piv, K, ystage, fstage, ynew, stats):
    """One Rodas4 attempt from ``y``; fills ``ynew`` and leaves the error in K[5].

    Returns OK, or BAD_STATE for a singular matrix or an invalid stage state.
    """
    n = y.shape[0]
    diag = 1.0 / (GAMMA * h)
    for i in range(n):
        for j in range(n):
            G[i, j] = -J[i, j]
        G[i, i] += diag
    stats[_LU] += 1
    if lu_factor_inplace(G, piv) >= 0:
        return BAD_STATE
    for s in range(STAGES):
        if s == 0:
            for i in range(n):
                fstage[i] = f0[i]
        else:
            for i in range(n):
                acc = y[i]
                for j in range(s):
                    acc += _A[s * STAGES + j] * K[j, i]
                ystage[i] = acc
            stats[_RHS] += 1
            if not fun(ystage, args, fstage):
                return BAD_STATE
        for i in range(n):
            acc = fstage[i]
            for j in range(s):
                acc += _C[s * STAGES + j] / h * K[j, i]
            K[s, i] = acc
        lu_solve_inplace(G, piv, K[s])
    for i in range(n):
        acc = y[i]
        for s in range(STAGES):
            acc += _M[s] * K[s, i]
        ynew[i] = acc
    return OK


@njit(cache=True, nogil=True)
def _base_point(fun, jac, args, y, f0, J, use_fd, fd_eta, fd_floor, stats):
    stats[_RHS] += 1
    if not fun(y, args, f0):
        return False
    stats[_JAC] += 1
    if use_fd:
        ok, count = _chem.fd_jacobian(fun, args, y, J, fd_eta, fd_floor)
        stats[_RHS] += count
        return ok
    return jac(y, args, J)


@njit(cache=True, nogil=True)
def rodas_step(fun, jac, args, y, h, abstol, reltol, use_fd, fd_eta, fd_floor, ynew, err, stats):
    """Single step of size h; returns (status, wrms error norm)."""
    n = y.shape[0]
    f0 = np.empty(n)
    J = np.zeros((n, n))
    if not _base_point(fun, jac, args, y, f0, J, use_fd, fd_eta, fd_floor, stats):
        return BAD_STATE, np.inf
    G = np.empty((n, n))
    piv = np.empty(n, dtype=np.int64)
    K = np.zeros((STAGES, n))
    status = _attempt(fun, args, y, f0, J, h, G, piv, K, np.empty(n), np.empty(n), ynew, stats)
    if status != OK:
        return status, np.inf
    ref = np.empty(n)
    for i in range(n):
        err[i] = K[STAGES - 1, i]
        ref[i] = max(abs(y[i]), abs(ynew[i]))
    return OK, wrms(err, ref, abstol, reltol)


@njit(cache=True, nogil=True)
def integrate_kernel(fun, jac, args, y0, dt, abstol, reltol, use_fd, fd_eta, fd_floor, y, stats):
    """Advance ``y0`` over [0, dt] into ``y``; returns (status, t, h)."""
    n = y0.shape[0]
    for i in range(n):
        y[i] = y0[i]
    f0 = np.empty(n)
    J = np.zeros((n, n))
    G = np.empty((n, n))
    piv = np.empty(n, dtype=np.int64)
    K = np.zeros((STAGES, n))
    ystage = np.empty(n)
    fstage = np.empty(n)
    ynew = np.empty(n)
    ref = np.empty(n)

    t = 0.0
    h = min(dt, H_INITIAL)
    first = True
    h_min = 1e-15 * dt
    while t < dt:
        if not _base_point(fun, jac, args, y, f0, J, use_fd, fd_eta, fd_floor, stats):
            return BAD_STATE, t, h
        if first:
            first = False
            still = True
            for i in range(n):
                if f0[i] != 0.0:
                    still = False
            if still:
                # an equilibrium start stays put: take the whole interval at once
                h = dt
        while True:
            last = t + h >= dt
            if last:
                h = dt - t
            if h < h_min:
                return UNDERFLOW, t, h
            if stats[_ACC] + stats[_REJ] >= MAX_STEPS:
                return TOO_MANY_STEPS, t, h
            status = _attempt(fun, args, y, f0, J, h, G, piv, K, ystage, fstage, ynew, stats)
            if status != OK:
                stats[_REJ] += 1
                h *= 0.5
                continue
            for i in range(n):
                ref[i] = max(abs(y[i]), abs(ynew[i]))
            err = wrms(K[STAGES - 1], ref, abstol, reltol)
            if err == 0.0:
                fac = FAC_MAX
            elif np.isfinite(err):
                fac = min(FAC_MAX, max(FAC_MIN, SAFETY * err ** -0.25))
            else:
                fac = FAC_MIN
            if err <= 1.0:
                stats[_ACC] += 1
                for i in range(n):
                    y[i] = ynew[i]
                t = dt if last else t + h
                h *= fac
                break
            stats[_REJ] += 1
            h *= fac
    return OK, t, h


@njit(cache=True, nogil=True)
def integrate_chem(tab, p, y0, dt, abstol, reltol, use_fd, fd_eta, y, stats):
    # direct calls: passing the RHS as an argument costs ~10 us per call from Python
    return integrate_kernel(
        _chem.chem_fun, _chem.chem_jac, (tab, p), y0, dt, abstol, reltol,
        use_fd, fd_eta, abstol, y, stats,
    )


# ---------------------------------------------------------------------------
# Python-facing wrappers


def wrms_norm(err, ref, tol: ToleranceSpec) -> float:
    err = np.asarray(err, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if err.shape != ref.shape:
        raise ValueError("error and reference vectors differ in length")
    return float(wrms(err, ref, tol.abstol, tol.reltol))


def rosenbrock_step(fun, jac, y, h, tol: ToleranceSpec, args=(), use_fd=False, fd_eta=1e-6):
    """One Rodas4 step of a compiled ODE system.

    Returns ``(y_new, error_estimate, stats_delta)``.  A singular stage matrix
    or an invalid stage state yields ``y_new = None`` so the caller can retry
    with a smaller step.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    y = np.ascontiguousarray(y, dtype=float)
    ynew = np.empty_like(y)
    err = np.zeros_like(y)
    counts = np.zeros(5, dtype=np.int64)
    status, _ = rodas_step(
        fun, jac, args, y, float(h), tol.abstol, tol.reltol, use_fd, fd_eta, tol.abstol,
        ynew, err, counts,
    )
    stats = IntegratorStats.from_counts(counts)
    if status != OK:
        return None, None, stats
    return ynew, err, stats


def integrate_ode(fun, jac, y0, dt, tol: ToleranceSpec, args=(), use_fd=False, fd_eta=1e-6):
    """Integrate a compiled autonomous system over [0, dt]."""
    if not dt > 0:
        raise ValueError("integration interval must be positive")
    y0 = np.ascontiguousarray(y0, dtype=float)
    y = np.empty_like(y0)
    counts = np.zeros(5, dtype=np.int64)
    t0 = time.thread_time()
    status, t, h = integrate_kernel(
        fun, jac, args, y0, float(dt), tol.abstol, tol.reltol, use_fd, fd_eta, tol.abstol,
        y, counts,
    )
    stats = IntegratorStats.from_counts(counts, time.thread_time() - t0)
    if status == UNDERFLOW:
        raise StiffnessError("step size underflow", y, t, h)
    if status == TOO_MANY_STEPS:
        raise StiffnessError("step limit exceeded", y, t, h)
    if status == BAD_STATE:
        raise StiffnessError("right-hand side rejected the state", y, t, h)
    return y, stats


JACOBIAN_MODES = ("analytic", "fd")


def integrate(
    mech: Mechanism,
    phi0: State,
    p: float = ONE_ATM,
    dt: float = 1e-6,
    tol: ToleranceSpec = ToleranceSpec(),
    jacobian_mode: str = "analytic",
    fd_eta: float = 1e-6,
):
    """Advance one reactor over ``dt`` at constant pressure.

    ``jacobian_mode`` is ``"analytic"`` or ``"fd"`` (central differences,
    2N extra RHS evaluations per Jacobian).  Returns the new
    :class:`CompositionVector` and the :class:`IntegratorStats`.
    """
    if jacobian_mode not in JACOBIAN_MODES:
        raise ValueError(f"jacobian_mode must be one of {JACOBIAN_MODES}")
    if not dt > 0:
        raise ValueError("integration interval must be positive")
    y0 = _state(phi0)
    y = np.empty_like(y0)
    new, stats = solve_state(mech.tables, float(p), y0, float(dt), tol, jacobian_mode == "fd", fd_eta, y)
    if new is not None:
        return CompositionVector.from_array(y), stats
    status, t, h = stats
    if status == BAD_STATE and t == 0.0:
        _raise_range(mech, y0[0])
    reason = {UNDERFLOW: "step size underflow", TOO_MANY_STEPS: "step limit exceeded"}
    raise StiffnessError(reason.get(status, "right-hand side rejected the state"), y, t, h)


def solve_state(tab, p, y0, dt, tol, use_fd, fd_eta, out):
    """Array-level integrate used by the hot loops; avoids object churn.

    Returns ``(out, stats)`` on success and ``(None, (status, t, h))`` on failure.
    """
    counts = np.zeros(5, dtype=np.int64)
    t0 = time.thread_time()
    status, t, h = integrate_chem(tab, p, y0, dt, tol.abstol, tol.reltol, use_fd, fd_eta, out, counts)
    if status != OK:
        return None, (status, t, h)
    return out, IntegratorStats.from_counts(counts, time.thread_time() - t0)
