"""Compiled kinetics kernels: thermo, mass-action rates, RHS and analytical Jacobian.

Everything here works in SI on a molar basis (mol, m^3, J/mol, kg/mol).  The
state vector is ``y = (T, Y_1, ..., Y_{N-1})`` at constant pressure; the last
species' mass fraction is implied as ``1 - sum(Y)``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numba import njit

R_GAS = 8.314462618  # J/(mol K)
P_ATM = 101325.0
_R_CAL = 1.9872036

MAX_SIDE = 4  # species slots per reaction side (coefficients expanded)


class Tables(NamedTuple):
    W: np.ndarray          # (nsp,) kg/mol
    nasa_lo: np.ndarray    # (nsp, 7)
    nasa_hi: np.ndarray    # (nsp, 7)
    t_low: np.ndarray
    t_mid: np.ndarray
    t_high: np.ndarray
    A: np.ndarray          # (nr,) SI pre-exponential
    b: np.ndarray
    Ta: np.ndarray         # activation temperature Ea/R, K
    rev: np.ndarray        # (nr,) 1 if reversible
    tb: np.ndarray         # (nr,) 1 if third-body
    eff: np.ndarray        # (nr, nsp) third-body efficiencies
    r_idx: np.ndarray      # (nr, MAX_SIDE) reactant species, repeated by coefficient
    r_n: np.ndarray        # (nr,)
    p_idx: np.ndarray
    p_n: np.ndarray
    nu: np.ndarray         # (nr, nsp) net stoichiometric coefficients
    dnu: np.ndarray        # (nr,)


def _expand(stoich, index):
    out = []
    for name, coeff in stoich.items():
        out.extend([index[name]] * coeff)
    if len(out) > MAX_SIDE:
        raise ValueError(f"reaction side with more than {MAX_SIDE} molecules is not supported")
    return out


def build_tables(mech) -> Tables:
    nsp = mech.n_species
    nr = len(mech.reactions)
    index = {s.name: i for i, s in enumerate(mech.species)}
    r_idx = np.zeros((nr, MAX_SIDE), dtype=np.int64)
    p_idx = np.zeros((nr, MAX_SIDE), dtype=np.int64)
    r_n = np.zeros(nr, dtype=np.int64)
    p_n = np.zeros(nr, dtype=np.int64)
    nu = np.zeros((nr, nsp))
    eff = np.zeros((nr, nsp))
    A = np.empty(nr)
    for j, r in enumerate(mech.reactions):
        lhs, rhs = _expand(r.reactants, index), _expand(r.products, index)
        r_idx[j, : len(lhs)] = lhs
        p_idx[j, : len(rhs)] = rhs
        r_n[j], p_n[j] = len(lhs), len(rhs)
        for k in lhs:
            nu[j, k] -= 1.0
        for k in rhs:
            nu[j, k] += 1.0
        if r.third_body is not None:
            eff[j, :] = 1.0
            for name, e in r.third_body.items():
                eff[j, index[name]] = e
        # (cm^3/mol)^(order-1) -> (m^3/mol)^(order-1)
        A[j] = r.A * 1e-6 ** (r.order - 1)
    return Tables(
        W=np.array([s.molecular_weight * 1e-3 for s in mech.species]),
        nasa_lo=np.array([s.low for s in mech.species]).reshape(nsp, 7),
        nasa_hi=np.array([s.high for s in mech.species]).reshape(nsp, 7),
        t_low=np.array([s.t_low for s in mech.species]),
        t_mid=np.array([s.t_mid for s in mech.species]),
        t_high=np.array([s.t_high for s in mech.species]),
        A=A,
        b=np.array([r.b for r in mech.reactions], dtype=np.float64),
        Ta=np.array([r.Ea / _R_CAL for r in mech.reactions], dtype=np.float64),
        rev=np.array([int(r.reversible) for r in mech.reactions], dtype=np.int64),
        tb=np.array([int(r.is_third_body) for r in mech.reactions], dtype=np.int64),
        eff=eff,
        r_idx=r_idx,
        r_n=r_n,
        p_idx=p_idx,
        p_n=p_n,
        nu=nu,
        dnu=nu.sum(axis=1) if nr else np.zeros(0),
    )


@njit(cache=True, nogil=True)
def species_thermo(tab, T, cp_r, h_rt, s_r, dcp_r):
    """Fill cp/R, h/RT, s/R and d(cp/R)/dT; False if T is outside any range."""
    ok = True
    lnT = np.log(T)
    for k in range(tab.W.shape[0]):
        if T < tab.t_low[k] or T > tab.t_high[k]:
            ok = False
        a = tab.nasa_lo[k] if T <= tab.t_mid[k] else tab.nasa_hi[k]
        cp_r[k] = a[0] + T * (a[1] + T * (a[2] + T * (a[3] + T * a[4])))
        h_rt[k] = (
            a[0] + T * (a[1] / 2 + T * (a[2] / 3 + T * (a[3] / 4 + T * a[4] / 5))) + a[5] / T
        )
        s_r[k] = a[0] * lnT + T * (a[1] + T * (a[2] / 2 + T * (a[3] / 3 + T * a[4] / 4))) + a[6]
        dcp_r[k] = a[1] + T * (2 * a[2] + T * (3 * a[3] + T * 4 * a[4]))
    return ok


@njit(cache=True, nogil=True)
def _side_product(C, idx, n):
    out = 1.0
    for i in range(n):
        out *= C[idx[i]]
    return out


@njit(cache=True, nogil=True)
def _side_gradient(C, idx, n, scale, grad):
    # grad[k] += scale * d(prod C[idx])/dC_k ; repeated species handled per slot
    for i in range(n):
        others = 1.0
        for l in range(n):
            if l != i:
                others *= C[idx[l]]
        grad[idx[i]] += scale * others


@njit(cache=True, nogil=True)
def evaluate(tab, p, y, f, J, wdot, want_jac):
    """Evaluate the RHS into ``f`` and, if ``want_jac``, the Jacobian into ``J``.

    Molar production rates (mol/(m^3 s)) are left in ``wdot``.  Returns
    False when T lies outside a species' thermo range.
    """
    nsp = tab.W.shape[0]
    nr = tab.A.shape[0]
    last = nsp - 1
    W = tab.W
    T = y[0]
    if not T > 0.0:
        return False

    Y = np.empty(nsp)
    ysum = 0.0
    for k in range(last):
        Y[k] = y[k + 1]
        ysum += y[k + 1]
    Y[last] = 1.0 - ysum

    S = 0.0
    for k in range(nsp):
        S += Y[k] / W[k]
    Wbar = 1.0 / S
    rho = p * Wbar / (R_GAS * T)
    C = np.empty(nsp)
    for k in range(nsp):
        C[k] = rho * max(Y[k], 0.0) / W[k]

    cp_r = np.empty(nsp)
    h_rt = np.empty(nsp)
    s_r = np.empty(nsp)
    dcp_r = np.empty(nsp)
    ok = species_thermo(tab, T, cp_r, h_rt, s_r, dcp_r)
    if not ok:
        return False

    wdot[:] = 0.0
    if want_jac:
        dw_dT = np.zeros(nsp)   # at constant concentrations
        dw_dC = np.zeros((nsp, nsp))
        dq_dC = np.empty(nsp)
    lnc0 = np.log(P_ATM / (R_GAS * T))

    for j in range(nr):
        kf = tab.A[j] * np.exp(tab.b[j] * np.log(T) - tab.Ta[j] / T)
        fwd = _side_product(C, tab.r_idx[j], tab.r_n[j])
        kr = 0.0
        bwd = 0.0
        dlnkc = 0.0
        if tab.rev[j]:
            lnkc = tab.dnu[j] * lnc0
            dlnkc = -tab.dnu[j] / T
            for k in range(nsp):
                nk = tab.nu[j, k]
                if nk != 0.0:
                    lnkc += nk * (s_r[k] - h_rt[k])
                    dlnkc += nk * h_rt[k] / T
            kr = kf * np.exp(-lnkc)
            bwd = _side_product(C, tab.p_idx[j], tab.p_n[j])
        q0 = kf * fwd - kr * bwd
        M = 1.0
        if tab.tb[j]:
            M = 0.0
            for k in range(nsp):
                M += tab.eff[j, k] * C[k]
        q = M * q0
        for k in range(nsp):
            if tab.nu[j, k] != 0.0:
                wdot[k] += tab.nu[j, k] * q

        if want_jac:
            dlnkf = tab.b[j] / T + tab.Ta[j] / (T * T)
            dqdT = M * (kf * dlnkf * fwd - kr * (dlnkf - dlnkc) * bwd)
            for k in range(nsp):
                dq_dC[k] = tab.eff[j, k] * q0 if tab.tb[j] else 0.0
            _side_gradient(C, tab.r_idx[j], tab.r_n[j], M * kf, dq_dC)
            if tab.rev[j]:
                _side_gradient(C, tab.p_idx[j], tab.p_n[j], -M * kr, dq_dC)
            for i in range(nsp):
                ni = tab.nu[j, i]
                if ni != 0.0:
                    dw_dT[i] += ni * dqdT
                    for k in range(nsp):
                        dw_dC[i, k] += ni * dq_dC[k]

    # mixture properties, molar h and cp in J/mol(/K)
    RT = R_GAS * T
    Q = 0.0
    cp_mass = 0.0
    for k in range(nsp):
        Q += h_rt[k] * RT * wdot[k]
        cp_mass += Y[k] * cp_r[k] * R_GAS / W[k]
    rhocp = rho * cp_mass
    f[0] = -Q / rhocp
    for i in range(last):
        f[i + 1] = wdot[i] * W[i] / rho

    if not want_jac:
        return True

    # total T-derivative of wdot at fixed Y: concentrations scale as 1/T
    dwdT_Y = np.empty(nsp)
    for i in range(nsp):
        acc = 0.0
        for k in range(nsp):
            acc += dw_dC[i, k] * C[k]
        dwdT_Y[i] = dw_dT[i] - acc / T
    # dC_k/dY_j = rho/W_k (delta_kj - delta_kN) [Y_k > 0] - C_k Wbar (1/W_j - 1/W_N)
    dwdC_C = np.empty(nsp)
    for i in range(nsp):
        acc = 0.0
        for k in range(nsp):
            acc += dw_dC[i, k] * C[k]
        dwdC_C[i] = acc
    col_last = rho / W[last] if Y[last] > 0.0 else 0.0
    dwdY = np.empty((nsp, last))
    for j in range(last):
        dS = 1.0 / W[j] - 1.0 / W[last]
        col_j = rho / W[j] if Y[j] > 0.0 else 0.0
        for i in range(nsp):
            dwdY[i, j] = dw_dC[i, j] * col_j - dw_dC[i, last] * col_last - dwdC_C[i] * Wbar * dS

    # species rows
    for i in range(last):
        J[i + 1, 0] = W[i] / rho * dwdT_Y[i] + f[i + 1] / T
        for j in range(last):
            dS = 1.0 / W[j] - 1.0 / W[last]
            J[i + 1, j + 1] = W[i] / rho * dwdY[i, j] + wdot[i] * W[i] * RT / p * dS

    # temperature row
    sum_cp_w = 0.0
    sum_h_dw = 0.0
    sum_y_dcp = 0.0
    for k in range(nsp):
        sum_cp_w += cp_r[k] * R_GAS * wdot[k]
        sum_h_dw += h_rt[k] * RT * dwdT_Y[k]
        sum_y_dcp += Y[k] * dcp_r[k] * R_GAS / W[k]
    drhocp_dT = -rhocp / T + rho * sum_y_dcp
    J[0, 0] = -(sum_cp_w + sum_h_dw) / rhocp + Q / (rhocp * rhocp) * drhocp_dT
    cpw_last = cp_r[last] * R_GAS / W[last]
    for j in range(last):
        dS = 1.0 / W[j] - 1.0 / W[last]
        acc = 0.0
        for k in range(nsp):
            acc += h_rt[k] * RT * dwdY[k, j]
        drhocp = rho * (cp_r[j] * R_GAS / W[j] - cpw_last) - rhocp * Wbar * dS
        J[0, j + 1] = -acc / rhocp + Q / (rhocp * rhocp) * drhocp
    return True


@njit(cache=True, nogil=True)
def production_rates(tab, p, y, wdot):
    """Molar production rates in mol/(m^3 s); False on thermo range error."""
    f = np.empty(y.shape[0])
    J = np.empty((1, 1))
    return evaluate(tab, p, y, f, J, wdot, False)


@njit(cache=True, nogil=True)
def chem_fun(y, args, f):
    tab, p = args
    J = np.empty((1, 1))
    wdot = np.empty(tab.W.shape[0])
    return evaluate(tab, p, y, f, J, wdot, False)


@njit(cache=True, nogil=True)
def chem_jac(y, args, J):
    tab, p = args
    f = np.empty(y.shape[0])
    wdot = np.empty(tab.W.shape[0])
    return evaluate(tab, p, y, f, J, wdot, True)


@njit(cache=True, nogil=True)
def fd_jacobian(fun, args, y, J, eta, floor):
    """Central-difference Jacobian of ``fun``; returns (ok, rhs evaluations)."""
    n = y.shape[0]
    yp = y.copy()
    fp = np.empty(n)
    fm = np.empty(n)
    count = 0
    for j in range(n):
        d = max(eta * abs(y[j]), eta * floor)
        yp[j] = y[j] + d
        ok_p = fun(yp, args, fp)
        hi = yp[j]
        yp[j] = y[j] - d
        ok_m = fun(yp, args, fm)
        lo = yp[j]
        yp[j] = y[j]
        count += 2
        if not (ok_p and ok_m):
            return False, count
        # divide by the representable step, not the nominal one
        inv = 1.0 / (hi - lo)
        for i in range(n):
            J[i, j] = (fp[i] - fm[i]) * inv
    return True, count
