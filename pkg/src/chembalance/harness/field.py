"""The 2D shear-layer field and the diffusion step standing in for transport.

Cells are stored x-major: cell (i, j), with i along x, has id ``i*ny + j``,
so a contiguous id range is a block of x-rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from chembalance.kinetics import BilgerMap
from chembalance.mechanism import Mechanism

from chembalance.harness.config import RunConfig


@dataclass
class FieldState:
    nx: int
    ny: int
    length: float
    p: float
    states: np.ndarray  # (nx*ny, n_state): T, Y_1..Y_{N-1}
    Z: np.ndarray
    bilger: BilgerMap

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def T(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def spacing(self) -> tuple[float, float]:
        return self.length / self.nx, self.length / self.ny

    def full_mass_fractions(self) -> np.ndarray:
        Y = self.states[:, 1:]
        return np.column_stack([Y, 1.0 - Y.sum(axis=1)])

    def compute_z(self) -> np.ndarray:
        return self.bilger(self.full_mass_fractions())

    def refresh_z(self) -> None:
        self.Z = self.compute_z()

    def cell_centres(self) -> tuple[np.ndarray, np.ndarray]:
        hx, hy = self.spacing
        x = (np.arange(self.nx) + 0.5) * hx
        y = (np.arange(self.ny) + 0.5) * hy
        X, Y = np.meshgrid(x, y, indexing="ij")
        return X.ravel(), Y.ravel()

    def copy(self) -> FieldState:
        return FieldState(self.nx, self.ny, self.length, self.p, self.states.copy(), self.Z.copy(), self.bilger)


def interface_offset(config: RunConfig, y: np.ndarray) -> np.ndarray:
    """Seeded displacement of the fuel/oxidizer interface along y."""
    if config.interface_amplitude == 0.0:
        return np.zeros_like(y)
    rng = np.random.default_rng(config.seed)
    delta = config.width * config.length
    modes = np.arange(1, 5)
    amp = rng.uniform(0.5, 1.0, modes.size) / modes
    amp /= amp.sum()
    phase = rng.uniform(0.0, 2 * np.pi, modes.size)
    wave = np.sin(2 * np.pi * np.outer(y / config.length, modes) + phase) @ amp
    return config.interface_amplitude * delta * wave


def init_shear_layer(config: RunConfig, mech: Mechanism) -> FieldState:
    L = config.length
    delta = config.width * L
    field = FieldState(config.nx, config.ny, L, config.pressure, np.empty(0), np.empty(0), BilgerMap(mech))
    x, y = field.cell_centres()
    s = (x - L / 2 - interface_offset(config, y)) / delta
    Z = 0.5 * (1.0 + np.tanh(s))
    T = config.t_base + (config.t_peak - config.t_base) * np.exp(-(s**2))
    Yf = mech.mass_fractions(mech.fuel_stream)
    Yo = mech.mass_fractions(mech.oxidizer_stream)
    Y = np.outer(Z, Yf) + np.outer(1.0 - Z, Yo)
    field.states = np.column_stack([T, Y[:, :-1]])
    field.refresh_z()
    return field


def mixing_step(field: FieldState, diffusivity: float, dt: float) -> FieldState:
    """Explicit 5-point diffusion of T and the stored Y with zero-gradient walls.

    Sub-steps keep ``D*tau/h**2 <= 0.25`` in each direction.  The implied
    species diffuses implicitly because 1 - sum(Y) obeys the same linear
    update.
    """
    out = field.copy()
    if diffusivity == 0.0 or dt == 0.0:
        return out
    hx, hy = field.spacing
    h2 = min(hx, hy) ** 2
    nsub = max(1, math.ceil(diffusivity * dt / h2 / 0.25))
    tau = dt / nsub
    cx = diffusivity * tau / hx**2
    cy = diffusivity * tau / hy**2
    u = out.states.reshape(field.nx, field.ny, -1)
    for _ in range(nsub):
        # face fluxes; boundary faces carry none
        fx = np.diff(u, axis=0)
        fy = np.diff(u, axis=1)
        du = np.zeros_like(u)
        du[:-1] += cx * fx
        du[1:] -= cx * fx
        du[:, :-1] += cy * fy
        du[:, 1:] -= cy * fy
        u = u + du
    out.states = np.ascontiguousarray(u.reshape(field.n_cells, -1))
    out.refresh_z()
    return out
