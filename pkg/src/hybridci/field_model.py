"""Advection-diffusion plant discretized into a linear state-space model.

The concentration field on an ``nx x ny x nz`` lattice is stacked into a
state vector with index ``(ix * ny + iy) * nz + iz``. Advection uses
first-order upwind differences, diffusion in y and z uses central
differences, and time is integrated with explicit Euler. Downwind diffusion
is neglected.

Boundary handling, with ghost cells outside the lattice:

* inflow / far-field faces (x, y, top of z): ghost concentration is zero;
* ground (iz = 0): mirrored ghost, i.e. zero diffusive flux.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np

Diffusivity = Union[float, Sequence[float], Callable[[float], float]]


class StabilityError(ValueError):
    """Explicit scheme stability bound violated."""


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    nz: int
    dx: float
    dy: float
    dz: float
    dt: float

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"grid {name} must be a positive integer, got {v!r}")
        for name in ("dx", "dy", "dz", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"grid {name} must be strictly positive, got {getattr(self, name)!r}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny * self.nz

    def index(self, ix: int, iy: int, iz: int) -> int:
        if not (0 <= ix < self.nx and 0 <= iy < self.ny and 0 <= iz < self.nz):
            raise IndexError(f"cell {(ix, iy, iz)} outside grid {self.shape}")
        return (ix * self.ny + iy) * self.nz + iz

    def downwind_distance(self, ix: int) -> float:
        # Cell ix sits at x = (ix + 1) * dx; x = 0 is the inflow boundary.
        return (ix + 1) * self.dx


@dataclass(frozen=True)
class DispersionParams:
    wind_speed: float
    wind_angle: float = 0.0
    eddy_y: Diffusivity = 0.0
    eddy_z: Diffusivity = 0.0
    source_cells: Sequence[tuple[int, int, int]] = ()
    emission_cov: np.ndarray | None = None
    process_var: float = 0.0

    def __post_init__(self):
        if self.wind_speed < 0:
            raise ValueError("wind_speed must be >= 0")
        if self.process_var < 0:
            raise ValueError("process_var must be >= 0")
        m = len(self.source_cells)
        cov = np.zeros((m, m)) if self.emission_cov is None else np.atleast_2d(
            np.asarray(self.emission_cov, dtype=float))
        if m and cov.shape != (m, m):
            raise ValueError(f"emission_cov must be {m}x{m}, got {cov.shape}")
        if m:
            if not np.allclose(cov, cov.T):
                raise ValueError("emission_cov must be symmetric")
            if np.linalg.eigvalsh(cov)[0] < -1e-12 * max(np.abs(cov).max(), 1.0):
                raise ValueError("emission_cov must be positive semidefinite")
        object.__setattr__(self, "emission_cov", cov if m else np.zeros((0, 0)))


def _sample_diffusivity(k: Diffusivity, grid: GridSpec, name: str) -> np.ndarray:
    if callable(k):
        vals = np.array([k(grid.downwind_distance(ix)) for ix in range(grid.nx)], dtype=float)
    elif np.ndim(k) == 0:
        vals = np.full(grid.nx, float(k))
    else:
        vals = np.asarray(k, dtype=float)
        if vals.shape != (grid.nx,):
            raise ValueError(f"{name} needs one value per x column ({grid.nx}), got {vals.shape}")
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValueError(f"{name} must be finite and nonnegative, got {vals}")
    return vals


@dataclass(frozen=True)
class FieldModel:
    """``x(k+1) = A x(k) + B u(k) + w(k)`` with ``u ~ N(0, emission_cov)``."""

    A: np.ndarray
    B: np.ndarray
    Qproc: np.ndarray
    emission_cov: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    grid: GridSpec | None = None

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.Qproc.shape != (n, n):
            raise ValueError("A and Qproc must be square and of equal size")
        if self.B.shape[0] != n:
            raise ValueError("B must have one row per state")
        if not np.all(np.isfinite(self.A)):
            raise ValueError("A has non-finite entries")
        if not np.allclose(self.Qproc, self.Qproc.T):
            raise ValueError("Qproc must be symmetric")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @cached_property
    def q_eff(self) -> np.ndarray:
        """Process noise plus the emission noise mapped through ``B``."""
        q = self.Qproc
        if self.B.shape[1]:
            q = q + self.B @ self.emission_cov @ self.B.T
        return 0.5 * (q + q.T)

    @cached_property
    def noise_factor(self) -> np.ndarray:
        # Symmetric square root; Q_eff may be singular so Cholesky is not enough.
        w, v = np.linalg.eigh(self.q_eff)
        return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class FieldState:
    x: np.ndarray
    k: int = 0


def _stability_check(grid: GridSpec, ux: float, uy: float, ky: np.ndarray, kz: np.ndarray):
    bounds = [
        ("Courant number |u cos a| dt/dx", abs(ux) * grid.dt / grid.dx, 1.0),
        ("Courant number |u sin a| dt/dy", abs(uy) * grid.dt / grid.dy, 1.0),
        ("diffusion number K_y dt/dy^2", ky.max() * grid.dt / grid.dy**2, 0.5),
        ("diffusion number K_z dt/dz^2", kz.max() * grid.dt / grid.dz**2, 0.5),
    ]
    for name, value, limit in bounds:
        if value > limit + 1e-12:
            raise StabilityError(f"{name} = {value:.6g} exceeds {limit:g}")


def build_model(grid: GridSpec, params: DispersionParams) -> FieldModel:
    ux = params.wind_speed * np.cos(params.wind_angle)
    uy = params.wind_speed * np.sin(params.wind_angle)
    # Trim round-off so that alpha = 0 gives exactly zero crosswind.
    ux = 0.0 if abs(ux) < 1e-14 * max(params.wind_speed, 1.0) else ux
    uy = 0.0 if abs(uy) < 1e-14 * max(params.wind_speed, 1.0) else uy
    ky = _sample_diffusivity(params.eddy_y, grid, "eddy_y")
    kz = _sample_diffusivity(params.eddy_z, grid, "eddy_z")
    _stability_check(grid, ux, uy, ky, kz)

    n = grid.n_cells
    A = np.eye(n)
    cx = ux * grid.dt / grid.dx
    cy = uy * grid.dt / grid.dy
    for ix in range(grid.nx):
        dy_num = ky[ix] * grid.dt / grid.dy**2
        dz_num = kz[ix] * grid.dt / grid.dz**2
        for iy in range(grid.ny):
            for iz in range(grid.nz):
                i = grid.index(ix, iy, iz)
                # upwind advection: outflow from i, inflow from the upwind cell
                for c, axis in ((cx, 0), (cy, 1)):
                    if c == 0.0:
                        continue
                    A[i, i] -= abs(c)
                    src = [ix, iy, iz]
                    src[axis] -= 1 if c > 0 else -1
                    if 0 <= src[axis] < grid.shape[axis]:
                        A[i, grid.index(*src)] += abs(c)
                # crosswind diffusion, zero ghost at both lateral faces
                if dy_num:
                    A[i, i] -= 2 * dy_num
                    for jy in (iy - 1, iy + 1):
                        if 0 <= jy < grid.ny:
                            A[i, grid.index(ix, jy, iz)] += dy_num
                # vertical diffusion, mirrored ghost at the ground
                if dz_num:
                    if iz > 0:
                        A[i, i] -= dz_num
                        A[i, grid.index(ix, iy, iz - 1)] += dz_num
                    A[i, i] -= dz_num
                    if iz + 1 < grid.nz:
                        A[i, grid.index(ix, iy, iz + 1)] += dz_num

    m = len(params.source_cells)
    B = np.zeros((n, m))
    for j, cell in enumerate(params.source_cells):
        B[grid.index(*cell), j] = 1.0
    Q = params.process_var * np.eye(n)
    return FieldModel(A=A, B=B, Qproc=Q, emission_cov=params.emission_cov, grid=grid)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def step_truth(model: FieldModel, state: FieldState, rng_seed=None) -> FieldState:
    """Advance the true field one step.

    ``rng_seed`` may be an int, a ``SeedSequence`` or a ``Generator``; the
    emission input is zero-mean and is already folded into ``model.q_eff``.
    """
    x = np.asarray(state.x, dtype=float)
    if x.shape != (model.dim,):
        raise ValueError(f"state has shape {x.shape}, model expects ({model.dim},)")
    rng = _as_rng(rng_seed)
    w = model.noise_factor @ rng.standard_normal(model.dim)
    return FieldState(model.A @ x + w, state.k + 1)
