"""Ground-truth solvers and the initial-condition generator.

Burgers: second-order finite differences with RK4 in time.
Navier-Stokes: first-order Rusanov finite volumes with central viscous fluxes
and SSP-RK2 in time. Both integrate on a fine internal step and store frames
every ``grid.dt_frame``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numba
import numpy as np

from .core import (
    Candidate,
    Family,
    Field,
    Grid,
    IcParameters,
    LabeledSample,
    PdeParameters,
    Trajectory,
    check_finite,
)
from .residual import trajectory_score

log = logging.getLogger(__name__)

MIN_POSITIVE = 0.1


class SolverError(RuntimeError):
    """Raised when an integration blows up or violates positivity."""


@dataclass(frozen=True)
class IcGeneratorSpec:
    """Truncated Fourier series prior for initial conditions.

    The latent vector holds ``(amplitude, phase)`` per mode, modes ``1..n_modes``,
    one block per spatial axis, flattened in that order.
    """

    n_modes: int = 4
    amplitude_range: tuple[float, float] = (-1.0, 1.0)
    perturbation: float = 0.1

    def latent_dim(self, dim: int) -> int:
        return 2 * self.n_modes * dim

    def sample(self, rng: np.random.Generator, dim: int) -> IcParameters:
        lo, hi = self.amplitude_range
        lam = np.empty((dim, self.n_modes, 2))
        lam[..., 0] = rng.uniform(lo, hi, size=(dim, self.n_modes))
        lam[..., 1] = rng.uniform(0.0, 2.0 * np.pi, size=(dim, self.n_modes))
        return IcParameters(lam.ravel())


@dataclass(frozen=True)
class SolverConfig:
    cfl: float = 0.4
    max_steps: int = 2_000_000
    diffusion_number: float = 0.25

    def __post_init__(self):
        if not 0 < self.cfl < 1:
            raise ValueError(f"cfl must lie in (0, 1), got {self.cfl}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")


def _series(lam: np.ndarray, x: np.ndarray, length: float) -> np.ndarray:
    """Sum of ``a_k sin(2 pi k x / L + phi_k)`` for one axis block of ``lam``."""
    out = np.zeros_like(x, dtype=np.float64)
    for k, (a, phi) in enumerate(lam.reshape(-1, 2), start=1):
        out += a * np.sin(2.0 * np.pi * k * x / length + phi)
    return out


def generate_ic(spec: IcGeneratorSpec, lam: IcParameters | np.ndarray, grid: Grid,
                family: Family) -> Field:
    family = Family(family)
    lam = lam.latent if isinstance(lam, IcParameters) else np.ravel(np.asarray(lam, dtype=np.float64))
    if lam.size != spec.latent_dim(grid.dim):
        raise ValueError(f"latent dimension {lam.size} does not match generator ({spec.latent_dim(grid.dim)})")
    if grid.dim != family.dim:
        raise ValueError(f"{family.value} needs a {family.dim}D grid")
    blocks = lam.reshape(grid.dim, -1)

    if family is Family.BURGERS1D:
        (x,) = grid.coordinates()
        return Field(grid, _series(blocks[0], x, grid.length[0])[None])

    X, Y = grid.coordinates()
    sx = _series(blocks[0], X, grid.length[0])
    sy = _series(blocks[1], Y, grid.length[1])
    drho, dp = sx + sy, sx - sy
    amp = spec.perturbation
    # shrink the amplitude until both rho and p clear the positivity floor
    worst = max(-drho.min(), -dp.min(), 0.0)
    if worst > 0 and 1.0 - amp * worst <= MIN_POSITIVE:
        amp = 0.5 * (1.0 - MIN_POSITIVE) / worst
    rho = 1.0 + amp * drho
    p = 1.0 + amp * dp
    if rho.min() <= MIN_POSITIVE or p.min() <= MIN_POSITIVE:
        raise ValueError("initial condition violates density/pressure positivity")
    return Field(grid, np.stack([rho, amp * sy, amp * sx, p]))


def _substeps(dt_max: float, dt_frame: float) -> tuple[int, float]:
    n = max(1, math.ceil(dt_frame / dt_max - 1e-12))
    return n, dt_frame / n


# Burgers ---------------------------------------------------------------------

@numba.njit(cache=True)
def _burgers_rhs(u, nu, dx, out):
    n = u.shape[0]
    inv_dx = 1.0 / dx
    inv_dx2 = 1.0 / (dx * dx)
    for i in range(n):
        um = u[i - 1]
        ui = u[i]
        up = u[(i + 1) % n]
        # energy-conserving flux (u_l^2 + u_l u_r + u_r^2) / 6 on both faces
        f_right = (ui * ui + ui * up + up * up) / 6.0
        f_left = (um * um + um * ui + ui * ui) / 6.0
        out[i] = nu * (up - 2.0 * ui + um) * inv_dx2 - (f_right - f_left) * inv_dx


@numba.njit(cache=True)
def _burgers_advance(u, nu, dx, dt, nsub):
    n = u.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for _ in range(nsub):
        _burgers_rhs(u, nu, dx, k1)
        for i in range(n):
            tmp[i] = u[i] + 0.5 * dt * k1[i]
        _burgers_rhs(tmp, nu, dx, k2)
        for i in range(n):
            tmp[i] = u[i] + 0.5 * dt * k2[i]
        _burgers_rhs(tmp, nu, dx, k3)
        for i in range(n):
            tmp[i] = u[i] + dt * k3[i]
        _burgers_rhs(tmp, nu, dx, k4)
        for i in range(n):
            u[i] = u[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return u


def solve_burgers(ic: Field, nu: float, grid: Grid, config: SolverConfig = SolverConfig()) -> Trajectory:
    """Integrate ``u_t + (u^2/2)_x = nu u_xx`` on a periodic 1D grid."""
    if not nu > 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    if grid.dim != 1 or ic.channels != 1:
        raise ValueError("Burgers needs a single-channel field on a 1D grid")
    check_finite(ic.values, "initial condition")
    dx = grid.spacing[0]
    frames = np.empty((grid.n_frames, 1, grid.n_points[0]))
    frames[0] = ic.values
    u = ic.values[0].copy()
    steps = 0
    for n in range(1, grid.n_frames):
        umax = float(np.abs(u).max())
        dt_max = min(config.diffusion_number * dx * dx / nu, grid.dt_frame)
        if umax > 0:
            dt_max = min(dt_max, config.cfl * dx / umax)
        nsub, dt = _substeps(dt_max, grid.dt_frame)
        steps += nsub
        if steps > config.max_steps:
            raise SolverError(f"internal step cap {config.max_steps} exceeded at frame {n}")
        u = _burgers_advance(u, float(nu), dx, dt, nsub)
        if not np.isfinite(u).all():
            raise SolverError(f"Burgers solution blew up at frame {n}")
        frames[n, 0] = u
    return Trajectory(grid, frames)


# Compressible Navier-Stokes --------------------------------------------------

def _to_conservative(prim: np.ndarray, gamma: float) -> np.ndarray:
    rho, vx, vy, p = prim
    return np.stack([rho, rho * vx, rho * vy, p / (gamma - 1.0) + 0.5 * rho * (vx * vx + vy * vy)])


def _to_primitive(cons: np.ndarray, gamma: float) -> np.ndarray:
    rho, mx, my, E = cons
    vx, vy = mx / rho, my / rho
    return np.stack([rho, vx, vy, (gamma - 1.0) * (E - 0.5 * rho * (vx * vx + vy * vy))])


def _euler_flux(prim: np.ndarray, cons: np.ndarray, axis: int) -> np.ndarray:
    rho, vx, vy, p = prim
    vn = vx if axis == 0 else vy
    f = cons * vn
    f[1 + axis] += p
    f[3] += p * vn
    return f


def _rusanov_divergence(prim, cons, gamma, h, axis):
    """``(F_{i+1/2} - F_{i-1/2}) / h`` along spatial ``axis`` (array axis ``axis + 1``)."""
    ax = axis + 1
    prim_r = np.roll(prim, -1, axis=ax)
    cons_r = np.roll(cons, -1, axis=ax)
    vn = prim[1 + axis]
    c = np.sqrt(gamma * prim[3] / prim[0])
    speed = np.abs(vn) + c
    a = np.maximum(speed, np.roll(speed, -1, axis=axis))
    face = 0.5 * (_euler_flux(prim, cons, axis) + _euler_flux(prim_r, cons_r, axis)) - 0.5 * a * (cons_r - cons)
    return (face - np.roll(face, 1, axis=ax)) / h


def _viscous_divergence(prim, eta, zeta, dx, dy):
    """Divergence of the viscous momentum and energy fluxes, face-centred central differences."""
    vx, vy = prim[1], prim[2]
    lam = zeta - 2.0 * eta / 3.0
    out = np.zeros_like(prim)

    def ddx_c(f):
        return (np.roll(f, -1, 0) - np.roll(f, 1, 0)) / (2.0 * dx)

    def ddy_c(f):
        return (np.roll(f, -1, 1) - np.roll(f, 1, 1)) / (2.0 * dy)

    # x-faces (i+1/2, j)
    vx_r, vy_r = np.roll(vx, -1, 0), np.roll(vy, -1, 0)
    dvx_dx = (vx_r - vx) / dx
    dvy_dx = (vy_r - vy) / dx
    dvx_dy = 0.5 * (ddy_c(vx) + np.roll(ddy_c(vx), -1, 0))
    dvy_dy = 0.5 * (ddy_c(vy) + np.roll(ddy_c(vy), -1, 0))
    div = dvx_dx + dvy_dy
    txx = 2.0 * eta * dvx_dx + lam * div
    txy = eta * (dvx_dy + dvy_dx)
    work = 0.5 * (vx + vx_r) * txx + 0.5 * (vy + vy_r) * txy
    fx = np.stack([txx, txy, work])

    # y-faces (i, j+1/2)
    vx_u, vy_u = np.roll(vx, -1, 1), np.roll(vy, -1, 1)
    dvx_dy = (vx_u - vx) / dy
    dvy_dy = (vy_u - vy) / dy
    dvx_dx = 0.5 * (ddx_c(vx) + np.roll(ddx_c(vx), -1, 1))
    dvy_dx = 0.5 * (ddx_c(vy) + np.roll(ddx_c(vy), -1, 1))
    div = dvx_dx + dvy_dy
    tyy = 2.0 * eta * dvy_dy + lam * div
    tyx = eta * (dvx_dy + dvy_dx)
    work = 0.5 * (vx + vx_u) * tyx + 0.5 * (vy + vy_u) * tyy
    fy = np.stack([tyx, tyy, work])

    out[1:] = (fx - np.roll(fx, 1, 1)) / dx + (fy - np.roll(fy, 1, 2)) / dy
    return out


def _ns_rhs(cons, eta, zeta, gamma, dx, dy, step):
    prim = _to_primitive(cons, gamma)
    if prim[0].min() <= 0 or prim[3].min() <= 0:
        raise SolverError(f"negative density or pressure at internal step {step}")
    rhs = -_rusanov_divergence(prim, cons, gamma, dx, 0) - _rusanov_divergence(prim, cons, gamma, dy, 1)
    rhs += _viscous_divergence(prim, eta, zeta, dx, dy)
    return rhs, prim


def solve_ns2d(ic: Field, eta: float, zeta: float, gamma: float, grid: Grid,
               config: SolverConfig = SolverConfig()) -> Trajectory:
    """Integrate 2D compressible Navier-Stokes; frames hold (rho, v_x, v_y, p)."""
    if grid.dim != 2 or ic.channels != 4:
        raise ValueError("Navier-Stokes needs a 4-channel field on a 2D grid")
    check_finite(ic.values, "initial condition")
    if ic.values[0].min() <= 0 or ic.values[3].min() <= 0:
        raise ValueError("initial density and pressure must be positive")
    dx, dy = grid.spacing
    h = min(dx, dy)
    frames = np.empty((grid.n_frames, 4) + grid.shape)
    frames[0] = ic.values
    cons = _to_conservative(ic.values, gamma)
    visc = (4.0 / 3.0 * eta + zeta)
    steps = 0
    for n in range(1, grid.n_frames):
        prim = _to_primitive(cons, gamma)
        c = np.sqrt(gamma * prim[3] / prim[0])
        smax = float((np.maximum(np.abs(prim[1]), np.abs(prim[2])) + c).max())
        rate = smax / (config.cfl * h) + visc / (float(prim[0].min()) * config.diffusion_number * h * h)
        nsub, dt = _substeps(1.0 / rate, grid.dt_frame)
        for _ in range(nsub):
            steps += 1
            if steps > config.max_steps:
                raise SolverError(f"internal step cap {config.max_steps} exceeded at frame {n}")
            k1, _ = _ns_rhs(cons, eta, zeta, gamma, dx, dy, steps)
            stage = cons + dt * k1
            k2, _ = _ns_rhs(stage, eta, zeta, gamma, dx, dy, steps)
            cons = 0.5 * (cons + stage + dt * k2)
        if not np.isfinite(cons).all():
            raise SolverError(f"Navier-Stokes solution blew up at frame {n}")
        prim = _to_primitive(cons, gamma)
        if prim[0].min() <= 0 or prim[3].min() <= 0:
            raise SolverError(f"negative density or pressure at internal step {steps}")
        frames[n] = prim
    return Trajectory(grid, frames)


def solve(ic: Field, pde: PdeParameters, grid: Grid, config: SolverConfig = SolverConfig()) -> Trajectory:
    if pde.family is Family.BURGERS1D:
        return solve_burgers(ic, pde.coefficients[0], grid, config)
    eta, zeta = pde.coefficients
    return solve_ns2d(ic, eta, zeta, pde.gamma, grid, config)


def simulate(candidate: Candidate, grid: Grid, config: SolverConfig = SolverConfig(),
             weights=None) -> LabeledSample:
    """Run the ground-truth solver and cache the residual score of the result."""
    truth = solve(candidate.ic_field, candidate.pde, grid, config)
    return LabeledSample(candidate, truth, trajectory_score(truth, candidate.pde, weights))
