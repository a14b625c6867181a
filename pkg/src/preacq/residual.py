"""Physics residual error (PRE) on stored trajectories.

Derivatives are finite-difference stencils applied as periodic convolutions in
space and as a central stencil over stored frames in time, so the residual is
available only on interior frames ``1 .. n_frames - 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Family, Grid, Trajectory, check_finite

CENTRAL_FIRST = ((-1, -0.5), (0, 0.0), (1, 0.5))
CENTRAL_SECOND = ((-1, 1.0), (0, -2.0), (1, 1.0))


@dataclass(frozen=True)
class Stencil:
    """Offset/weight pairs for one derivative, weights already divided by ``h**order``."""

    offsets: tuple[int, ...]
    weights: tuple[float, ...]

    @classmethod
    def scaled(cls, taps, h: float, order: int) -> Stencil:
        scale = h ** order
        return cls(tuple(o for o, _ in taps), tuple(w / scale for _, w in taps))

    def kernel(self) -> np.ndarray:
        """Dense kernel centred on the middle entry (correlation orientation)."""
        half = max(abs(o) for o in self.offsets)
        k = np.zeros(2 * half + 1)
        for o, w in zip(self.offsets, self.weights):
            k[half + o] += w
        return k


def apply_periodic(u: np.ndarray, stencil: Stencil, axis: int) -> np.ndarray:
    """Correlate ``u`` with ``stencil`` along ``axis`` with periodic wrap.

    ``out[i] = sum_j w_j * u[i + o_j]`` accumulated in stencil order.
    """
    out = np.zeros_like(u, dtype=np.float64)
    for o, w in zip(stencil.offsets, stencil.weights):
        out += w * np.roll(u, -o, axis=axis)
    return out


def apply_interior(u: np.ndarray, stencil: Stencil, axis: int = 0) -> np.ndarray:
    """Correlate along ``axis`` keeping only indices where the stencil fits (no wrap)."""
    half = max(abs(o) for o in stencil.offsets)
    n = u.shape[axis]
    out = None
    for o, w in zip(stencil.offsets, stencil.weights):
        term = w * np.take(u, np.arange(half + o, n - half + o), axis=axis)
        out = term if out is None else out + term
    return out


@dataclass(frozen=True)
class StencilSpec:
    """Central second-order stencils for one grid.

    ``dt`` is the stored-frame spacing; ``dx`` holds one spacing per spatial axis.
    """

    dt: float
    dx: tuple[float, ...]
    first_taps: tuple = CENTRAL_FIRST
    second_taps: tuple = CENTRAL_SECOND

    @classmethod
    def for_grid(cls, grid: Grid) -> StencilSpec:
        return cls(grid.dt_frame, grid.spacing)

    @property
    def time(self) -> Stencil:
        return Stencil.scaled(self.first_taps, self.dt, 1)

    def first(self, axis: int) -> Stencil:
        return Stencil.scaled(self.first_taps, self.dx[axis], 1)

    def second(self, axis: int) -> Stencil:
        return Stencil.scaled(self.second_taps, self.dx[axis], 2)


@dataclass(frozen=True, eq=False)
class ResidualField:
    """``values.shape == (n_frames - 2, equations, *grid.shape)``."""

    grid: Grid
    values: np.ndarray

    @property
    def equations(self) -> int:
        return self.values.shape[1]


class _Ops:
    """Derivative helpers on arrays shaped ``(frames, *spatial)``."""

    def __init__(self, spec: StencilSpec):
        self.spec = spec

    def dt(self, u):
        return apply_interior(u, self.spec.time, axis=0)

    def d(self, u, axis):
        # spatial axes sit after the leading frame axis
        return apply_periodic(u, self.spec.first(axis), axis=axis + 1)

    def dd(self, u, axis):
        return apply_periodic(u, self.spec.second(axis), axis=axis + 1)


def _check_shape(traj: Trajectory, family: Family):
    if traj.grid.dim != family.dim or traj.channels != family.channels:
        raise ValueError(
            f"{family.value} residual needs a {family.channels}-channel {family.dim}D trajectory, "
            f"got {traj.channels} channels on a {traj.grid.dim}D grid")


def pre_burgers(traj: Trajectory, nu: float, spec: StencilSpec | None = None) -> ResidualField:
    """Residual of ``u_t + u u_x - nu u_xx`` on interior frames."""
    _check_shape(traj, Family.BURGERS1D)
    ops = _Ops(spec or StencilSpec.for_grid(traj.grid))
    u = traj.values[:, 0]
    inner = u[1:-1]
    r = ops.dt(u) + inner * ops.d(inner, 0) - nu * ops.dd(inner, 0)
    return ResidualField(traj.grid, r[:, None])


def pre_ns2d(traj: Trajectory, eta: float, zeta: float, gamma: float = 5.0 / 3.0,
             spec: StencilSpec | None = None) -> ResidualField:
    """Continuity and momentum residuals of compressible Navier-Stokes on interior frames.

    Channels are (rho, v_x, v_y, p). The energy equation is not included, so
    ``gamma`` only enters through the signature.
    """
    _check_shape(traj, Family.NS2D)
    ops = _Ops(spec or StencilSpec.for_grid(traj.grid))
    rho, vx, vy, p = (traj.values[:, c] for c in range(4))
    ri, xi, yi, pi = rho[1:-1], vx[1:-1], vy[1:-1], p[1:-1]

    mass = ops.dt(rho) + ops.d(ri * xi, 0) + ops.d(ri * yi, 1)

    lap_x = ops.dd(xi, 0) + ops.dd(xi, 1)
    lap_y = ops.dd(yi, 0) + ops.dd(yi, 1)
    # grad(div v) with pure second derivatives on the diagonal
    graddiv_x = ops.dd(xi, 0) + ops.d(ops.d(yi, 1), 0)
    graddiv_y = ops.d(ops.d(xi, 0), 1) + ops.dd(yi, 1)
    bulk = zeta + eta / 3.0

    mom_x = (ri * (ops.dt(vx) + xi * ops.d(xi, 0) + yi * ops.d(xi, 1)) + ops.d(pi, 0)
             - eta * lap_x - bulk * graddiv_x)
    mom_y = (ri * (ops.dt(vy) + xi * ops.d(yi, 0) + yi * ops.d(yi, 1)) + ops.d(pi, 1)
             - eta * lap_y - bulk * graddiv_y)
    return ResidualField(traj.grid, np.stack([mass, mom_x, mom_y], axis=1))


def residual(traj: Trajectory, pde, spec: StencilSpec | None = None) -> ResidualField:
    """Dispatch on the PDE family of ``pde`` (a :class:`~preacq.core.PdeParameters`)."""
    if pde.family is Family.BURGERS1D:
        return pre_burgers(traj, pde.coefficients[0], spec)
    eta, zeta = pde.coefficients
    return pre_ns2d(traj, eta, zeta, pde.gamma, spec)


def score(res: ResidualField | np.ndarray, weights=None) -> float:
    """Mean absolute residual over interior frames, points and equations.

    ``weights`` scales each equation channel before averaging; the default
    of all ones is the plain mean.
    """
    r = res.values if isinstance(res, ResidualField) else np.asarray(res, dtype=np.float64)
    check_finite(r, "residual")
    a = np.abs(r)
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (r.shape[1],):
            raise ValueError(f"need {r.shape[1]} channel weights, got {w.shape}")
        a = a * w.reshape((1, -1) + (1,) * (r.ndim - 2))
    return float(a.mean())


def trajectory_score(traj: Trajectory, pde, weights=None, spec: StencilSpec | None = None) -> float:
    return score(residual(traj, pde, spec), weights)
