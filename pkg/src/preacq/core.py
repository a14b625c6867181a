"""Grids, fields, trajectories and the sample containers shared across the package.

Every array is 64-bit float. Spatial axes are periodic with no duplicated
endpoint, so ``spacing * n_points == length`` on each axis.
"""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

TRAJECTORY_MAGIC = b"PREAQ1"


class Family(str, enum.Enum):
    BURGERS1D = "burgers1d"
    NS2D = "ns2d"

    @property
    def dim(self) -> int:
        return 1 if self is Family.BURGERS1D else 2

    @property
    def channels(self) -> int:
        return 1 if self is Family.BURGERS1D else 4

    @property
    def coefficient_names(self) -> tuple[str, ...]:
        return ("nu",) if self is Family.BURGERS1D else ("eta", "zeta")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Grid:
    dim: int
    n_points: tuple[int, ...]
    length: tuple[float, ...]
    dt_frame: float
    n_frames: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.n_points) != self.dim or len(self.length) != self.dim:
            raise ValueError("n_points and length need one entry per axis")
        if any(n <= 0 for n in self.n_points) or any(L <= 0 for L in self.length):
            raise ValueError("grid sizes must be positive")
        if self.dt_frame <= 0:
            raise ValueError("dt_frame must be positive")
        if self.n_frames < 3:
            raise ValueError(f"n_frames must be >= 3, got {self.n_frames}")

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.length, self.n_points))

    @property
    def t_final(self) -> float:
        return (self.n_frames - 1) * self.dt_frame

    @property
    def n_spatial(self) -> int:
        return int(np.prod(self.n_points))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.n_points)

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Cell coordinates per axis, ``indexing='ij'`` meshes for 2D."""
        axes = [np.arange(n) * h for n, h in zip(self.n_points, self.spacing)]
        if self.dim == 1:
            return (axes[0],)
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def times(self) -> np.ndarray:
        return np.arange(self.n_frames) * self.dt_frame

    def with_frames(self, dt_frame: float | None = None, n_frames: int | None = None) -> Grid:
        return Grid(
            self.dim,
            self.n_points,
            self.length,
            self.dt_frame if dt_frame is None else dt_frame,
            self.n_frames if n_frames is None else n_frames,
        )

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "n_points": list(self.n_points),
            "length": list(self.length),
            "dt_frame": self.dt_frame,
            "n_frames": self.n_frames,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Grid:
        return cls(int(d["dim"]), tuple(int(n) for n in d["n_points"]),
                   tuple(float(L) for L in d["length"]), float(d["dt_frame"]), int(d["n_frames"]))


def make_grid(dim, n_points, length, dt_frame, n_frames) -> Grid:
    """Build a periodic grid; scalar ``n_points``/``length`` are broadcast to every axis."""
    if np.isscalar(n_points):
        n_points = (n_points,) * dim
    if np.isscalar(length):
        length = (length,) * dim
    n_points = tuple(int(n) for n in n_points)
    length = tuple(float(L) for L in length)
    return Grid(int(dim), n_points, length, float(dt_frame), int(n_frames))


def check_finite(values: np.ndarray, what: str = "field") -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.unravel_index(int(np.argmax(bad)), values.shape)
        raise FloatingPointError(f"{what} has non-finite value at index {tuple(int(i) for i in idx)}")


@dataclass(frozen=True, eq=False)
class Field:
    """A multi-channel snapshot, ``values.shape == (channels, *grid.shape)``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == self.grid.dim:
            v = v[None]
        if v.shape[1:] != self.grid.shape:
            raise ValueError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def channels(self) -> int:
        return self.values.shape[0]


def field_stats(f: Field) -> tuple[float, float, float, float]:
    """Return ``(min, max, mean, rms)`` over every channel and point."""
    v = f.values if isinstance(f, Field) else np.asarray(f, dtype=np.float64)
    check_finite(v)
    return float(v.min()), float(v.max()), float(v.mean()), float(np.sqrt(np.mean(v * v)))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Stored frames of one solution, ``values.shape == (n_frames, channels, *grid.shape)``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != self.grid.dim + 2 or v.shape[2:] != self.grid.shape:
            raise ValueError(f"trajectory shape {v.shape} does not match grid {self.grid.shape}")
        if v.shape[0] != self.grid.n_frames:
            raise ValueError(f"expected {self.grid.n_frames} frames, got {v.shape[0]}")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    def frame(self, n: int) -> Field:
        return Field(self.grid, self.values[n])

    @property
    def frames(self) -> list[Field]:
        return [self.frame(n) for n in range(self.n_frames)]

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        write_trajectory(buf, self)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> Trajectory:
        return read_trajectory(io.BytesIO(data))


def write_trajectory(fh: BinaryIO, traj: Trajectory) -> None:
    """Little-endian store: magic, dim, n_points[], length[], dt_frame, n_frames, channels, data."""
    g = traj.grid
    fh.write(TRAJECTORY_MAGIC)
    fh.write(struct.pack("<q", g.dim))
    fh.write(struct.pack(f"<{g.dim}q", *g.n_points))
    fh.write(struct.pack(f"<{g.dim}d", *g.length))
    fh.write(struct.pack("<dqq", g.dt_frame, g.n_frames, traj.channels))
    fh.write(np.ascontiguousarray(traj.values, dtype="<f8").tobytes())


def read_trajectory(fh: BinaryIO) -> Trajectory:
    magic = fh.read(len(TRAJECTORY_MAGIC))
    if magic != TRAJECTORY_MAGIC:
        raise ValueError(f"bad trajectory magic {magic!r}")
    (dim,) = struct.unpack("<q", fh.read(8))
    if dim not in (1, 2):
        raise ValueError(f"bad dim {dim} in trajectory header")
    n_points = struct.unpack(f"<{dim}q", fh.read(8 * dim))
    length = struct.unpack(f"<{dim}d", fh.read(8 * dim))
    dt_frame, n_frames, channels = struct.unpack("<dqq", fh.read(24))
    grid = Grid(dim, tuple(n_points), tuple(length), dt_frame, n_frames)
    count = n_frames * channels * grid.n_spatial
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated trajectory payload")
    values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return Trajectory(grid, values.reshape((n_frames, channels) + grid.shape))


def save_trajectory(path, traj: Trajectory) -> None:
    with open(path, "wb") as fh:
        write_trajectory(fh, traj)


def load_trajectory(path) -> Trajectory:
    with open(path, "rb") as fh:
        return read_trajectory(fh)


DEFAULT_GAMMA = 5.0 / 3.0


@dataclass(frozen=True)
class PdeParameters:
    family: Family
    coefficients: tuple[float, ...]
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        n = len(self.family.coefficient_names)
        if len(self.coefficients) != n:
            raise ValueError(f"{self.family.value} takes {n} coefficients, got {len(self.coefficients)}")
        if any(not c > 0 for c in self.coefficients):
            raise ValueError(f"coefficients must be positive, got {self.coefficients}")
        if self.family is Family.NS2D and not self.gamma > 1:
            raise ValueError(f"adiabatic index must exceed 1, got {self.gamma}")

    @classmethod
    def burgers(cls, nu: float) -> PdeParameters:
        return cls(Family.BURGERS1D, (nu,))

    @classmethod
    def ns2d(cls, eta: float, zeta: float, gamma: float = DEFAULT_GAMMA) -> PdeParameters:
        return cls(Family.NS2D, (eta, zeta), gamma)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.coefficients, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class IcParameters:
    latent: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "latent", _frozen(np.ravel(self.latent)))

    @property
    def dim(self) -> int:
        return self.latent.size


@dataclass(frozen=True, eq=False)
class Candidate:
    id: int
    pde: PdeParameters
    ic: IcParameters
    ic_field: Field

    def __post_init__(self):
        if self.ic_field.channels != self.pde.family.channels:
            raise ValueError(
                f"{self.pde.family.value} expects {self.pde.family.channels} channels, "
                f"got {self.ic_field.channels}")


@dataclass(frozen=True, eq=False)
class LabeledSample:
    candidate: Candidate
    truth: Trajectory
    truth_score: float

    def __post_init__(self):
        if not np.array_equal(self.truth.values[0], self.candidate.ic_field.values):
            raise ValueError(f"candidate {self.candidate.id}: frame 0 differs from the initial condition")
        if not self.truth_score >= 0:
            raise ValueError(f"truth_score must be >= 0, got {self.truth_score}")

    @property
    def id(self) -> int:
        return self.candidate.id


__all__ = [
    "Candidate",
    "Family",
    "Field",
    "Grid",
    "IcParameters",
    "LabeledSample",
    "PdeParameters",
    "Trajectory",
    "check_finite",
    "field_stats",
    "load_trajectory",
    "make_grid",
    "read_trajectory",
    "save_trajectory",
    "write_trajectory",
]
