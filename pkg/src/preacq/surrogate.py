"""One-step surrogate models and autoregressive rollout.

Two lightweight models are provided:

* :class:`SpectralRidgeSurrogate`, a per-Fourier-mode multiplier whose value is a
  polynomial in the PDE coefficients, fitted in closed form by ridge regression.
* :class:`StencilNetSurrogate`, a one-hidden-layer network applied pointwise to a
  periodic window of the state, trained with momentum SGD.

Both condition on the PDE coefficients by taking them as an extra input next to
the state, and both are immutable once fitted.
"""

from __future__ import annotations

import itertools
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from typing import Protocol

import numpy as np

from .core import Candidate, Family, Grid, LabeledSample, PdeParameters, Trajectory

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PREAQM"
CHECKPOINT_VERSION = 1


class RolloutError(RuntimeError):
    def __init__(self, step: int, message: str | None = None):
        super().__init__(message or f"surrogate rollout produced non-finite values at step {step}")
        self.step = step


class FitError(RuntimeError):
    pass


class Surrogate(Protocol):
    family: Family
    grid_shape: tuple[int, ...]

    def step(self, values: np.ndarray, pde: PdeParameters) -> np.ndarray:
        """Map a ``(channels, *spatial)`` state to the next stored frame."""


def _check_samples(samples) -> tuple[Family, Grid]:
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one labeled sample to fit")
    family = samples[0].candidate.pde.family
    grid = samples[0].truth.grid
    for s in samples[1:]:
        if s.candidate.pde.family is not family:
            raise ValueError("samples mix PDE families")
        if s.truth.grid != grid:
            raise ValueError(f"samples mix grids ({s.truth.grid} vs {grid})")
    return family, grid


def polynomial_features(delta: np.ndarray, degree: int) -> np.ndarray:
    """Monomials of ``delta`` up to ``degree`` including the constant, rows per sample."""
    delta = np.atleast_2d(np.asarray(delta, dtype=np.float64))
    cols = [np.ones(delta.shape[0])]
    for d in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(delta.shape[1]), d):
            cols.append(np.prod(delta[:, combo], axis=1))
    return np.stack(cols, axis=1)


# Spectral ridge ---------------------------------------------------------------

@dataclass(frozen=True)
class SpectralRidgeConfig:
    k_max: int | None = None
    degree: int = 2
    ridge: float = 1e-8
    max_gain: float | None = 1.0

    def resolved_k_max(self, dim: int) -> int:
        if self.k_max is not None:
            return self.k_max
        return 16 if dim == 1 else 8


def _mode_mask(grid_shape: tuple[int, ...], k_max: int) -> np.ndarray:
    """Boolean mask over the ``rfftn`` half-spectrum keeping ``|k| <= k_max`` per axis."""
    spec_shape = grid_shape[:-1] + (grid_shape[-1] // 2 + 1,)
    keep = []
    for ax, n in enumerate(grid_shape):
        k = np.fft.rfftfreq(n, 1.0 / n) if ax == len(grid_shape) - 1 else np.fft.fftfreq(n, 1.0 / n)
        keep.append(np.abs(k) <= k_max)
    mask = keep[0]
    for m in keep[1:]:
        mask = np.logical_and.outer(mask, m)
    return mask.reshape(spec_shape)


@dataclass(frozen=True, eq=False)
class SpectralRidgeSurrogate:
    """``u_hat_k(t+1) = M_k(delta) u_hat_k(t)`` on retained modes, zero elsewhere.

    ``coef`` has shape ``(channels, n_retained_modes, n_features)``. When
    ``max_gain`` is set, multipliers are shrunk radially to at most that modulus,
    which keeps rollouts bounded when the polynomial in ``delta`` is evaluated
    outside the span of the training data.
    """

    family: Family
    grid_shape: tuple[int, ...]
    k_max: int
    degree: int
    coef: np.ndarray
    max_gain: float | None = 1.0

    kind = "spectral_ridge"

    @property
    def mask(self) -> np.ndarray:
        return _mode_mask(self.grid_shape, self.k_max)

    def multipliers(self, pde: PdeParameters) -> np.ndarray:
        phi = polynomial_features(pde.vector, self.degree)[0]
        m = self.coef @ phi
        if self.max_gain is not None:
            mag = np.abs(m)
            m = np.where(mag > self.max_gain, m * (self.max_gain / np.maximum(mag, 1e-300)), m)
        return m

    def step(self, values: np.ndarray, pde: PdeParameters) -> np.ndarray:
        axes = tuple(range(1, values.ndim))
        uh = np.fft.rfftn(values, axes=axes, norm="forward")
        mask = self.mask
        out = np.zeros_like(uh)
        out[:, mask] = self.multipliers(pde) * uh[:, mask]
        return np.fft.irfftn(out, s=self.grid_shape, axes=axes, norm="forward")

    @classmethod
    def identity(cls, family: Family, grid_shape, k_max: int | None = None, degree: int = 2):
        """A model whose every retained multiplier is exactly one."""
        family = Family(family)
        grid_shape = tuple(grid_shape)
        k_max = SpectralRidgeConfig(k_max).resolved_k_max(len(grid_shape))
        n_modes = int(_mode_mask(grid_shape, k_max).sum())
        n_feat = polynomial_features(np.zeros(len(family.coefficient_names)), degree).shape[1]
        coef = np.zeros((family.channels, n_modes, n_feat), dtype=np.complex128)
        coef[..., 0] = 1.0
        return cls(family, grid_shape, k_max, degree, coef)

    def meta(self) -> dict:
        return {"k_max": self.k_max, "degree": self.degree, "max_gain": self.max_gain,
                "coef_shape": list(self.coef.shape)}

    def flat(self) -> np.ndarray:
        return self.coef.view(np.float64).ravel()


def fit_spectral_ridge(samples, config: SpectralRidgeConfig = SpectralRidgeConfig()) -> SpectralRidgeSurrogate:
    """Closed-form ridge fit of the per-mode multipliers over all consecutive frame pairs."""
    samples = list(samples)
    family, grid = _check_samples(samples)
    k_max = config.resolved_k_max(grid.dim)
    mask = _mode_mask(grid.shape, k_max)
    axes = tuple(range(2, grid.dim + 2))

    phi = polynomial_features(np.stack([s.candidate.pde.vector for s in samples]), config.degree)
    n_feat = phi.shape[1]
    # (samples, frames, channels, modes)
    uh = np.stack([np.fft.rfftn(s.truth.values, axes=axes, norm="forward")[:, :, mask] for s in samples])
    prev, nxt = uh[:, :-1], uh[:, 1:]
    energy = np.sum(np.abs(prev) ** 2, axis=1)
    cross = np.sum(np.conj(prev) * nxt, axis=1)

    gram = np.einsum("scm,sf,sg->cmfg", energy, phi, phi)
    rhs = np.einsum("scm,sf->cmf", cross, phi)
    scale = float(np.max(np.trace(gram, axis1=2, axis2=3))) / n_feat
    if scale == 0.0:
        scale = 1.0
    gram = gram + config.ridge * scale * np.eye(n_feat)
    try:
        coef = np.linalg.solve(gram.astype(np.complex128), rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise FitError("singular normal equations; use a nonzero ridge strength") from exc
    if not np.isfinite(coef).all():
        raise FitError("singular normal equations; use a nonzero ridge strength")
    return SpectralRidgeSurrogate(family, grid.shape, k_max, config.degree, coef, config.max_gain)


# Stencil network --------------------------------------------------------------

@dataclass(frozen=True)
class StencilNetConfig:
    half_width: int = 2
    hidden: int = 32
    epochs: int = 20
    learning_rate: float = 0.02
    momentum: float = 0.9
    batch_size: int = 512
    seed: int = 0
    init: str = "normal"
    init_scale: float = 0.3
    loss_tolerance: float = 1e-2


def _windows(values: np.ndarray, half_width: int) -> np.ndarray:
    """Periodic windows: ``(channels, n)`` or ``(batch, channels, n)`` -> ``(..., n, channels * (2w + 1))``."""
    shifted = [np.roll(values, -o, axis=-1) for o in range(-half_width, half_width + 1)]
    w = np.stack(shifted, axis=-1)  # (..., C, n, 2w+1)
    w = np.moveaxis(w, -3, -2)  # (..., n, C, 2w+1)
    return w.reshape(w.shape[:-2] + (-1,))


@dataclass(frozen=True, eq=False)
class StencilNetSurrogate:
    """``u(t+1) = u(t) + net([window(u), delta])`` with shared weights over grid points."""

    family: Family
    grid_shape: tuple[int, ...]
    half_width: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    loss_history: tuple[float, ...] = field(default=())

    kind = "stencil_net"

    @property
    def n_inputs(self) -> int:
        return self.w1.shape[1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(x @ self.w1.T + self.b1) @ self.w2.T + self.b2

    def step(self, values: np.ndarray, pde: PdeParameters) -> np.ndarray:
        win = _windows(values, self.half_width)
        x = np.concatenate([win, np.broadcast_to(pde.vector, win.shape[:-1] + (pde.vector.size,))], axis=-1)
        return values + self.forward(x).T

    def params(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def meta(self) -> dict:
        return {"half_width": self.half_width, "hidden": self.w1.shape[0],
                "n_inputs": self.w1.shape[1], "loss_history": list(self.loss_history)}

    def flat(self) -> np.ndarray:
        return self.params()


def unpack_params(theta: np.ndarray, n_in: int, hidden: int, n_out: int):
    i = 0
    w1 = theta[i:i + hidden * n_in].reshape(hidden, n_in)
    i += hidden * n_in
    b1 = theta[i:i + hidden]
    i += hidden
    w2 = theta[i:i + n_out * hidden].reshape(n_out, hidden)
    i += n_out * hidden
    b2 = theta[i:i + n_out]
    return w1, b1, w2, b2


def net_loss_and_grad(theta: np.ndarray, x: np.ndarray, target: np.ndarray, hidden: int):
    """Mean squared error of the pointwise net and its gradient with respect to ``theta``."""
    n_out = target.shape[1]
    w1, b1, w2, b2 = unpack_params(theta, x.shape[1], hidden, n_out)
    h = np.tanh(x @ w1.T + b1)
    err = h @ w2.T + b2 - target
    loss = float(np.mean(err * err))
    dy = 2.0 * err / err.size
    gw2 = dy.T @ h
    gb2 = dy.sum(axis=0)
    dz = (dy @ w2) * (1.0 - h * h)
    gw1 = dz.T @ x
    gb1 = dz.sum(axis=0)
    return loss, np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])


def stencil_net_dataset(samples, half_width: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``[window, delta]`` inputs and ``u(t+1) - u(t)`` targets over all frame pairs."""
    xs, ys = [], []
    for s in samples:
        v = s.truth.values
        win = _windows(v[:-1], half_width)  # (T-1, n, C*(2w+1))
        delta = np.broadcast_to(s.candidate.pde.vector, win.shape[:-1] + (s.candidate.pde.vector.size,))
        xs.append(np.concatenate([win, delta], axis=-1).reshape(-1, win.shape[-1] + delta.shape[-1]))
        ys.append(np.moveaxis(v[1:] - v[:-1], 1, -1).reshape(-1, v.shape[1]))
    return np.concatenate(xs), np.concatenate(ys)


def init_params(n_in: int, hidden: int, n_out: int, config: StencilNetConfig) -> np.ndarray:
    size = hidden * n_in + hidden + n_out * hidden + n_out
    if config.init == "zeros":
        return np.zeros(size)
    rng = np.random.default_rng(config.seed)
    w1 = rng.normal(0.0, config.init_scale / np.sqrt(n_in), size=(hidden, n_in))
    w2 = rng.normal(0.0, config.init_scale / np.sqrt(hidden), size=(n_out, hidden))
    return np.concatenate([w1.ravel(), np.zeros(hidden), w2.ravel(), np.zeros(n_out)])


def fit_stencil_net(samples, config: StencilNetConfig = StencilNetConfig()) -> StencilNetSurrogate:
    samples = list(samples)
    family, grid = _check_samples(samples)
    if grid.dim != 1:
        raise ValueError("the stencil network is implemented for 1D families only")
    x, y = stencil_net_dataset(samples, config.half_width)
    n_in, n_out = x.shape[1], y.shape[1]
    theta = init_params(n_in, config.hidden, n_out, config)
    velocity = np.zeros_like(theta)
    rng = np.random.default_rng(config.seed + 1)
    history = [net_loss_and_grad(theta, x, y, config.hidden)[0]]
    for epoch in range(config.epochs):
        order = rng.permutation(x.shape[0])
        for start in range(0, x.shape[0], config.batch_size):
            idx = order[start:start + config.batch_size]
            _, g = net_loss_and_grad(theta, x[idx], y[idx], config.hidden)
            velocity = config.momentum * velocity - config.learning_rate * g
            theta = theta + velocity
        loss = net_loss_and_grad(theta, x, y, config.hidden)[0]
        if not np.isfinite(loss):
            raise FitError(f"stencil network training diverged at epoch {epoch}")
        if loss > history[-1] * (1.0 + config.loss_tolerance):
            log.debug("stencil net loss rose at epoch %d: %.3e -> %.3e", epoch, history[-1], loss)
        history.append(loss)
    w1, b1, w2, b2 = (a.copy() for a in unpack_params(theta, n_in, config.hidden, n_out))
    return StencilNetSurrogate(family, grid.shape, config.half_width, w1, b1, w2, b2, tuple(history))


# Rollout ----------------------------------------------------------------------

def rollout_values(model: Surrogate, ic: np.ndarray, pde: PdeParameters, n_frames: int,
                   clamp: float | None = None) -> tuple[np.ndarray, int | None]:
    """Autoregressive frames from ``ic``.

    Returns the stacked frames and the first step whose output was non-finite (or
    ``None``). Without ``clamp`` a blow-up raises :class:`RolloutError`; with it the
    failing frame is clipped to ``[-clamp, clamp]`` and held for the remaining steps.
    """
    out = np.empty((n_frames,) + ic.shape)
    out[0] = ic
    u = ic
    for n in range(1, n_frames):
        with np.errstate(all="ignore"):
            u = model.step(u, pde)
        if not np.isfinite(u).all() or (clamp is not None and np.abs(u).max() > clamp):
            if clamp is None:
                raise RolloutError(n)
            out[n:] = np.clip(np.nan_to_num(u, nan=clamp, posinf=clamp, neginf=-clamp), -clamp, clamp)
            return out, n
        out[n] = u
    return out, None


def rollout(model: Surrogate, candidate: Candidate, grid: Grid) -> Trajectory:
    if model.family is not candidate.pde.family:
        raise ValueError(f"model is for {model.family.value}, candidate is {candidate.pde.family.value}")
    if tuple(model.grid_shape) != grid.shape:
        raise ValueError(f"model grid {model.grid_shape} does not match {grid.shape}")
    values, _ = rollout_values(model, candidate.ic_field.values, candidate.pde, grid.n_frames)
    return Trajectory(grid, values)


# Factory and checkpoints --------------------------------------------------------

SURROGATES = {
    "spectral_ridge": (SpectralRidgeConfig, fit_spectral_ridge),
    "stencil_net": (StencilNetConfig, fit_stencil_net),
}


def fit_surrogate(name: str, samples, params: dict | None = None, seed: int | None = None):
    """Fit the surrogate registered under ``name`` with keyword ``params``."""
    try:
        config_cls, fit = SURROGATES[name]
    except KeyError:
        raise ValueError(f"unknown surrogate {name!r}; choose from {sorted(SURROGATES)}") from None
    params = dict(params or {})
    if seed is not None and "seed" in config_cls.__dataclass_fields__:
        params.setdefault("seed", seed)
    return fit(samples, config_cls(**params))


def save_model(path, model) -> None:
    """Versioned checkpoint: magic, version, JSON header length, header, float64 dump."""
    header = {"kind": model.kind, "family": model.family.value,
              "grid_shape": list(model.grid_shape), **model.meta()}
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<qq", CHECKPOINT_VERSION, len(raw)))
        fh.write(raw)
        fh.write(np.ascontiguousarray(model.flat(), dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a model checkpoint")
        version, n = struct.unpack("<qq", fh.read(16))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(n))
        flat = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    family = Family(header["family"])
    shape = tuple(header["grid_shape"])
    if header["kind"] == SpectralRidgeSurrogate.kind:
        coef = flat.view(np.complex128).reshape(header["coef_shape"]).copy()
        return SpectralRidgeSurrogate(family, shape, header["k_max"], header["degree"], coef,
                                      header["max_gain"])
    if header["kind"] == StencilNetSurrogate.kind:
        n_out = family.channels
        w1, b1, w2, b2 = (a.copy() for a in unpack_params(flat, header["n_inputs"], header["hidden"], n_out))
        return StencilNetSurrogate(family, shape, header["half_width"], w1, b1, w2, b2,
                                   tuple(header["loss_history"]))
    raise ValueError(f"unknown model kind {header['kind']!r}")


def config_dict(config) -> dict:
    return asdict(config)
