"""Pool-based active learning experiment: build pool, then train, score, select, simulate.

Every random draw comes from a stream keyed by ``(experiment seed, purpose, index)``,
so results do not depend on worker count or on whether a run was resumed from a
checkpoint.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acquisition import (
    normalize,
    score_pool,
    select_random,
    select_sbal,
    select_topk,
    write_score_dump,
)
from .core import Candidate, Family, Field, Grid, IcParameters, LabeledSample, PdeParameters, Trajectory
from .parallel import pmap, resolve_workers
from .solvers import IcGeneratorSpec, SolverConfig, SolverError, generate_ic, simulate
from .surrogate import SURROGATES, fit_surrogate, rollout_values

log = logging.getLogger(__name__)

RMSE_CAP = 1e6

_POOL, _INITIAL, _SELECT, _FIT = 1, 2, 3, 4

FAMILY_DEFAULTS = {
    Family.BURGERS1D: dict(
        n_points=256, length=2 * math.pi, dt_frame=0.05, n_frames=41,
        ranges={"nu": [0.1, 1.0]},
        pool_size=128, test_size=32, n_initial=8, batch_size=8, rounds=6,
        ic={"n_modes": 4, "amplitude_range": [-1.0, 1.0], "perturbation": 0.1},
    ),
    Family.NS2D: dict(
        n_points=64, length=1.0, dt_frame=0.05, n_frames=21,
        ranges={"eta": [1e-2, 1e-1], "zeta": [1e-2, 1e-1]},
        pool_size=64, test_size=16, n_initial=8, batch_size=8, rounds=4,
        ic={"n_modes": 4, "amplitude_range": [-1.0, 1.0], "perturbation": 0.1},
    ),
}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), purpose, int(index)]))


def _derived_seed(seed: int, purpose: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), purpose, int(index)]).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    family: str = "burgers1d"
    n_points: int = 256
    length: float = 2 * math.pi
    dt_frame: float = 0.05
    n_frames: int = 41
    ic: dict = field(default_factory=dict)
    ranges: dict = field(default_factory=dict)
    pool_size: int = 128
    test_size: int = 32
    n_initial: int = 8
    batch_size: int = 8
    rounds: int = 6
    surrogate: str = "spectral_ridge"
    surrogate_params: dict = field(default_factory=dict)
    policy: str = "topk"
    beta: float = 1.0
    normalize: bool = True
    channel_weights: list | None = None
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    solver: dict = field(default_factory=dict)
    test_retries: int = 64
    workers: int = 1

    @classmethod
    def defaults(cls, family: str = "burgers1d") -> ExperimentConfig:
        fam = Family(family)
        d = FAMILY_DEFAULTS[fam]
        return cls(family=fam.value, **{k: (dict(v) if isinstance(v, dict) else v) for k, v in d.items()})

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        """Fill family defaults, reject unknown keys, and validate."""
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown key")
        family = data.get("family", "burgers1d")
        try:
            cfg = cls.defaults(family)
        except ValueError:
            raise ConfigError("family", f"unknown family {family!r}") from None
        for k, v in data.items():
            if k in ("ic", "ranges") and isinstance(v, dict):
                merged = dict(getattr(cfg, k))
                merged.update(v)
                v = merged
            setattr(cfg, k, v)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def family_enum(self) -> Family:
        return Family(self.family)

    @property
    def grid(self) -> Grid:
        from .core import make_grid

        return make_grid(self.family_enum.dim, self.n_points, self.length, self.dt_frame, self.n_frames)

    @property
    def ic_spec(self) -> IcGeneratorSpec:
        ic = dict(self.ic)
        if "amplitude_range" in ic:
            ic["amplitude_range"] = tuple(ic["amplitude_range"])
        return IcGeneratorSpec(**ic)

    @property
    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver)

    @property
    def range_list(self) -> list[tuple[float, float]]:
        return [tuple(self.ranges[n]) for n in self.family_enum.coefficient_names]

    def validate(self) -> None:
        try:
            fam = Family(self.family)
        except ValueError:
            raise ConfigError("family", f"unknown family {self.family!r}") from None
        for name in ("n_points", "n_frames", "pool_size", "test_size", "n_initial", "batch_size"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        if not isinstance(self.rounds, int) or self.rounds < 0:
            raise ConfigError("rounds", f"must be a nonnegative integer, got {self.rounds!r}")
        if self.n_frames < 3:
            raise ConfigError("n_frames", "must be >= 3")
        for name in ("length", "dt_frame", "beta"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(name, f"must be positive, got {v!r}")
        if set(self.ranges) != set(fam.coefficient_names):
            raise ConfigError("ranges", f"{fam.value} needs ranges for {list(fam.coefficient_names)}")
        for name, r in self.ranges.items():
            if len(r) != 2 or not 0 < r[0] < r[1]:
                raise ConfigError(f"ranges.{name}", f"need 0 < lo < hi, got {r}")
        if self.n_initial + self.rounds * self.batch_size > self.pool_size:
            raise ConfigError("pool_size", "n_initial + rounds * batch_size exceeds the pool")
        if self.policy not in ("topk", "sbal", "random"):
            raise ConfigError("policy", f"unknown policy {self.policy!r}")
        if self.surrogate not in SURROGATES:
            raise ConfigError("surrogate", f"unknown surrogate {self.surrogate!r}")
        if not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds", "need a nonempty list of integers")
        if self.channel_weights is not None and len(self.channel_weights) != (1 if fam.dim == 1 else 3):
            raise ConfigError("channel_weights", "need one weight per residual equation")
        try:
            self.ic_spec
        except TypeError as exc:
            raise ConfigError("ic", str(exc)) from None
        try:
            self.solver_config
        except (TypeError, ValueError) as exc:
            raise ConfigError("solver", str(exc)) from None


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    n_train: int
    rmse: float
    wall_seconds: float
    selected: tuple[int, ...] = ()


@dataclass
class ExperimentState:
    seed: int
    round: int
    training: list[LabeledSample]
    pool: list[Candidate]
    test: list[LabeledSample]
    metrics: list[RoundMetrics] = field(default_factory=list)
    failed: list[int] = field(default_factory=list)
    model: object = field(default=None, repr=False, compare=False)

    def check(self) -> None:
        train = {s.id for s in self.training}
        pool = {c.id for c in self.pool}
        test = {s.id for s in self.test}
        if train & pool or test & (train | pool):
            raise AssertionError("training, pool and test sets overlap")


def make_candidate(config: ExperimentConfig, seed: int, cid: int) -> Candidate:
    rng = _stream(seed, _POOL, cid)
    fam = config.family_enum
    coeffs = [rng.uniform(lo, hi) for lo, hi in config.range_list]
    pde = PdeParameters(fam, coeffs)
    lam = config.ic_spec.sample(rng, fam.dim)
    return Candidate(cid, pde, lam, generate_ic(config.ic_spec, lam, config.grid, fam))


def _try_simulate(candidate: Candidate, grid: Grid, solver: SolverConfig, weights):
    try:
        return simulate(candidate, grid, solver, weights)
    except (SolverError, FloatingPointError) as exc:
        log.warning("candidate %d: simulation failed (%s); dropped", candidate.id, exc)
        return None


def simulate_many(candidates, config: ExperimentConfig, workers: int = 1) -> list[LabeledSample | None]:
    fn = functools.partial(_try_simulate, grid=config.grid, solver=config.solver_config,
                           weights=config.channel_weights)
    return pmap(fn, candidates, workers)


def build_pool(config: ExperimentConfig, seed: int, workers: int = 1) -> tuple[list[Candidate], list[LabeledSample]]:
    """Unlabeled pool of ``pool_size`` candidates plus a simulated test set of ``test_size``."""
    P, M = config.pool_size, config.test_size
    pool = [make_candidate(config, seed, i) for i in range(P)]
    test: list[LabeledSample] = []
    next_id = P
    while len(test) < M:
        if next_id - P >= M + config.test_retries:
            raise SolverError(f"could not simulate {M} test trajectories within {config.test_retries} retries")
        batch = [make_candidate(config, seed, i) for i in range(next_id, next_id + M - len(test))]
        next_id += len(batch)
        test.extend(s for s in simulate_many(batch, config, workers) if s is not None)
    return pool, test


def evaluate_rmse(model, test: list[LabeledSample], workers: int = 1, cap: float = RMSE_CAP) -> float:
    """Root mean squared rollout error over test samples, frames 1.., channels and points."""
    if not test:
        raise ValueError("test set is empty")
    errs = pmap(functools.partial(_sample_sq_error, model=model, cap=cap), test, workers)
    total = sum(e[0] for e in errs)
    count = sum(e[1] for e in errs)
    return float(math.sqrt(total / count))


def _sample_sq_error(sample: LabeledSample, model, cap: float) -> tuple[float, int]:
    truth = sample.truth.values
    pred, blown = rollout_values(model, sample.candidate.ic_field.values, sample.candidate.pde,
                                 truth.shape[0], clamp=cap)
    if blown is not None:
        log.warning("test sample %d: rollout blew up at step %d; frames clamped to %.0e",
                    sample.id, blown, cap)
    d = pred[1:] - truth[1:]
    return float(np.sum(d * d)), d.size


def _fit(config: ExperimentConfig, state: ExperimentState):
    if state.model is None:
        seed = _derived_seed(state.seed, _FIT, state.round)
        state.model = fit_surrogate(config.surrogate, state.training, config.surrogate_params, seed=seed)
    return state.model


def initial_state(config: ExperimentConfig, seed: int, workers: int | None = None) -> ExperimentState:
    """Build pool and test set, label ``n_initial`` random pool members, record round-0 RMSE."""
    workers = resolve_workers(workers or config.workers)
    t0 = time.perf_counter()
    pool, test = build_pool(config, seed, workers)
    chosen = set(select_random([c.id for c in pool], config.n_initial, _derived_seed(seed, _INITIAL, 0)))
    picked = [c for c in pool if c.id in chosen]
    labeled = simulate_many(picked, config, workers)
    failed = [c.id for c, s in zip(picked, labeled) if s is None]
    state = ExperimentState(
        seed=seed, round=0,
        training=[s for s in labeled if s is not None],
        pool=[c for c in pool if c.id not in chosen],
        test=test, failed=failed,
    )
    rmse = evaluate_rmse(_fit(config, state), test, workers)
    state.metrics.append(RoundMetrics(0, len(state.training), rmse, time.perf_counter() - t0, tuple(sorted(chosen))))
    return state


def run_round(state: ExperimentState, config: ExperimentConfig, out_dir: Path | None = None,
              workers: int | None = None) -> ExperimentState:
    """One acquisition round; returns a new state and leaves ``state`` untouched."""
    workers = resolve_workers(workers or config.workers)
    k = config.batch_size
    if len(state.pool) < k:
        raise ValueError(f"pool exhausted: {len(state.pool)} candidates left, need {k}")
    t0 = time.perf_counter()
    r = state.round + 1
    select_seed = _derived_seed(state.seed, _SELECT, r)
    grid = config.grid

    if config.policy == "random":
        selected = select_random([c.id for c in state.pool], k, select_seed)
    else:
        model = _fit(config, state)
        raw = score_pool(model, state.pool, grid, config.channel_weights, workers)
        if config.normalize:
            scored = normalize(raw, state.training, state.pool, config.range_list)
        else:
            scored = normalize(raw, [], state.pool, config.range_list)
        if config.policy == "topk":
            selected = select_topk(scored, k)
        else:
            selected = select_sbal(scored, k, config.beta, select_seed)
        if out_dir is not None:
            write_score_dump(Path(out_dir) / f"scores_seed{state.seed}.csv", r, scored, state.pool,
                             selected, config.family_enum.coefficient_names)

    chosen = set(selected)
    picked = [c for c in state.pool if c.id in chosen]
    labeled = simulate_many(picked, config, workers)
    new = ExperimentState(
        seed=state.seed, round=r,
        training=state.training + [s for s in labeled if s is not None],
        pool=[c for c in state.pool if c.id not in chosen],
        test=state.test,
        metrics=list(state.metrics),
        failed=state.failed + [c.id for c, s in zip(picked, labeled) if s is None],
    )
    rmse = evaluate_rmse(_fit(config, new), new.test, workers)
    new.metrics.append(RoundMetrics(r, len(new.training), rmse, time.perf_counter() - t0, tuple(selected)))
    return new


# Checkpoints ------------------------------------------------------------------

def _pack_candidates(prefix: str, cands: list[Candidate], arrays: dict):
    arrays[f"{prefix}_ids"] = np.array([c.id for c in cands], dtype=np.int64)
    arrays[f"{prefix}_coef"] = np.array([c.pde.coefficients for c in cands], dtype=np.float64)
    arrays[f"{prefix}_gamma"] = np.array([c.pde.gamma for c in cands], dtype=np.float64)
    arrays[f"{prefix}_latent"] = np.array([c.ic.latent for c in cands], dtype=np.float64)
    arrays[f"{prefix}_ic"] = np.array([c.ic_field.values for c in cands], dtype=np.float64)


def _unpack_candidates(prefix: str, data, family: Family, grid: Grid) -> list[Candidate]:
    out = []
    for i, cid in enumerate(data[f"{prefix}_ids"]):
        pde = PdeParameters(family, tuple(data[f"{prefix}_coef"][i]), float(data[f"{prefix}_gamma"][i]))
        out.append(Candidate(int(cid), pde, IcParameters(data[f"{prefix}_latent"][i]),
                             Field(grid, data[f"{prefix}_ic"][i])))
    return out


def save_state(path, state: ExperimentState, config: ExperimentConfig) -> None:
    arrays: dict[str, np.ndarray] = {}
    _pack_candidates("pool", state.pool, arrays)
    for name, samples in (("train", state.training), ("test", state.test)):
        _pack_candidates(name, [s.candidate for s in samples], arrays)
        arrays[f"{name}_truth"] = np.array([s.truth.values for s in samples], dtype=np.float64)
        arrays[f"{name}_score"] = np.array([s.truth_score for s in samples], dtype=np.float64)
    meta = {
        "seed": state.seed, "round": state.round, "failed": state.failed,
        "metrics": [dataclasses.asdict(m) for m in state.metrics],
        "config": config.to_dict(),
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_state(path) -> tuple[ExperimentState, ExperimentConfig]:
    with np.load(path) as data:
        meta = json.loads(data["meta"].tobytes().decode())
        config = ExperimentConfig.from_dict(meta["config"])
        fam, grid = config.family_enum, config.grid
        pool = _unpack_candidates("pool", data, fam, grid)
        groups = {}
        for name in ("train", "test"):
            cands = _unpack_candidates(name, data, fam, grid)
            groups[name] = [LabeledSample(c, Trajectory(grid, data[f"{name}_truth"][i]),
                                          float(data[f"{name}_score"][i])) for i, c in enumerate(cands)]
    metrics = [RoundMetrics(m["round"], m["n_train"], m["rmse"], m["wall_seconds"], tuple(m["selected"]))
               for m in meta["metrics"]]
    state = ExperimentState(meta["seed"], meta["round"], groups["train"], pool, groups["test"],
                            metrics, list(meta["failed"]))
    return state, config


# Experiment driver ------------------------------------------------------------

METRICS_COLUMNS = ["seed", "round", "n_train", "rmse", "policy", "wall_seconds"]


@dataclass
class ExperimentResult:
    rows: list[dict]
    states: dict[int, ExperimentState]
    errors: dict[int, str]

    def curve(self, seed: int) -> list[float]:
        return [r["rmse"] for r in self.rows if r["seed"] == seed]

    def summary(self) -> list[dict]:
        return learning_curve(self.rows)


def confidence_interval(values) -> tuple[float, float, float]:
    """Mean and normal-approximation 95% interval ``mean +- 1.96 * stderr``."""
    v = np.asarray(values, dtype=np.float64)
    # shifting by the first value keeps zero-spread inputs exact
    d = v - v[0]
    mean = float(v[0] + d.mean())
    if v.size < 2:
        return mean, mean, mean
    half = 1.96 * float(d.std(ddof=1)) / math.sqrt(v.size)
    return mean, mean - half, mean + half


def learning_curve(rows) -> list[dict]:
    """Mean and 95% interval of RMSE per (policy, n_train)."""
    groups: dict[tuple[str, int], list[float]] = {}
    for r in rows:
        groups.setdefault((r["policy"], int(r["n_train"])), []).append(float(r["rmse"]))
    out = []
    for (policy, n), vals in sorted(groups.items()):
        mean, lo, hi = confidence_interval(vals)
        out.append({"policy": policy, "n_train": n, "mean_rmse": mean, "ci95_lo": lo, "ci95_hi": hi})
    return out


def _metric_rows(state: ExperimentState, policy: str) -> list[dict]:
    return [{"seed": state.seed, "round": m.round, "n_train": m.n_train, "rmse": m.rmse,
             "policy": policy, "wall_seconds": m.wall_seconds} for m in state.metrics]


def run_seed(config: ExperimentConfig, seed: int, out_dir: Path | None = None,
             workers: int | None = None) -> ExperimentState:
    state = None
    if out_dir is not None:
        state = _latest_checkpoint(Path(out_dir), seed)
    if state is None:
        state = initial_state(config, seed, workers)
        if out_dir is not None:
            save_state(Path(out_dir) / f"checkpoint_seed{seed}_round0.npz", state, config)
    while state.round < config.rounds:
        state = run_round(state, config, out_dir, workers)
        if out_dir is not None:
            save_state(Path(out_dir) / f"checkpoint_seed{seed}_round{state.round}.npz", state, config)
        log.info("seed %d round %d: n_train=%d rmse=%.6g", seed, state.round,
                 state.metrics[-1].n_train, state.metrics[-1].rmse)
    return state


def _latest_checkpoint(out_dir: Path, seed: int) -> ExperimentState | None:
    paths = sorted(out_dir.glob(f"checkpoint_seed{seed}_round*.npz"),
                   key=lambda p: int(p.stem.rsplit("round", 1)[1]))
    if not paths:
        return None
    return load_state(paths[-1])[0]


def run_experiment(config: ExperimentConfig, out_dir=None, workers: int | None = None,
                   resume: bool = False) -> ExperimentResult:
    """Run every configured seed; a failing seed is logged and the rest continue.

    With ``out_dir`` the metrics CSV, score dumps and per-round checkpoints are
    written there. ``resume`` continues each seed from its latest checkpoint.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows, states, errors = [], {}, {}
    for seed in config.seeds:
        try:
            if out is not None and not resume:
                for p in out.glob(f"checkpoint_seed{seed}_round*.npz"):
                    p.unlink()
                (out / f"scores_seed{seed}.csv").unlink(missing_ok=True)
            state = run_seed(config, seed, out, workers)
        except Exception as exc:  # noqa: BLE001 - other seeds keep going
            log.error("seed %d failed: %s", seed, exc)
            errors[seed] = f"{type(exc).__name__}: {exc}"
            continue
        states[seed] = state
        rows.extend(_metric_rows(state, config.policy))
    if out is not None:
        write_metrics(out / "metrics.csv", rows)
        write_learning_curve(out / "learning_curve.csv", learning_curve(rows))
    return ExperimentResult(rows, states, errors)


def write_metrics(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({**r, "rmse": repr(float(r["rmse"])), "wall_seconds": f"{r['wall_seconds']:.3f}"})


def write_learning_curve(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["policy", "n_train", "mean_rmse", "ci95_lo", "ci95_hi"])
        w.writeheader()
        for r in curve:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
