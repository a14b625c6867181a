import math

import numpy as np
import pytest

from preacq.core import Candidate, Family, LabeledSample, PdeParameters, Trajectory, make_grid
from preacq.loop import ExperimentConfig
from preacq.residual import trajectory_score
from preacq.solvers import IcGeneratorSpec, generate_ic, simulate

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    def _report(number: int, ok: bool, detail: str):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        print(ACCEPTANCE_LINES[-1])
        return ok

    return _report


@pytest.fixture
def burgers_grid():
    return make_grid(1, 64, 2 * math.pi, 0.05, 11)


def burgers_candidate(cid, nu, grid, rng, spec=IcGeneratorSpec()):
    lam = spec.sample(rng, 1)
    return Candidate(cid, PdeParameters.burgers(nu), lam, generate_ic(spec, lam, grid, Family.BURGERS1D))


def burgers_samples(n, grid, seed=0, nu_range=(0.1, 1.0), spec=IcGeneratorSpec()):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        nu = float(rng.uniform(*nu_range))
        out.append(simulate(burgers_candidate(i, nu, grid, rng, spec), grid))
    return out


def frozen_sample(cid, candidate, grid):
    values = np.repeat(candidate.ic_field.values[None], grid.n_frames, axis=0)
    traj = Trajectory(grid, values)
    return LabeledSample(candidate, traj, trajectory_score(traj, candidate.pde))


@pytest.fixture
def small_config():
    cfg = ExperimentConfig.defaults("burgers1d")
    cfg.n_points = 64
    cfg.n_frames = 11
    cfg.pool_size = 16
    cfg.test_size = 4
    cfg.n_initial = 4
    cfg.batch_size = 4
    cfg.rounds = 2
    cfg.seeds = [0]
    return cfg
