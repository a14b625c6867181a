"""Fast self-checks behind ``preacq verify``."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .acquisition import select_sbal
from .core import Family, Field, Trajectory, make_grid
from .residual import CENTRAL_FIRST, CENTRAL_SECOND, Stencil, apply_interior, pre_burgers, score
from .solvers import IcGeneratorSpec, generate_ic, solve_burgers, solve_ns2d


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0


def check_stencil_exactness(first_taps=CENTRAL_FIRST, second_taps=CENTRAL_SECOND) -> tuple[bool, str]:
    h = 0.01
    x = np.arange(50) * h
    slope, curv = 1.7, -3.2
    d1 = apply_interior(0.4 + slope * x, Stencil.scaled(first_taps, h, 1))
    d2 = apply_interior(0.4 + 0.3 * x + 0.5 * curv * x * x, Stencil.scaled(second_taps, h, 2))
    e1 = float(np.abs(d1 - slope).max())
    e2 = float(np.abs(d2 - curv).max())
    sums = (sum(w for _, w in first_taps), sum(w for _, w in second_taps))
    ok = e1 < 1e-12 and e2 < 1e-10 and sums == (0.0, 0.0)
    return ok, f"slope err {e1:.1e}, curvature err {e2:.1e}, tap sums {sums}"


def naive_score(r: np.ndarray) -> float:
    """Triple loop over frames, channels and points."""
    frames, chans = r.shape[0], r.shape[1]
    flat = r.reshape(frames, chans, -1)
    total = 0.0
    for t in range(frames):
        for c in range(chans):
            for i in range(flat.shape[2]):
                total += abs(float(flat[t, c, i]))
    return total / flat.size


def check_score_oracle(n: int = 20, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        g = make_grid(1, int(rng.integers(8, 64)), 2 * np.pi, 0.1, int(rng.integers(3, 10)))
        traj = Trajectory(g, rng.normal(size=(g.n_frames, 1, g.n_points[0])))
        res = pre_burgers(traj, float(rng.uniform(0.1, 1.0)))
        worst = max(worst, abs(score(res) - naive_score(res.values)))
    return worst <= 1e-12, f"max |score - brute force| = {worst:.1e} over {n} trajectories"


def check_conservation() -> tuple[bool, str]:
    spec = IcGeneratorSpec()
    rng = np.random.default_rng(7)
    g = make_grid(1, 128, 2 * np.pi, 0.05, 21)
    ic = generate_ic(spec, spec.sample(rng, 1), g, Family.BURGERS1D)
    u = solve_burgers(Field(g, ic.values + 0.5), 0.2, g).values
    mass = u.sum(axis=(1, 2))
    e_b = float(np.abs(mass - mass[0]).max() / np.abs(mass[0]))

    g2 = make_grid(2, 16, 1.0, 0.02, 4)
    ic2 = generate_ic(spec, spec.sample(rng, 2), g2, Family.NS2D)
    rho = solve_ns2d(ic2, 0.05, 0.05, 5.0 / 3.0, g2).values[:, 0].sum(axis=(1, 2))
    e_ns = float(np.abs(rho - rho[0]).max() / rho[0])
    return e_b < 1e-10 and e_ns < 1e-10, f"Burgers mass drift {e_b:.1e}, NS mass drift {e_ns:.1e}"


def check_sbal_frequency(draws: int = 100_000) -> tuple[bool, str]:
    scored = [(0, 1.0), (1, 3.0)]
    hits = sum(select_sbal(scored, 1, 1.0, seed)[0] == 1 for seed in range(draws))
    freq = hits / draws
    return abs(freq - 0.75) <= 0.01, f"P(select score 3) = {freq:.4f} (exact 0.75)"


def check_pre_convergence() -> tuple[bool, str]:
    errs = []
    for n in (32, 64, 128):
        g = make_grid(1, n, 2 * np.pi, 2 * np.pi / n, 9)
        (x,) = g.coordinates()
        t = g.times()[:, None]
        traj = Trajectory(g, np.sin(x - t)[:, None])
        tc = t[1:-1]
        exact = -np.cos(x - tc) + np.sin(x - tc) * np.cos(x - tc) + 0.3 * np.sin(x - tc)
        errs.append(float(np.abs(pre_burgers(traj, 0.3).values[:, 0] - exact).max()))
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    ok = all(3.0 <= r <= 5.0 for r in ratios)
    return ok, "refinement ratios " + ", ".join(f"{r:.3f}" for r in ratios)


def run_checks(first_taps=CENTRAL_FIRST, second_taps=CENTRAL_SECOND, sbal_draws: int = 100_000) -> list[CheckResult]:
    checks = [
        ("stencil exactness", lambda: check_stencil_exactness(first_taps, second_taps)),
        ("score oracle", check_score_oracle),
        ("PRE convergence", check_pre_convergence),
        ("conservation", check_conservation),
        ("SBAL frequency", lambda: check_sbal_frequency(sbal_draws)),
    ]
    out = []
    for name, fn in checks:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - report, don't crash the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out


def perturbed_taps(eps: float):
    (o0, w0), rest = CENTRAL_FIRST[0], CENTRAL_FIRST[1:]
    return ((o0, w0 + eps),) + rest


__all__ = ["CheckResult", "naive_score", "perturbed_taps", "run_checks"]
