import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from preacq.core import Candidate, Family, Field, IcParameters, PdeParameters, make_grid
from preacq.solvers import (
    IcGeneratorSpec,
    SolverConfig,
    SolverError,
    generate_ic,
    simulate,
    solve_burgers,
    solve_ns2d,
)

SPEC = IcGeneratorSpec()
GAMMA = 5.0 / 3.0


def direct_dft(u):
    n = u.size
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n) @ u


def test_zero_latent_gives_zero_ic():
    g = make_grid(1, 64, 2 * math.pi, 0.05, 3)
    f = generate_ic(SPEC, np.zeros(8), g, Family.BURGERS1D)
    assert np.all(f.values == 0.0)


def test_first_mode_is_sine():
    g = make_grid(1, 256, 2 * math.pi, 0.05, 3)
    lam = np.zeros(8)
    lam[0] = 1.0
    f = generate_ic(SPEC, lam, g, Family.BURGERS1D)
    (x,) = g.coordinates()
    assert np.abs(f.values[0] - np.sin(x)).max() < 1e-12
    assert abs(np.abs(f.values).max() - 1.0) < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_ic_spectrum_band_limited(seed):
    g = make_grid(1, 64, 2 * math.pi, 0.05, 3)
    u = generate_ic(SPEC, SPEC.sample(np.random.default_rng(seed), 1), g, Family.BURGERS1D).values[0]
    spectrum = np.abs(direct_dft(u))
    k = np.minimum(np.arange(64), 64 - np.arange(64))
    assert spectrum[k > SPEC.n_modes].max() < 1e-12 * spectrum.max()
    assert spectrum[(k >= 1) & (k <= SPEC.n_modes)].min() > 0


def test_latent_dimension_checked():
    g = make_grid(1, 16, 1.0, 0.1, 3)
    with pytest.raises(ValueError, match="latent"):
        generate_ic(SPEC, np.zeros(7), g, Family.BURGERS1D)
    assert SPEC.latent_dim(2) == 16


def test_ns_ic_layout_and_positivity():
    g = make_grid(2, 32, 1.0, 0.05, 3)
    rng = np.random.default_rng(0)
    for _ in range(10):
        f = generate_ic(IcGeneratorSpec(perturbation=0.5), SPEC.sample(rng, 2), g, Family.NS2D)
        assert f.channels == 4
        assert f.values[0].min() > 0.1 and f.values[3].min() > 0.1


def test_constant_ic_is_fixed_point():
    g = make_grid(1, 64, 2 * math.pi, 0.05, 11)
    traj = solve_burgers(Field(g, np.full(64, 0.7)), 0.3, g)
    assert np.abs(traj.values - 0.7).max() < 1e-12


def _decay_amplitudes(k, nu, eps=1e-3):
    g = make_grid(1, 256, 2 * math.pi, 0.05, 41)
    (x,) = g.coordinates()
    traj = solve_burgers(Field(g, eps * np.sin(k * x)), nu, g)
    amp = 2.0 * np.abs(np.fft.rfft(traj.values[:, 0], axis=-1)[:, k]) / 256
    return g, amp / eps


def test_linear_regime_decay_matches_heat_equation():
    g, amp = _decay_amplitudes(1, 0.5)
    assert np.abs(amp / np.exp(-0.5 * g.times()) - 1.0).max() < 1e-3


@pytest.mark.parametrize("k", [2, 3])
def test_linear_regime_decay_matches_discrete_dispersion(k):
    g, amp = _decay_amplitudes(k, 0.5)
    dx = g.spacing[0]
    rate = 0.5 * 4.0 / dx**2 * math.sin(k * dx / 2) ** 2
    assert np.abs(amp / np.exp(-rate * g.times()) - 1.0).max() < 1e-4


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 1.0), st.floats(-1.0, 1.0))
def test_burgers_conservation_and_dissipation(seed, nu, offset):
    g = make_grid(1, 128, 2 * math.pi, 0.05, 21)
    ic = generate_ic(SPEC, SPEC.sample(np.random.default_rng(seed), 1), g, Family.BURGERS1D)
    u = solve_burgers(Field(g, ic.values + offset), nu, g).values[:, 0]
    dx = g.spacing[0]
    mass = u.sum(axis=1) * dx
    scale = np.abs(u[0]).sum() * dx
    assert np.abs(mass - mass[0]).max() <= 1e-10 * scale
    energy = (u * u).sum(axis=1) * dx
    assert np.all(np.diff(energy) <= 1e-10 * energy[0])


def test_burgers_self_convergence_second_order():
    lam = SPEC.sample(np.random.default_rng(5), 1)
    finals = []
    for n in (32, 64, 128):
        g = make_grid(1, n, 2 * math.pi, 0.05, 11)
        ic = generate_ic(IcGeneratorSpec(amplitude_range=(-0.5, 0.5)), lam, g, Family.BURGERS1D)
        finals.append(solve_burgers(ic, 0.5, g).values[-1, 0])
    e1 = np.abs(finals[0] - finals[1][::2]).max()
    e2 = np.abs(finals[1] - finals[2][::2]).max()
    assert 3.0 <= e1 / e2 <= 5.0


def test_burgers_deterministic():
    g = make_grid(1, 64, 2 * math.pi, 0.05, 11)
    ic = generate_ic(SPEC, SPEC.sample(np.random.default_rng(1), 1), g, Family.BURGERS1D)
    a = solve_burgers(ic, 0.2, g).values
    b = solve_burgers(ic, 0.2, g).values
    assert a.tobytes() == b.tobytes()


def test_burgers_errors():
    g = make_grid(1, 16, 2 * math.pi, 0.05, 5)
    with pytest.raises(FloatingPointError):
        solve_burgers(Field(g, np.full(16, np.nan)), 0.2, g)
    with pytest.raises(ValueError):
        solve_burgers(Field(g, np.zeros(16)), 0.0, g)
    with pytest.raises(SolverError, match="cap"):
        solve_burgers(Field(g, np.sin(np.arange(16.0))), 0.2, g, SolverConfig(max_steps=2))


def _uniform_ns(n=16):
    g = make_grid(2, n, 1.0, 0.02, 4)
    vals = np.empty((4, n, n))
    vals[0], vals[1], vals[2], vals[3] = 1.1, 0.2, -0.3, 0.8
    return g, Field(g, vals)


def test_ns_uniform_state_preserved():
    g, ic = _uniform_ns()
    traj = solve_ns2d(ic, 0.05, 0.05, GAMMA, g)
    assert np.abs(traj.values - ic.values[None]).max() < 1e-10


def test_ns_mass_conserved():
    g = make_grid(2, 24, 1.0, 0.02, 5)
    ic = generate_ic(SPEC, SPEC.sample(np.random.default_rng(2), 2), g, Family.NS2D)
    rho = solve_ns2d(ic, 0.03, 0.08, GAMMA, g).values[:, 0]
    mass = rho.sum(axis=(1, 2)) * np.prod(g.spacing)
    assert np.abs(mass / mass[0] - 1.0).max() < 1e-10


def test_ns_monotone_refinement():
    lam = SPEC.sample(np.random.default_rng(4), 2)
    runs = {}
    for n in (64, 128, 256):
        g = make_grid(2, n, 1.0, 0.01, 3)
        runs[n] = solve_ns2d(generate_ic(SPEC, lam, g, Family.NS2D), 1e-3, 1e-3, GAMMA, g).values[-1]
    ref = runs[256][:, ::4, ::4]
    err64 = np.abs(runs[64] - ref).max()
    err128 = np.abs(runs[128][:, ::2, ::2] - ref).max()
    assert err128 < err64


def test_ns_rejects_nonpositive_ic():
    g, ic = _uniform_ns(8)
    bad = ic.values.copy()
    bad[0, 0, 0] = -1.0
    with pytest.raises(ValueError):
        solve_ns2d(Field(g, bad), 0.05, 0.05, GAMMA, g)


def test_simulate_zero_burgers_candidate():
    g = make_grid(1, 32, 2 * math.pi, 0.05, 6)
    lam = IcParameters(np.zeros(8))
    cand = Candidate(3, PdeParameters.burgers(0.4), lam, generate_ic(SPEC, lam, g, Family.BURGERS1D))
    s = simulate(cand, g)
    assert np.all(s.truth.values == 0.0)
    assert s.truth_score == 0.0


def test_simulate_uniform_ns_candidate():
    g, ic = _uniform_ns(8)
    cand = Candidate(0, PdeParameters.ns2d(0.05, 0.05), IcParameters(np.zeros(16)), ic)
    assert simulate(cand, g).truth_score < 1e-8


def test_simulate_frame0_bitwise():
    g = make_grid(1, 32, 2 * math.pi, 0.05, 6)
    rng = np.random.default_rng(9)
    lam = SPEC.sample(rng, 1)
    cand = Candidate(0, PdeParameters.burgers(0.3), lam, generate_ic(SPEC, lam, g, Family.BURGERS1D))
    s = simulate(cand, g)
    assert s.truth.values[0].tobytes() == cand.ic_field.values.tobytes()
    assert s.truth_score > 0
