import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from preacq.core import (
    Candidate,
    Family,
    Field,
    IcParameters,
    LabeledSample,
    PdeParameters,
    Trajectory,
    field_stats,
    load_trajectory,
    make_grid,
    save_trajectory,
)


def test_make_grid_1d():
    g = make_grid(1, 256, 2 * math.pi, 0.05, 41)
    assert g.spacing == (2 * math.pi / 256,)
    assert g.t_final == pytest.approx(2.0, abs=1e-15)
    assert g.n_spatial == 256


def test_make_grid_2d():
    g = make_grid(2, 64, 1.0, 0.05, 21)
    assert g.spacing == (1 / 64, 1 / 64)
    assert g.t_final == pytest.approx(1.0, abs=1e-15)
    assert g.shape == (64, 64)


@pytest.mark.parametrize("args", [
    (1, 256, 2 * math.pi, 0.05, 2),
    (1, 0, 1.0, 0.05, 5),
    (1, 16, -1.0, 0.05, 5),
    (1, 16, 1.0, 0.0, 5),
    (3, 16, 1.0, 0.1, 5),
])
def test_make_grid_rejects(args):
    with pytest.raises(ValueError):
        make_grid(*args)


@given(st.integers(1, 4096), st.floats(1e-3, 1e3))
def test_grid_spacing_times_points(n, length):
    g = make_grid(1, n, length, 0.1, 3)
    assert abs(g.spacing[0] * n - length) < 1e-12 * length


def test_field_stats_examples():
    g = make_grid(1, 2, 1.0, 0.1, 3)
    assert field_stats(Field(g, np.zeros((1, 2)))) == (0.0, 0.0, 0.0, 0.0)
    assert field_stats(Field(g, np.array([[1.0, -1.0]]))) == (-1.0, 1.0, 0.0, 1.0)
    assert field_stats(Field(g, np.array([[3.0, 4.0]])))[3] == math.sqrt(12.5)


def test_field_stats_names_bad_index():
    g = make_grid(1, 4, 1.0, 0.1, 3)
    with pytest.raises(FloatingPointError, match=r"\(0, 2\)"):
        field_stats(Field(g, np.array([[0.0, 1.0, np.nan, np.inf]])))


def test_field_is_read_only():
    g = make_grid(1, 4, 1.0, 0.1, 3)
    f = Field(g, np.zeros(4))
    assert f.channels == 1
    with pytest.raises(ValueError):
        f.values[0] = 1.0


@settings(max_examples=25)
@given(st.sampled_from([1, 2]), st.integers(2, 9), st.integers(3, 6), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_trajectory_round_trip_bitwise(dim, n, frames, channels, seed):
    g = make_grid(dim, n, 1.7, 0.03, frames)
    rng = np.random.default_rng(seed)
    traj = Trajectory(g, rng.normal(size=(frames, channels) + g.shape) * 10.0 ** rng.integers(-300, 300))
    back = Trajectory.from_bytes(traj.to_bytes())
    assert back.grid == traj.grid
    assert back.values.tobytes() == traj.values.tobytes()


def test_trajectory_file_header(tmp_path):
    g = make_grid(2, (4, 3), (1.0, 2.0), 0.5, 3)
    traj = Trajectory(g, np.arange(3 * 2 * 12, dtype=float).reshape(3, 2, 4, 3))
    path = tmp_path / "t.preaq"
    save_trajectory(path, traj)
    raw = path.read_bytes()
    assert raw[:6] == b"PREAQ1"
    # magic + dim + 2 n_points + 2 lengths + dt + n_frames + channels, then data
    assert len(raw) == 6 + 8 * (1 + 2 + 2 + 3) + 8 * traj.values.size
    assert int.from_bytes(raw[6:14], "little") == 2
    assert load_trajectory(path).values.tobytes() == traj.values.tobytes()


def test_read_rejects_bad_magic():
    with pytest.raises(ValueError, match="magic"):
        Trajectory.from_bytes(b"NOPE00" + bytes(64))


def test_trajectory_frame_count_enforced():
    g = make_grid(1, 4, 1.0, 0.1, 5)
    with pytest.raises(ValueError):
        Trajectory(g, np.zeros((4, 1, 4)))


def test_pde_parameter_invariants():
    assert PdeParameters.burgers(0.3).vector.tolist() == [0.3]
    with pytest.raises(ValueError):
        PdeParameters.burgers(0.0)
    with pytest.raises(ValueError):
        PdeParameters.ns2d(0.01, -0.1)
    with pytest.raises(ValueError):
        PdeParameters.ns2d(0.01, 0.01, gamma=1.0)
    with pytest.raises(ValueError):
        PdeParameters(Family.NS2D, (0.1,))


def test_candidate_channel_check_and_frame0_contract():
    g = make_grid(1, 4, 1.0, 0.1, 3)
    ic = Field(g, np.ones(4))
    cand = Candidate(0, PdeParameters.burgers(0.5), IcParameters(np.zeros(8)), ic)
    with pytest.raises(ValueError):
        Candidate(1, PdeParameters.ns2d(0.1, 0.1), IcParameters(np.zeros(8)), ic)
    good = Trajectory(g, np.ones((3, 1, 4)))
    LabeledSample(cand, good, 0.0)
    with pytest.raises(ValueError, match="frame 0"):
        LabeledSample(cand, Trajectory(g, np.zeros((3, 1, 4))), 0.0)
    with pytest.raises(ValueError):
        LabeledSample(cand, good, -1.0)
