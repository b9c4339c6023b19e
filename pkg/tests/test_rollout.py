import csv
import dataclasses

import numpy as np
import pytest

from hjreach import gridsolver as G
from hjreach import rollout as R
from hjreach import systems as S


def zero_dynamics():
    spec = S.single_integrator("control")
    return dataclasses.replace(spec, name="zero", control_matrix=lambda x: np.zeros((len(x), 1, 1)))


class LinearSource:
    """V = a.x, gradient a; enough to drive optimal_inputs deterministically."""

    def __init__(self, a, horizon=1.0):
        self.a, self.horizon = np.asarray(a, dtype=float), horizon

    def value(self, x, t):
        return np.atleast_2d(x) @ self.a if np.ndim(x) == 2 else float(np.asarray(x) @ self.a)

    def gradient(self, x, t):
        return np.broadcast_to(self.a, np.shape(x)).copy()


# ------------------------------------------------------------------ basics


def test_zero_dynamics_constant_trajectory():
    spec = zero_dynamics()
    traj = R.simulate_optimal(spec, LinearSource([1.0]), [0.4], dt=0.05, t_end=0.5)
    assert len(traj.times) == 11
    assert np.all(traj.states == 0.4)
    assert traj.payoff == pytest.approx(0.15)


def test_rk4_exact_on_integrator():
    spec = S.single_integrator("control", extent=5.0, horizon=2.0)
    x = np.array([0.1])
    for _ in range(100):
        x = R.rk4_step(spec, x, np.array([0.7]), np.zeros(0), 0.01)
    assert x[0] == pytest.approx(0.1 + 0.7, abs=1e-12)


def test_trajectory_invariants():
    spec = S.single_integrator("control", extent=5.0)
    traj = R.simulate_optimal(spec, LinearSource([1.0]), [0.5], dt=0.01)
    assert np.all(np.diff(traj.times) > 0)
    assert len(traj.controls) == len(traj.times) - 1
    assert traj.payoff == R.payoff(traj, spec) == np.min(S.target_l(spec, traj.states))
    with pytest.raises(ValueError):
        R.Trajectory(np.array([0.0, 0.1]), np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((1, 0)),
                     np.zeros(2), np.zeros(1, bool), None, 0.0)


def test_payoff_examples():
    spec = S.single_integrator("control")
    const = R.Trajectory(np.array([0.0]), np.array([[0.5]]), np.zeros((0, 1)), np.zeros((0, 0)),
                         np.zeros(1), np.zeros(0, bool), None, 0.0)
    assert R.payoff(const, spec) == pytest.approx(0.25)
    crossing = R.Trajectory(np.array([0.0, 1.0, 2.0]), np.array([[0.5], [0.0], [-0.5]]), np.zeros((2, 1)),
                            np.zeros((2, 0)), np.zeros(3), np.zeros(2, bool), None, 0.0)
    assert R.payoff(crossing, spec) < 0


def test_out_of_domain_start_rejected_and_exit_truncates():
    spec = S.single_integrator("control")
    with pytest.raises(S.ContractError):
        R.simulate_optimal(spec, LinearSource([1.0]), [1.5])
    # gradient +1 pushes the controller to u = +1 until the box edge
    traj = R.simulate_optimal(spec, LinearSource([1.0]), [0.9], dt=0.01, t_end=0.5)
    assert traj.truncated and traj.states[-1, 0] <= 1.0 and len(traj.times) < 51


def test_time_query_clamps():
    assert R._query_time(-0.5, 1.0) == 0.0
    assert R._query_time(0.3, 1.0) == 0.3
    assert R._query_time(1.5, 1.0) == 0.0


def test_grid_source_time_interpolation():
    spec = S.single_integrator("control")
    base = G.grid_for(spec, 5)
    lo, hi = base.like(np.zeros(5), 0.0), base.like(np.ones(5), 1.0)
    src = R.GridValueSource([hi, lo])
    assert src.value([0.2], 0.25) == pytest.approx(0.25)
    assert src.value([0.2], 1.0) == 1.0


# ------------------------------------------------------------------ filter


def test_filter_margin_validation():
    with pytest.raises(ValueError):
        R.FilterPolicy.constant([0.0], margin=-0.1)
    R.FilterPolicy.constant([0.0], margin=np.inf)
    R.FilterPolicy.constant([0.0], margin=-np.inf)


def test_filter_orientation():
    avoid = S.air3d()
    reach = S.narrow_passage()
    assert R.filter_active(avoid, 0.0, 0.0) and not R.filter_active(avoid, 0.01, 0.0)
    assert R.filter_active(reach, 0.0, 0.0) and not R.filter_active(reach, -0.01, 0.0)
    assert R.filter_active(avoid, 1e9, np.inf) and not R.filter_active(avoid, -1e9, -np.inf)


def test_filter_always_on_equals_optimal(air3d_oracle):
    spec, _, src = air3d_oracle
    x0 = [0.4, 0.3, 1.0]
    a = R.simulate_optimal(spec, src, x0)
    b = R.simulate_filtered(spec, src, R.FilterPolicy.constant([1.0], margin=np.inf), x0)
    assert np.array_equal(a.states, b.states) and np.all(b.overridden)


def test_filter_nominal_equal_to_optimal_matches(air3d_oracle):
    spec, _, src = air3d_oracle
    x0 = [0.4, 0.3, 1.0]
    a = R.simulate_optimal(spec, src, x0)
    table = R.FilterPolicy.table(a.times[:-1], a.controls, margin=0.0)
    b = R.simulate_filtered(spec, src, table, x0)
    assert np.array_equal(a.states, b.states)


def test_filter_never_on_follows_nominal(air3d_oracle):
    spec, _, src = air3d_oracle
    x0 = [0.4, 0.3, 1.0]
    traj = R.simulate_filtered(spec, src, R.FilterPolicy.constant([1.5], margin=-np.inf), x0)
    assert not traj.overridden.any() and np.all(traj.controls == 1.5)
    # replay nominal + recorded disturbances by hand
    x = np.array(x0)
    for u, d in zip(traj.controls, traj.disturbances):
        x = S.wrap_state(spec, R.rk4_step(spec, x, u, d, 0.01))
    assert np.array_equal(x, traj.states[-1])


def test_input_outside_box_rejected():
    spec = S.single_integrator("control")
    with pytest.raises(S.InputBoundsError):
        R.simulate_filtered(spec, LinearSource([1.0]), R.FilterPolicy.constant([2.0], margin=-np.inf), [0.0])


# ------------------------------------------------------- Air3D game checks


def _starts(spec, src, pick, n, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        x = rng.uniform(spec.domain_lo, spec.domain_hi)
        if pick(src.value(x, 0.0)):
            out.append(x)
    return out


def test_safe_starts_evade(air3d_oracle):
    spec, _, src = air3d_oracle
    for x0 in _starts(spec, src, lambda v: v > 0.05 and v < 0.3, 5, 0):
        traj = R.simulate_optimal(spec, src, x0)
        assert np.min(traj.separation) >= spec.params.beta


def test_deep_unsafe_starts_collide(air3d_oracle):
    spec, _, src = air3d_oracle
    for x0 in _starts(spec, src, lambda v: v < -0.05, 5, 1):
        traj = R.simulate_optimal(spec, src, x0)
        assert np.min(traj.separation) < spec.params.beta


# ---------------------------------------------------------------- CSV


def test_trajectory_csv(tmp_path, air3d_oracle):
    spec, _, src = air3d_oracle
    traj = R.simulate_optimal(spec, src, [0.5, 0.2, 2.0], t_end=0.1)
    path = tmp_path / "t.csv"
    R.write_trajectory_csv(path, traj, spec)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x0", "x1", "x2", "u0", "d0", "value", "overridden", "min_separation"]
    assert len(rows) == len(traj.times) + 1
    assert rows[-1][4] == "" and rows[-1][5] == ""
    assert float(rows[1][-1]) == pytest.approx(np.hypot(0.5, 0.2))
