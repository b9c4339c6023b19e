"""Closed-loop rollouts under optimal play and the least-restrictive safety filter."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from . import gridsolver as G
from . import systems as S
from . import valuenet as vn


class ValueSource(Protocol):
    horizon: float

    def value(self, x: np.ndarray, t: float) -> np.ndarray: ...

    def gradient(self, x: np.ndarray, t: float) -> np.ndarray: ...


def _query_time(t: float, horizon: float) -> float:
    # past the horizon the t = 0 field is held
    if t > horizon + 1e-12:
        return 0.0
    return min(max(t, 0.0), horizon)


class GridValueSource:
    """Grid snapshots, linearly interpolated in time between stamps."""

    def __init__(self, grids: Sequence[G.ValueGrid], horizon: Optional[float] = None):
        if not grids:
            raise ValueError("need at least one grid snapshot")
        self.grids = G.stack_in_time(grids)
        self.times = np.array([g.t for g in self.grids])
        self.horizon = float(horizon if horizon is not None else self.times[-1])
        self.system = self.grids[0].system
        self._node_grads = [G.node_gradients(g) for g in self.grids]

    def _bracket(self, t: float):
        t = _query_time(t, self.horizon)
        if t <= self.times[0]:
            return 0, 0, 0.0
        if t >= self.times[-1]:
            j = len(self.times) - 1
            return j, j, 0.0
        j = int(np.searchsorted(self.times, t, side="right"))
        i = j - 1
        w = (t - self.times[i]) / (self.times[j] - self.times[i])
        return i, j, w

    def value(self, x, t):
        i, j, w = self._bracket(t)
        v = G.interpolate(self.grids[i], x)
        if w == 0.0:
            return v
        return (1 - w) * v + w * G.interpolate(self.grids[j], x)

    def gradient(self, x, t):
        i, j, w = self._bracket(t)
        g = G.grid_gradient(self.grids[i], x, self._node_grads[i])
        if w == 0.0:
            return g
        return (1 - w) * g + w * G.grid_gradient(self.grids[j], x, self._node_grads[j])


class NetworkValueSource:
    def __init__(self, params: vn.NetworkParams, nmap: vn.NormalizationMap, system: Optional[str] = None):
        self.params, self.nmap, self.system = params, nmap, system
        self.horizon = nmap.horizon

    def value(self, x, t):
        single = np.ndim(x) == 1
        v = vn.value(self.params, self.nmap, np.atleast_2d(x), _query_time(t, self.horizon))
        return v[0] if single else v

    def gradient(self, x, t):
        single = np.ndim(x) == 1
        _, _, g = vn.physical_gradients(self.params, self.nmap, np.atleast_2d(x), _query_time(t, self.horizon))
        return g[0] if single else g


class ZeroValueSource:
    """V = 0 everywhere; handy for systems where only the dynamics matter."""

    def __init__(self, state_dim: int, horizon: float):
        self.n, self.horizon = state_dim, horizon

    def value(self, x, t):
        return np.zeros(np.atleast_2d(x).shape[0]) if np.ndim(x) == 2 else 0.0

    def gradient(self, x, t):
        return np.zeros_like(np.asarray(x, dtype=float))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray  # one row per step (len(times) - 1)
    disturbances: np.ndarray
    values: np.ndarray
    overridden: np.ndarray
    separation: Optional[np.ndarray]
    payoff: float
    truncated: bool = False

    def __post_init__(self):
        n = len(self.times)
        if len(self.states) != n or len(self.values) != n:
            raise ValueError("state/value rows must match time stamps")
        if len(self.controls) != n - 1 or len(self.disturbances) != n - 1 or len(self.overridden) != n - 1:
            raise ValueError("input rows must equal number of steps")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("time stamps must be strictly increasing")


@dataclass
class FilterPolicy:
    """Nominal control plus activation margin.

    ``nominal(t, x)`` returns a control inside the control box.
    """

    nominal: Callable[[float, np.ndarray], np.ndarray]
    margin: float = 0.0

    def __post_init__(self):
        if not self.margin >= 0 and not math.isinf(self.margin):
            raise ValueError("margin must be >= 0 (or +-inf for the degenerate filters)")

    @classmethod
    def constant(cls, u, margin: float = 0.0) -> "FilterPolicy":
        u = np.asarray(u, dtype=float)
        return cls(lambda t, x: u, margin)

    @classmethod
    def table(cls, times, controls, margin: float = 0.0) -> "FilterPolicy":
        """Zero-order hold over a (times, controls) table."""
        times = np.asarray(times, dtype=float)
        controls = np.atleast_2d(np.asarray(controls, dtype=float))
        if len(times) != len(controls) or np.any(np.diff(times) <= 0):
            raise ValueError("control table needs strictly increasing times, one row each")

        def nominal(t, x):
            i = int(np.searchsorted(times, t + 1e-12, side="right")) - 1
            return controls[max(i, 0)]

        return cls(nominal, margin)


def rk4_step(spec: S.SystemSpec, x: np.ndarray, u: np.ndarray, d: np.ndarray, dt: float) -> np.ndarray:
    """Classic RK4 with inputs held over the step."""
    X = x[None, :]
    U, D = u[None, :], d[None, :]

    def f(z):
        return S._flow_unchecked(spec, S.wrap_state(spec, z), U, D)

    k1 = f(X)
    k2 = f(X + 0.5 * dt * k1)
    k3 = f(X + 0.5 * dt * k2)
    k4 = f(X + dt * k3)
    return (X + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))[0]


def _check_in_box(u, bounds, what):
    S._check_bounds(np.atleast_2d(u), bounds, what)


def _simulate(spec: S.SystemSpec, source: ValueSource, x0, t0: float, dt: float,
              choose: Callable, t_end: Optional[float] = None) -> Trajectory:
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = S.wrap_state(spec, np.asarray(x0, dtype=float))
    if not S.in_domain(spec, x):
        raise S.ContractError(f"initial state {x.tolist()} outside the domain")
    t_end = spec.horizon if t_end is None else t_end
    n_steps = max(0, int(round((t_end - t0) / dt)))
    times, states, values = [t0], [x], [float(source.value(x, t0))]
    controls, dists, flags = [], [], []
    truncated = False
    for k in range(n_steps):
        t = t0 + k * dt
        u, d, overridden = choose(x, t, values[-1])
        _check_in_box(u, spec.control_bounds, "control")
        _check_in_box(d, spec.disturbance_bounds, "disturbance")
        x_next = S.wrap_state(spec, rk4_step(spec, x, u, d, dt))
        if not S.in_domain(spec, x_next):
            truncated = True
            break
        controls.append(u)
        dists.append(d)
        flags.append(overridden)
        x = x_next
        t_next = t0 + (k + 1) * dt
        times.append(t_next)
        states.append(x)
        values.append(float(source.value(x, t_next)))
    states_arr = np.array(states)
    sep = spec.separation(states_arr) if spec.separation is not None else None
    return Trajectory(
        times=np.array(times), states=states_arr,
        controls=np.array(controls).reshape(len(controls), spec.control_dim),
        disturbances=np.array(dists).reshape(len(dists), spec.disturbance_dim),
        values=np.array(values), overridden=np.array(flags, dtype=bool),
        separation=sep, payoff=float(np.min(S.target_l(spec, states_arr))), truncated=truncated,
    )


def simulate_optimal(spec: S.SystemSpec, source: ValueSource, x0, t0: float = 0.0, dt: float = 0.01,
                     t_end: Optional[float] = None) -> Trajectory:
    """Both players apply the Hamiltonian optimizers of the source's gradient."""

    def choose(x, t, v):
        u, d = S.optimal_inputs(spec, x, source.gradient(x, t))
        return u, d, True

    return _simulate(spec, source, x0, t0, dt, choose, t_end)


def filter_active(spec: S.SystemSpec, value: float, margin: float) -> bool:
    """Whether the safety control must override the nominal one.

    Avoid problems keep V > 0, so the filter engages once V <= margin.  Reach
    problems keep V <= 0 and engage once V >= -margin.
    """
    if spec.orientation is S.Orientation.AVOID:
        return value <= margin
    return value >= -margin


def simulate_filtered(spec: S.SystemSpec, source: ValueSource, policy: FilterPolicy, x0, t0: float = 0.0,
                      dt: float = 0.01, t_end: Optional[float] = None) -> Trajectory:
    """Nominal control unless the filter is active; the disturbance plays worst case throughout."""

    def choose(x, t, v):
        u_opt, d_opt = S.optimal_inputs(spec, x, source.gradient(x, t))
        if filter_active(spec, v, policy.margin):
            return u_opt, d_opt, True
        return np.asarray(policy.nominal(t, x), dtype=float), d_opt, False

    return _simulate(spec, source, x0, t0, dt, choose, t_end)


def payoff(traj: Trajectory, spec: S.SystemSpec) -> float:
    """Minimum of the target function over the stored states."""
    if len(traj.states) == 0:
        raise ValueError("empty trajectory")
    return float(np.min(S.target_l(spec, traj.states)))


def write_trajectory_csv(path, traj: Trajectory, spec: S.SystemSpec) -> None:
    """Columns: t, x0.., u0.., d0.., value, overridden, min_separation.

    Inputs on row k are the ones applied over [t_k, t_k+1]; the last row has
    none and leaves those cells empty.
    """
    n, m, k = spec.state_dim, spec.control_dim, spec.disturbance_dim
    header = (["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)] + [f"d{i}" for i in range(k)]
              + ["value", "overridden", "min_separation"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, t in enumerate(traj.times):
            last = i == len(traj.times) - 1
            row = [repr(float(t))] + [repr(float(v)) for v in traj.states[i]]
            row += [""] * m if last else [repr(float(v)) for v in traj.controls[i]]
            row += [""] * k if last else [repr(float(v)) for v in traj.disturbances[i]]
            row += [repr(float(traj.values[i])), "" if last else str(int(traj.overridden[i]))]
            row += [repr(float(traj.separation[i])) if traj.separation is not None else ""]
            w.writerow(row)
