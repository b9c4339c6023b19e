"""Dynamical systems, target/obstacle functions and Hamiltonians.

Every benchmark is control- and disturbance-affine::

    f(x, u, d) = drift(x) + B(x) u + C(x) d

with box-bounded inputs, so the max-min of ``<p, f>`` separates per scalar
input and each optimizer sits on a bound endpoint.  All functions accept a
single state of shape ``(n,)`` or a batch of shape ``(B, n)``.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi


class ContractError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class InputBoundsError(ContractError):
    """Raised when a control or disturbance lies outside its box."""


class Orientation(enum.Enum):
    AVOID = "AvoidTarget"  # control maximizes, disturbance minimizes
    REACH = "ReachTarget"  # control minimizes, disturbance maximizes


@dataclass
class SystemSpec:
    name: str
    state_dim: int
    control_bounds: list[tuple[float, float]]
    disturbance_bounds: list[tuple[float, float]]
    domain: list[tuple[float, float]]
    periodic_dims: frozenset[int]
    orientation: Orientation
    horizon: float
    drift: Callable[[np.ndarray], np.ndarray]
    control_matrix: Callable[[np.ndarray], np.ndarray]
    disturbance_matrix: Callable[[np.ndarray], np.ndarray]
    target: Callable[[np.ndarray], np.ndarray]
    obstacle: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # closed-form Hamiltonian (x, p) -> H, for AvoidTarget orientation only
    closed_form_hamiltonian: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    params: object = None
    affine: bool = True
    # min pairwise distance between vehicles, for trajectory reports
    separation: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        self.periodic_dims = frozenset(self.periodic_dims)
        if self.state_dim < 1:
            raise ContractError("state_dim must be positive")
        if len(self.domain) != self.state_dim:
            raise ContractError(f"domain has {len(self.domain)} intervals for state_dim {self.state_dim}")
        for lo, hi in [*self.domain, *self.control_bounds, *self.disturbance_bounds]:
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ContractError(f"interval [{lo}, {hi}] is not compact")
        for i in self.periodic_dims:
            if not 0 <= i < self.state_dim:
                raise ContractError(f"periodic dim {i} outside 0..{self.state_dim - 1}")
            lo, hi = self.domain[i]
            if abs((hi - lo) - TWO_PI) > 1e-9:
                raise ContractError(f"periodic dim {i} must span 2*pi")
        if self.horizon <= 0:
            raise ContractError("horizon must be positive")

    @property
    def control_dim(self) -> int:
        return len(self.control_bounds)

    @property
    def disturbance_dim(self) -> int:
        return len(self.disturbance_bounds)

    @property
    def has_obstacle(self) -> bool:
        return self.obstacle is not None

    @property
    def domain_lo(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.domain], dtype=float)

    @property
    def domain_hi(self) -> np.ndarray:
        return np.array([hi for _, hi in self.domain], dtype=float)


# ---------------------------------------------------------------- parameters


@dataclass(frozen=True)
class Air3DParams:
    v_e: float = 0.75
    v_p: float = 0.75
    omega_bar: float = 3.0
    beta: float = 0.25
    horizon: float = 1.0

    def __post_init__(self):
        for name in ("v_e", "v_p", "omega_bar", "beta", "horizon"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class NarrowPassageParams:
    """Two-lane road scenario; every number here is a repo choice.

    The road runs along x.  Q1 drives +x in the lower lane (y < 0) and meets a
    stranded vehicle Q_S parked in that lane; Q2 drives -x in the upper lane.
    """

    length: float = 2.0
    accel_bounds: tuple[float, float] = (-4.0, 2.0)
    steer_rate_bounds: tuple[float, float] = (-3.0, 3.0)
    # boxes as ((x_lo, x_hi), (y_lo, y_hi))
    target_1: tuple[tuple[float, float], tuple[float, float]] = ((5.0, 8.0), (-2.8, 0.0))
    target_2: tuple[tuple[float, float], tuple[float, float]] = ((-8.0, -5.0), (0.0, 2.8))
    curb_lo: float = -2.8
    curb_hi: float = 2.8
    stranded_pose: tuple[float, float, float] = (0.0, -1.4, 0.0)
    footprint_radius: float = 0.5
    x_range: tuple[float, float] = (-8.0, 8.0)
    speed_range: tuple[float, float] = (0.0, 6.0)
    steer_range: tuple[float, float] = (-0.3 * np.pi, 0.3 * np.pi)
    horizon: float = 4.0

    def __post_init__(self):
        for lo, hi in (self.accel_bounds, self.steer_rate_bounds):
            if not lo <= hi:
                raise ContractError("input bounds must satisfy lo <= hi")
        for box in (self.target_1, self.target_2):
            (x0, x1), (y0, y1) = box
            if not (self.x_range[0] <= x0 <= x1 <= self.x_range[1] and self.curb_lo <= y0 <= y1 <= self.curb_hi):
                raise ContractError("target boxes must lie inside the domain")


# ------------------------------------------------------------------- helpers


def _batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != dim:
        raise ContractError(f"{what} has shape {x.shape}, expected (..., {dim})")
    return x2, single


def wrap_angle(theta):
    """Map angles into [-pi, pi)."""
    return np.mod(np.asarray(theta) + np.pi, TWO_PI) - np.pi


def wrap_state(spec: SystemSpec, x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=float, copy=True)
    for i in spec.periodic_dims:
        x[..., i] = wrap_angle(x[..., i])
    return x


def in_domain(spec: SystemSpec, x: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Boolean mask of states inside the domain box (periodic dims always inside)."""
    x = np.asarray(x, dtype=float)
    ok = np.ones(x.shape[:-1], dtype=bool)
    for i, (lo, hi) in enumerate(spec.domain):
        if i in spec.periodic_dims:
            continue
        ok &= (x[..., i] >= lo - tol) & (x[..., i] <= hi + tol)
    return ok


def _check_bounds(values: np.ndarray, bounds: Sequence[tuple[float, float]], what: str, tol: float = 1e-12):
    if not bounds:
        return
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    bad = (values < lo - tol) | (values > hi + tol) | ~np.isfinite(values)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise InputBoundsError(f"{what} component {idx[-1]} = {values[tuple(idx)]} outside {bounds[idx[-1]]}")


def _zeros_matrix(n: int, m: int):
    def mat(x):
        return np.zeros((x.shape[0], n, m))

    return mat


# ---------------------------------------------------------------- operations


def flow(spec: SystemSpec, x, u=None, d=None) -> np.ndarray:
    """Evaluate f(x, u, d); rejects inputs outside their boxes."""
    xb, single = _batch(x, spec.state_dim, "state")
    ub = _inputs(u, spec.control_dim, len(xb), "control")
    db = _inputs(d, spec.disturbance_dim, len(xb), "disturbance")
    _check_bounds(ub, spec.control_bounds, "control")
    _check_bounds(db, spec.disturbance_bounds, "disturbance")
    xw = wrap_state(spec, xb)
    out = _flow_unchecked(spec, xw, ub, db)
    return out[0] if single else out


def _inputs(v, dim: int, n: int, what: str) -> np.ndarray:
    if v is None or dim == 0:
        if v is not None and np.size(v):
            raise ContractError(f"system takes no {what}")
        return np.zeros((n, 0))
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (dim,):
        raise ContractError(f"{what} has shape {v.shape}, expected (..., {dim})")
    return np.broadcast_to(v, (n, dim))


def _flow_unchecked(spec: SystemSpec, x, u, d):
    out = spec.drift(x)
    if spec.control_dim:
        out = out + np.einsum("bnm,bm->bn", spec.control_matrix(x), u)
    if spec.disturbance_dim:
        out = out + np.einsum("bnk,bk->bn", spec.disturbance_matrix(x), d)
    return out


def target_l(spec: SystemSpec, x) -> np.ndarray:
    xb, single = _batch(x, spec.state_dim, "state")
    out = spec.target(wrap_state(spec, xb))
    return out[0] if single else out


def obstacle_g(spec: SystemSpec, x):
    """Obstacle function g, or ``None`` when the system has no unsafe set."""
    if spec.obstacle is None:
        return None
    xb, single = _batch(x, spec.state_dim, "state")
    out = spec.obstacle(wrap_state(spec, xb))
    return out[0] if single else out


def input_coefficients(spec: SystemSpec, x: np.ndarray, p: np.ndarray):
    """Return (<p, drift>, B^T p, C^T p) for batched, already-wrapped x."""
    base = np.einsum("bn,bn->b", p, spec.drift(x))
    cu = np.einsum("bnm,bn->bm", spec.control_matrix(x), p) if spec.control_dim else np.zeros((x.shape[0], 0))
    cd = np.einsum("bnk,bn->bk", spec.disturbance_matrix(x), p) if spec.disturbance_dim else np.zeros((x.shape[0], 0))
    return base, cu, cd


def _endpoint(coef: np.ndarray, bounds, maximize: bool) -> np.ndarray:
    """Bang-bang optimizer of coef * v over v in bounds; ties pick the lower bound."""
    if not bounds:
        return np.zeros_like(coef)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    take_hi = coef > 0 if maximize else coef < 0
    return np.where(take_hi, hi, lo)


def optimal_inputs(spec: SystemSpec, x, grad):
    """Control and disturbance realizing the Hamiltonian at (x, grad).

    AvoidTarget: control maximizes and disturbance minimizes <grad, f>;
    ReachTarget swaps both.  A zero coefficient selects the lower bound.
    """
    _require_affine(spec)
    xb, single = _batch(x, spec.state_dim, "state")
    pb, _ = _batch(grad, spec.state_dim, "gradient")
    xb = wrap_state(spec, xb)
    _, cu, cd = input_coefficients(spec, xb, pb)
    avoid = spec.orientation is Orientation.AVOID
    u = _endpoint(cu, spec.control_bounds, maximize=avoid)
    d = _endpoint(cd, spec.disturbance_bounds, maximize=not avoid)
    if single:
        return u[0], d[0]
    return u, d


def _require_affine(spec: SystemSpec):
    if not spec.affine:
        raise ContractError(f"system {spec.name!r} is not input-affine; use hamiltonian_bruteforce")


def hamiltonian_analytic(spec: SystemSpec, x, grad) -> np.ndarray:
    """Optimized inner product <grad, f> using the sign rule per scalar input."""
    _require_affine(spec)
    xb, single = _batch(x, spec.state_dim, "state")
    pb, _ = _batch(grad, spec.state_dim, "gradient")
    xb = wrap_state(spec, xb)
    if spec.closed_form_hamiltonian is not None and spec.orientation is Orientation.AVOID:
        h = spec.closed_form_hamiltonian(xb, pb)
        return h[0] if single else h
    base, cu, cd = input_coefficients(spec, xb, pb)
    avoid = spec.orientation is Orientation.AVOID
    u = _endpoint(cu, spec.control_bounds, maximize=avoid)
    d = _endpoint(cd, spec.disturbance_bounds, maximize=not avoid)
    h = base + np.sum(cu * u, axis=1) + np.sum(cd * d, axis=1)
    return h[0] if single else h


def hamiltonian_and_flow(spec: SystemSpec, x: np.ndarray, grad: np.ndarray):
    """Batched Hamiltonian plus dH/dgrad (= f at the optimal inputs).

    ``x`` must already be wrapped.  Used inside training where the envelope
    derivative is needed alongside the value.
    """
    base, cu, cd = input_coefficients(spec, x, grad)
    avoid = spec.orientation is Orientation.AVOID
    u = _endpoint(cu, spec.control_bounds, maximize=avoid)
    d = _endpoint(cd, spec.disturbance_bounds, maximize=not avoid)
    f = _flow_unchecked(spec, x, u, d)
    if spec.closed_form_hamiltonian is not None and avoid:
        h = spec.closed_form_hamiltonian(x, grad)
    else:
        h = base + np.sum(cu * u, axis=1) + np.sum(cd * d, axis=1)
    return h, f


def _corners(bounds) -> np.ndarray:
    if not bounds:
        return np.zeros((1, 0))
    return np.array(list(itertools.product(*[(lo, hi) for lo, hi in bounds])), dtype=float)


def hamiltonian_bruteforce(spec: SystemSpec, x, grad) -> np.ndarray:
    """Exact max-min (or min-max) of <grad, f> by enumerating box corners.

    Valid for any system affine in each input separately; it makes no use of
    the drift/input decomposition beyond evaluating ``flow``.
    """
    xb, single = _batch(x, spec.state_dim, "state")
    pb, _ = _batch(grad, spec.state_dim, "gradient")
    xb = wrap_state(spec, xb)
    uc = _corners(spec.control_bounds)
    dc = _corners(spec.disturbance_bounds)
    vals = np.empty((xb.shape[0], len(uc), len(dc)))
    for i, u in enumerate(uc):
        for j, d in enumerate(dc):
            f = _flow_unchecked(spec, xb, np.broadcast_to(u, (xb.shape[0], len(u))),
                                np.broadcast_to(d, (xb.shape[0], len(d))))
            vals[:, i, j] = inner(pb, f)
    if spec.orientation is Orientation.AVOID:
        h = vals.min(axis=2).max(axis=1)
    else:
        h = vals.max(axis=2).min(axis=1)
    return h[0] if single else h


def inner(p: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Row-wise inner product with a fixed summation order."""
    return np.einsum("bn,bn->b", p, f)


# ---------------------------------------------------------------- benchmarks


def air3d(params: Air3DParams = Air3DParams()) -> SystemSpec:
    """Relative evader/pursuer dynamics; the evader turn rate is the control."""
    ve, vp, w, beta = params.v_e, params.v_p, params.omega_bar, params.beta

    def drift(x):
        return np.stack([-ve + vp * np.cos(x[:, 2]), vp * np.sin(x[:, 2]), np.zeros(len(x))], axis=1)

    def control_matrix(x):
        m = np.zeros((len(x), 3, 1))
        m[:, 0, 0] = x[:, 1]
        m[:, 1, 0] = -x[:, 0]
        m[:, 2, 0] = -1.0
        return m

    def disturbance_matrix(x):
        m = np.zeros((len(x), 3, 1))
        m[:, 2, 0] = 1.0
        return m

    def target(x):
        return np.hypot(x[:, 0], x[:, 1]) - beta

    def hamiltonian(x, p):
        return air3d_hamiltonian(params, x, p)

    return SystemSpec(
        name="air3d", state_dim=3,
        control_bounds=[(-w, w)], disturbance_bounds=[(-w, w)],
        domain=[(-1.0, 1.0), (-1.0, 1.0), (-np.pi, np.pi)],
        periodic_dims=frozenset({2}), orientation=Orientation.AVOID,
        horizon=params.horizon, drift=drift, control_matrix=control_matrix,
        disturbance_matrix=disturbance_matrix, target=target,
        closed_form_hamiltonian=hamiltonian, params=params,
        separation=lambda x: np.hypot(x[:, 0], x[:, 1]),
    )


def air3d_hamiltonian(params: Air3DParams, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Closed form of max over evader, min over pursuer turn rates."""
    ve, vp, w = params.v_e, params.v_p, params.omega_bar
    p1, p2, p3 = p[:, 0], p[:, 1], p[:, 2]
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    return (p1 * (-ve + vp * np.cos(x3)) + p2 * (vp * np.sin(x3))
            + w * np.abs(p1 * x2 - p2 * x1 - p3) - w * np.abs(p3))


def air3d_hamiltonian_printed(params: Air3DParams, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Sign arrangement of the commonly printed form; kept only for comparison.

    Differs from the corner-enumerated value whenever the two absolute-value
    terms do not cancel.
    """
    ve, vp, w = params.v_e, params.v_p, params.omega_bar
    p1, p2, p3 = p[:, 0], p[:, 1], p[:, 2]
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    return (p1 * (-ve + vp * np.cos(x3)) + p2 * (vp * np.sin(x3))
            - w * np.abs(p1 * x2 - p2 * x1 - p3) + w * p3)


def _dubins_drift(x, speeds, heading_idx, pos_idx):
    out = np.zeros_like(x)
    for v, h, (ix, iy) in zip(speeds, heading_idx, pos_idx):
        out[:, ix] = v * np.cos(x[:, h])
        out[:, iy] = v * np.sin(x[:, h])
    return out


def two_vehicle_6d(params: Air3DParams = Air3DParams()) -> SystemSpec:
    """Joint pursuer (x1..x3) / evader (x4..x6) state; evader turn rate is the control."""
    vp, ve, w, beta = params.v_p, params.v_e, params.omega_bar, params.beta

    def drift(x):
        return _dubins_drift(x, (vp, ve), (2, 5), ((0, 1), (3, 4)))

    def control_matrix(x):
        m = np.zeros((len(x), 6, 1))
        m[:, 5, 0] = 1.0
        return m

    def disturbance_matrix(x):
        m = np.zeros((len(x), 6, 1))
        m[:, 2, 0] = 1.0
        return m

    def target(x):
        return np.hypot(x[:, 0] - x[:, 3], x[:, 1] - x[:, 4]) - beta

    return SystemSpec(
        name="two_vehicle_6d", state_dim=6,
        control_bounds=[(-w, w)], disturbance_bounds=[(-w, w)],
        domain=[(-1.0, 1.0), (-1.0, 1.0), (-np.pi, np.pi)] * 2,
        periodic_dims=frozenset({2, 5}), orientation=Orientation.AVOID,
        horizon=params.horizon, drift=drift, control_matrix=control_matrix,
        disturbance_matrix=disturbance_matrix, target=target, params=params,
        separation=lambda x: min_pairwise_distance(x, [(0, 1), (3, 4)]),
    )


def three_vehicle_9d(params: Air3DParams = Air3DParams(), shared_evader_control: bool = False) -> SystemSpec:
    """Evaders e1 (x1..x3), e2 (x4..x6) and pursuer p (x7..x9).

    By default each evader turn rate is its own control; with
    ``shared_evader_control`` a single rate drives both evaders.
    """
    v, w, beta = params.v_e, params.omega_bar, params.beta
    vp = params.v_p
    m = 1 if shared_evader_control else 2

    def drift(x):
        return _dubins_drift(x, (v, v, vp), (2, 5, 8), ((0, 1), (3, 4), (6, 7)))

    def control_matrix(x):
        mat = np.zeros((len(x), 9, m))
        mat[:, 2, 0] = 1.0
        mat[:, 5, m - 1] = 1.0
        return mat

    def disturbance_matrix(x):
        mat = np.zeros((len(x), 9, 1))
        mat[:, 8, 0] = 1.0
        return mat

    def target(x):
        return min_pairwise_distance(x, [(0, 1), (3, 4), (6, 7)]) - beta

    return SystemSpec(
        name="three_vehicle_9d", state_dim=9,
        control_bounds=[(-w, w)] * m, disturbance_bounds=[(-w, w)],
        domain=[(-1.0, 1.0), (-1.0, 1.0), (-np.pi, np.pi)] * 3,
        periodic_dims=frozenset({2, 5, 8}), orientation=Orientation.AVOID,
        horizon=params.horizon, drift=drift, control_matrix=control_matrix,
        disturbance_matrix=disturbance_matrix, target=target, params=params,
        separation=lambda x: min_pairwise_distance(x, [(0, 1), (3, 4), (6, 7)]),
    )


def min_pairwise_distance(x: np.ndarray, positions: Sequence[tuple[int, int]]) -> np.ndarray:
    dists = [np.hypot(x[:, a[0]] - x[:, b[0]], x[:, a[1]] - x[:, b[1]])
             for a, b in itertools.combinations(positions, 2)]
    return np.min(np.stack(dists, axis=1), axis=1)


def box_signed_distance(px, py, box) -> np.ndarray:
    """Signed distance from points to an axis-aligned box (negative inside)."""
    (x0, x1), (y0, y1) = box
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    hx, hy = 0.5 * (x1 - x0), 0.5 * (y1 - y0)
    qx = np.abs(px - cx) - hx
    qy = np.abs(py - cy) - hy
    outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    inside = np.minimum(np.maximum(qx, qy), 0.0)
    return outside + inside


def narrow_passage(params: NarrowPassageParams = NarrowPassageParams()) -> SystemSpec:
    """Two kinematic bicycles (x, y, heading, speed, steering) x 2; reach-avoid.

    Controls are (a_1, psi_1, a_2, psi_2); there is no disturbance.
    """
    L = params.length
    r = params.footprint_radius
    sx, sy, _ = params.stranded_pose

    def drift(x):
        out = np.zeros_like(x)
        for o in (0, 5):
            v = x[:, o + 3]
            out[:, o] = v * np.cos(x[:, o + 2])
            out[:, o + 1] = v * np.sin(x[:, o + 2])
            out[:, o + 2] = v * np.tan(x[:, o + 4]) / L
        return out

    def control_matrix(x):
        m = np.zeros((len(x), 10, 4))
        m[:, 3, 0] = 1.0
        m[:, 4, 1] = 1.0
        m[:, 8, 2] = 1.0
        m[:, 9, 3] = 1.0
        return m

    def target(x):
        d1 = box_signed_distance(x[:, 0], x[:, 1], params.target_1)
        d2 = box_signed_distance(x[:, 5], x[:, 6], params.target_2)
        return np.maximum(d1, d2)

    def obstacle(x):
        n = len(x)
        stranded = np.broadcast_to([sx, sy], (n, 2))
        pts = np.concatenate([x[:, [0, 1]], x[:, [5, 6]], stranded], axis=1)
        vehicles = min_pairwise_distance(pts, [(0, 1), (2, 3), (4, 5)]) - 2.0 * r
        curb1 = np.minimum(params.curb_hi - x[:, 1], x[:, 1] - params.curb_lo) - r
        curb2 = np.minimum(params.curb_hi - x[:, 6], x[:, 6] - params.curb_lo) - r
        return -np.minimum(np.minimum(vehicles, curb1), curb2)

    a_lo, a_hi = params.accel_bounds
    s_lo, s_hi = params.steer_rate_bounds
    per_vehicle = [params.x_range, (params.curb_lo, params.curb_hi), (-np.pi, np.pi),
                   params.speed_range, params.steer_range]
    return SystemSpec(
        name="narrow_passage", state_dim=10,
        control_bounds=[(a_lo, a_hi), (s_lo, s_hi)] * 2, disturbance_bounds=[],
        domain=per_vehicle * 2, periodic_dims=frozenset({2, 7}),
        orientation=Orientation.REACH, horizon=params.horizon, drift=drift,
        control_matrix=control_matrix, disturbance_matrix=_zeros_matrix(10, 0),
        target=target, obstacle=obstacle, params=params,
        separation=lambda x: min_pairwise_distance(
            np.concatenate([x[:, [0, 1, 5, 6]], np.broadcast_to([sx, sy], (len(x), 2))], axis=1),
            [(0, 1), (2, 3), (4, 5)]),
    )


def single_integrator(kind: str = "control", bound: float = 1.0, radius: float = 0.25,
                      horizon: float = 0.5, extent: float = 1.0) -> SystemSpec:
    """1D test systems: x' = u (kind='control') or x' = d (kind='disturbance')."""
    if kind not in ("control", "disturbance"):
        raise ContractError(f"unknown single-integrator kind {kind!r}")

    def drift(x):
        return np.zeros_like(x)

    def unit(x):
        return np.ones((len(x), 1, 1))

    def target(x):
        return np.abs(x[:, 0]) - radius

    ctrl = kind == "control"
    return SystemSpec(
        name=f"single_integrator_{kind}", state_dim=1,
        control_bounds=[(-bound, bound)] if ctrl else [],
        disturbance_bounds=[] if ctrl else [(-bound, bound)],
        domain=[(-extent, extent)], periodic_dims=frozenset(),
        orientation=Orientation.AVOID, horizon=horizon, drift=drift,
        control_matrix=unit if ctrl else _zeros_matrix(1, 0),
        disturbance_matrix=_zeros_matrix(1, 0) if ctrl else unit,
        target=target,
    )


def with_obstacle(spec: SystemSpec, obstacle: Callable[[np.ndarray], np.ndarray]) -> SystemSpec:
    """Copy of ``spec`` that carries an obstacle function (turns a BRT into a BRAT)."""
    import dataclasses

    return dataclasses.replace(spec, obstacle=obstacle, name=spec.name + "+obstacle")


def constant_obstacle(value: float = -1e9):
    def g(x):
        return np.full(len(x), float(value))

    return g


BENCHMARKS = {
    "air3d": lambda **kw: air3d(Air3DParams(**kw)),
    "two_vehicle_6d": lambda **kw: two_vehicle_6d(Air3DParams(**kw)),
    "three_vehicle_9d": lambda shared_evader_control=False, **kw: three_vehicle_9d(
        Air3DParams(**kw), shared_evader_control=shared_evader_control),
    "narrow_passage": lambda **kw: narrow_passage(NarrowPassageParams(**kw)),
    "single_integrator_control": lambda **kw: single_integrator("control", **kw),
    "single_integrator_disturbance": lambda **kw: single_integrator("disturbance", **kw),
}


def make_system(name: str, **params) -> SystemSpec:
    try:
        factory = BENCHMARKS[name]
    except KeyError:
        raise ContractError(f"unknown system {name!r}; choose from {sorted(BENCHMARKS)}") from None
    return factory(**params)


class AffineCache:
    """Precomputed drift and input matrices at a fixed set of states.

    Lets repeated Hamiltonian evaluations at the same nodes (grid solves) skip
    re-evaluating the dynamics.
    """

    def __init__(self, spec: SystemSpec, x: np.ndarray):
        _require_affine(spec)
        self.spec = spec
        self.x = wrap_state(spec, np.atleast_2d(x))
        self.drift = spec.drift(self.x)
        self.B = spec.control_matrix(self.x) if spec.control_dim else None
        self.C = spec.disturbance_matrix(self.x) if spec.disturbance_dim else None
        avoid = spec.orientation is Orientation.AVOID
        self._u_max, self._d_max = avoid, not avoid

    def hamiltonian(self, p: np.ndarray) -> np.ndarray:
        h = np.einsum("bn,bn->b", p, self.drift)
        if self.B is not None:
            cu = np.einsum("bnm,bn->bm", self.B, p)
            h = h + np.sum(cu * _endpoint(cu, self.spec.control_bounds, self._u_max), axis=1)
        if self.C is not None:
            cd = np.einsum("bnk,bn->bk", self.C, p)
            h = h + np.sum(cd * _endpoint(cd, self.spec.disturbance_bounds, self._d_max), axis=1)
        return h

    def max_abs_flow(self) -> np.ndarray:
        """Per-dimension max over states and input corners of |f_i|."""
        return self.node_abs_flow().max(axis=0)

    def node_abs_flow(self) -> np.ndarray:
        """Per-state, per-dimension max over input corners of |f_i|."""
        best = np.zeros(self.drift.shape)
        for u in _corners(self.spec.control_bounds):
            for d in _corners(self.spec.disturbance_bounds):
                f = self.drift.copy()
                if self.B is not None:
                    f += self.B @ u
                if self.C is not None:
                    f += self.C @ d
                best = np.maximum(best, np.abs(f))
        return best
