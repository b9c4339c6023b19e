"""Comparisons between learned and grid value functions, slices, pairwise unions."""

from __future__ import annotations

import csv
from typing import Mapping, Optional, Sequence

import numpy as np

from . import gridsolver as G
from . import systems as S
from .rollout import ValueSource


def _check_system(source: ValueSource, grid: G.ValueGrid) -> None:
    name = getattr(source, "system", None)
    if name is not None and grid.system is not None and name != grid.system:
        raise S.ContractError(f"value source is for {name!r}, grid is for {grid.system!r}")


def values_on_grid(source: ValueSource, grid: G.ValueGrid) -> np.ndarray:
    """The source evaluated at every grid node at the grid's time stamp, in node order."""
    _check_system(source, grid)
    return np.asarray(source.value(grid.nodes(), grid.t), dtype=float).reshape(grid.values.shape)


def mse(source: ValueSource, grid: G.ValueGrid) -> float:
    diff = values_on_grid(source, grid) - grid.values
    return float(np.mean(diff * diff))


def brt_volume_error(source: ValueSource, grid: G.ValueGrid) -> float:
    """Percent of all grid nodes whose tube membership (V <= 0) differs from the grid's.

    The denominator is every node of the domain, not just the oracle's tube.
    """
    mine = values_on_grid(source, grid) <= 0.0
    ref = grid.values <= 0.0
    return 100.0 * float(np.count_nonzero(mine != ref)) / ref.size


def slice_axes(spec: S.SystemSpec, free: Sequence[int], resolution: int) -> list[np.ndarray]:
    """Sample points along each free dim; periodic dims exclude the duplicate endpoint."""
    axes = []
    for d in free:
        lo, hi = spec.domain[d]
        axes.append(np.linspace(lo, hi, resolution, endpoint=d not in spec.periodic_dims))
    return axes


def export_slice(source: ValueSource, spec: S.SystemSpec, fixed: Mapping[int, float], free: Sequence[int],
                 resolution: int, t: float, path=None) -> list[tuple[float, float, float, int]]:
    """Tabulate V over two free dims with the rest pinned.

    Rows are ``(free_1, free_2, value, in_brt)`` with ``free_1`` varying
    slowest.  Written as CSV when ``path`` is given.
    """
    free = list(free)
    if len(free) != 2 or free[0] == free[1]:
        raise S.ContractError("exactly two distinct free dims are required")
    n = spec.state_dim
    dims = free + list(fixed)
    if any(not 0 <= d < n for d in dims):
        raise S.ContractError(f"dim index outside 0..{n - 1}")
    if set(fixed) & set(free):
        raise S.ContractError("a dim cannot be both fixed and free")
    missing = set(range(n)) - set(free) - set(fixed)
    if missing:
        raise S.ContractError(f"dims {sorted(missing)} are neither fixed nor free")
    if resolution < 1:
        raise S.ContractError("resolution must be positive")

    a, b = slice_axes(spec, free, resolution)
    A, B = np.meshgrid(a, b, indexing="ij")
    pts = np.zeros((A.size, n))
    pts[:, free[0]] = A.ravel()
    pts[:, free[1]] = B.ravel()
    for d, v in fixed.items():
        pts[:, d] = v
    vals = np.asarray(source.value(pts, t), dtype=float).reshape(-1)
    rows = [(float(p), float(q), float(v), int(v <= 0.0)) for p, q, v in zip(A.ravel(), B.ravel(), vals)]
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{free[0]}", f"x{free[1]}", "value", "in_brt"])
            w.writerows((repr(p), repr(q), repr(v), f) for p, q, v, f in rows)
    return rows


# ---------------------------------------------------- relative coordinates


def relative_state(own: np.ndarray, other: np.ndarray) -> np.ndarray:
    """Express ``other`` (x, y, heading) in the body frame of ``own``.

    This is the three-coordinate relative state of the two-vehicle game with
    ``own`` as the evader and ``other`` as the pursuer.
    """
    own, other = np.atleast_2d(own), np.atleast_2d(other)
    dx, dy = other[:, 0] - own[:, 0], other[:, 1] - own[:, 1]
    c, s = np.cos(own[:, 2]), np.sin(own[:, 2])
    return np.stack([c * dx + s * dy, -s * dx + c * dy, S.wrap_angle(other[:, 2] - own[:, 2])], axis=1)


def pairwise_relative_states(x9: np.ndarray) -> list[np.ndarray]:
    """Relative states for (e1, p), (e2, p) and (e1, e2) in a three-vehicle joint state."""
    x9 = np.atleast_2d(np.asarray(x9, dtype=float))
    e1, e2, p = x9[:, 0:3], x9[:, 3:6], x9[:, 6:9]
    return [relative_state(e1, p), relative_state(e2, p), relative_state(e1, e2)]


def _clip_to_domain(spec: S.SystemSpec, x: np.ndarray) -> np.ndarray:
    return np.clip(x, spec.domain_lo, spec.domain_hi)


def pairwise_union_value(source3d: ValueSource, x9, t: float = 0.0, spec3d: Optional[S.SystemSpec] = None) -> np.ndarray:
    """Min over the three pairwise relative values of a three-vehicle state.

    The evader-evader pair reuses the pursuit value with the second evader in
    the pursuer seat, which over-approximates that pair's tube.  Relative
    positions beyond the 3D box are clipped onto it; far-apart pairs then
    read the edge value, which is positive on any sensible box.
    """
    spec3d = spec3d or S.air3d()
    single = np.ndim(x9) == 1
    vals = [np.asarray(source3d.value(_clip_to_domain(spec3d, r), t), dtype=float).reshape(-1)
            for r in pairwise_relative_states(x9)]
    out = np.minimum.reduce(vals)
    return out[0] if single else out


def pairwise_values(source3d: ValueSource, x9, t: float = 0.0, spec3d: Optional[S.SystemSpec] = None) -> np.ndarray:
    """The three pair values stacked as columns, same order as :func:`pairwise_relative_states`."""
    spec3d = spec3d or S.air3d()
    return np.stack([np.asarray(source3d.value(_clip_to_domain(spec3d, r), t), dtype=float).reshape(-1)
                     for r in pairwise_relative_states(x9)], axis=1)


def lift_relative_to_joint(x_rel: np.ndarray) -> np.ndarray:
    """Embed relative states into the two-vehicle joint space.

    The evader sits at the origin with heading zero; the pursuer takes the
    relative coordinates, so the joint state maps back to ``x_rel`` exactly.
    """
    x_rel = np.atleast_2d(np.asarray(x_rel, dtype=float))
    return np.concatenate([x_rel, np.zeros_like(x_rel)], axis=1)


class ProjectedSource:
    """A joint-space value source viewed through :func:`lift_relative_to_joint`."""

    def __init__(self, joint: ValueSource, system: Optional[str] = "air3d"):
        self.joint, self.system = joint, system
        self.horizon = joint.horizon

    def value(self, x, t):
        single = np.ndim(x) == 1
        v = np.asarray(self.joint.value(lift_relative_to_joint(x), t), dtype=float).reshape(-1)
        return v[0] if single else v


def projection_mse(joint: ValueSource, grid3d: G.ValueGrid) -> float:
    """MSE between a joint-space value projected to relative coordinates and a 3D grid."""
    return mse(ProjectedSource(joint, grid3d.system), grid3d)


def metrics_record(source: ValueSource, grid: G.ValueGrid) -> dict:
    return {"system": grid.system, "t": grid.t, "nodes": int(grid.values.size),
            "mse": mse(source, grid), "brt_volume_error_pct": brt_volume_error(source, grid)}
