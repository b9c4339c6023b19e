"""Lax-Friedrichs level-set solver for the HJI variational inequality.

Marches backward from the terminal condition with forward Euler::

    V(t - dt) = min(l, V(t) + dt * (H(x, p_mid) + sum_i a_i (p+_i - p-_i) / 2))

capped by ``V(t)`` (tube form) and followed by ``max(g, .)`` for reach-avoid
problems.  ``a_i`` is the global
bound on ``|f_i|`` over the grid and all input corners, and
``dt = cfl / sum_i(a_i / dx_i)`` with ``cfl = 0.5``.  First order, meant as
a verification oracle for low-dimensional problems.
"""

from __future__ import annotations

import itertools
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import systems as S

MAX_DIMS = 4
GRID_MAGIC = b"HJRGRID1"


@dataclass
class ValueGrid:
    """Values on a rectangular grid.

    Non-periodic axes hold ``count`` nodes from ``lo`` to ``hi`` inclusive;
    periodic axes hold ``count`` nodes ``lo + i * (hi - lo) / count`` (``hi``
    identified with ``lo``).
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    counts: tuple[int, ...]
    periodic: tuple[bool, ...]
    values: np.ndarray
    t: float
    system: str = ""

    def __post_init__(self):
        self.lo = tuple(float(v) for v in self.lo)
        self.hi = tuple(float(v) for v in self.hi)
        self.counts = tuple(int(c) for c in self.counts)
        self.periodic = tuple(bool(p) for p in self.periodic)
        self.values = np.asarray(self.values, dtype=float).reshape(self.counts)
        if not (len(self.lo) == len(self.hi) == len(self.counts) == len(self.periodic)):
            raise ValueError("grid metadata lengths disagree")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(h - l) / (c if p else c - 1)
                         for l, h, c, p in zip(self.lo, self.hi, self.counts, self.periodic)])

    def axes(self) -> list[np.ndarray]:
        return node_axes(self.lo, self.hi, self.counts, self.periodic)

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (prod(counts), ndim), row-major."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def like(self, values: np.ndarray, t: float) -> "ValueGrid":
        return ValueGrid(self.lo, self.hi, self.counts, self.periodic, values, t, self.system)

    def matches(self, spec: S.SystemSpec) -> bool:
        return (self.ndim == spec.state_dim
                and all(abs(l - a) < 1e-12 and abs(h - b) < 1e-12 for l, h, (a, b) in zip(self.lo, self.hi, spec.domain))
                and all(p == (i in spec.periodic_dims) for i, p in enumerate(self.periodic)))


def node_axes(lo, hi, counts, periodic) -> list[np.ndarray]:
    axes = []
    for l, h, c, p in zip(lo, hi, counts, periodic):
        axes.append(l + np.arange(c) * (h - l) / c if p else np.linspace(l, h, c))
    return axes


def grid_for(spec: S.SystemSpec, resolution) -> ValueGrid:
    """Empty grid over the system domain; ``resolution`` is an int or per-dim counts."""
    if spec.state_dim > MAX_DIMS:
        raise S.ContractError(f"grid solves support at most {MAX_DIMS} dimensions, "
                              f"system {spec.name!r} has {spec.state_dim}")
    counts = (resolution,) * spec.state_dim if np.isscalar(resolution) else tuple(resolution)
    if len(counts) != spec.state_dim:
        raise S.ContractError("resolution length must match state dimension")
    if min(counts) < 3:
        raise S.ContractError("grid resolution must be at least 3 per dimension")
    periodic = tuple(i in spec.periodic_dims for i in range(spec.state_dim))
    return ValueGrid(spec.domain_lo, spec.domain_hi, counts, periodic,
                     np.zeros(counts), spec.horizon, spec.name)


def terminal_values(spec: S.SystemSpec, grid: ValueGrid) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    x = grid.nodes()
    lx = S.target_l(spec, x).reshape(grid.counts)
    gx = S.obstacle_g(spec, x)
    if gx is None:
        return lx, lx.copy(), None
    gx = gx.reshape(grid.counts)
    return np.maximum(lx, gx), lx, gx


def _one_sided(values: np.ndarray, axis: int, h: float, periodic: bool):
    """Forward and backward differences along ``axis``; linear-extrapolated ghosts."""
    if periodic:
        up = np.roll(values, -1, axis=axis)
        dn = np.roll(values, 1, axis=axis)
    else:
        pad = [(0, 0)] * values.ndim
        pad[axis] = (1, 1)
        ext = np.pad(values, pad, mode="reflect", reflect_type="odd")
        n = values.shape[axis]
        up = np.take(ext, np.arange(2, n + 2), axis=axis)
        dn = np.take(ext, np.arange(0, n), axis=axis)
    return (up - values) / h, (values - dn) / h


def solve(spec: S.SystemSpec, resolution, t_final: float = 0.0,
          snapshot_times: Optional[Iterable[float]] = None, cfl: float = 0.5,
          tube: bool = True, dissipation: str = "global") -> list[ValueGrid]:
    """Solve the HJI VI backward from T to ``t_final``.

    Returns one :class:`ValueGrid` per snapshot time (default ``{T, t_final}``),
    ordered from latest to earliest.  With ``tube`` the update is also capped
    by the previous value: the exact tube value never increases backward in
    time, and the cap removes spurious growth that linearly extrapolated
    ghost cells can inject at non-periodic edges.  The march uses a uniform
    step; a snapshot falling between steps is taken by a partial step from
    the preceding time level.

    ``dissipation="global"`` scales the Lax-Friedrichs term by the max flow
    speed over the whole grid; ``"local"`` uses each node's own max over
    input corners, which is far less diffusive.  The step size comes from
    the global speeds either way.
    """
    if dissipation not in ("global", "local"):
        raise S.ContractError(f"unknown dissipation {dissipation!r}")
    grid = grid_for(spec, resolution)
    T = spec.horizon
    if not 0.0 <= t_final <= T:
        raise S.ContractError(f"t_final must lie in [0, {T}]")
    times = sorted({float(T), float(t_final)} | {float(s) for s in (() if snapshot_times is None else snapshot_times)}, reverse=True)
    if any(s < t_final - 1e-12 or s > T + 1e-12 for s in times):
        raise S.ContractError("snapshot times must lie in [t_final, T]")

    v, lx, gx = terminal_values(spec, grid)
    cache = S.AffineCache(spec, grid.nodes())
    local = cache.node_abs_flow()
    alpha = local.max(axis=0)
    if dissipation == "global":
        coef = [alpha[i] for i in range(grid.ndim)]
    else:
        coef = [local[:, i].reshape(grid.counts) for i in range(grid.ndim)]
    dx = grid.spacing
    rate = float(np.sum(alpha / dx))
    span = T - t_final
    n_steps = max(1, math.ceil(span * rate / cfl - 1e-12)) if rate > 0 else 1
    dt = span / n_steps

    def step(values: np.ndarray, h: float) -> np.ndarray:
        p_mid = np.empty((values.size, grid.ndim))
        damping = np.zeros(values.shape)
        for i in range(grid.ndim):
            dp, dm = _one_sided(values, i, dx[i], grid.periodic[i])
            p_mid[:, i] = (0.5 * (dp + dm)).ravel()
            damping += 0.5 * coef[i] * (dp - dm)
        ham = cache.hamiltonian(p_mid).reshape(values.shape)
        out = np.minimum(lx, values + h * (ham + damping))
        if tube:
            out = np.minimum(out, values)
        if gx is not None:
            out = np.maximum(gx, out)
        return out

    snapshots: list[ValueGrid] = []
    pending = list(times)
    t = T
    k = 0
    while True:
        while pending and pending[0] >= t - 1e-12 * max(1.0, T):
            snapshots.append(grid.like(v.copy(), pending.pop(0)))
        if not pending:
            break
        t_next = T - (k + 1) * dt
        while pending and pending[0] > t_next + 1e-12 * max(1.0, T):
            s = pending.pop(0)
            snapshots.append(grid.like(step(v, t - s), s))
        if not pending:
            break
        v = step(v, dt)
        k += 1
        t = t_next
    return snapshots


# ------------------------------------------------------------ interpolation


def _snap(f: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    # node queries must reproduce stored values exactly, not up to rounding
    r = np.round(f)
    return np.where(np.abs(f - r) < tol, r, f)


def _cell_coords(grid: ValueGrid, x: np.ndarray, tol: float = 1e-9):
    """Lower corner indices, upper corner indices and weights per dimension."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != grid.ndim:
        raise S.ContractError(f"query has {x.shape[1]} coordinates, grid has {grid.ndim}")
    i0s, i1s, ws = [], [], []
    for d, (l, h, c, p) in enumerate(zip(grid.lo, grid.hi, grid.counts, grid.periodic)):
        xd = x[:, d]
        if p:
            span = h - l
            step = span / c
            f = _snap(np.mod(xd - l, span) / step)
            i0 = np.floor(f).astype(int)
            w = f - i0
            i0 = np.mod(i0, c)
            i1 = np.mod(i0 + 1, c)
        else:
            if np.any((xd < l - tol) | (xd > h + tol)):
                bad = int(np.argmax((xd < l - tol) | (xd > h + tol)))
                raise S.ContractError(f"query {x[bad].tolist()} outside grid along dim {d}")
            step = (h - l) / (c - 1)
            f = _snap(np.clip((xd - l) / step, 0.0, c - 1))
            i0 = np.minimum(np.floor(f).astype(int), c - 2)
            w = f - i0
            i1 = i0 + 1
        i0s.append(i0)
        i1s.append(i1)
        ws.append(w)
    return i0s, i1s, ws


def _multilinear(table: np.ndarray, i0s, i1s, ws) -> np.ndarray:
    out = np.zeros(len(ws[0]))
    for corner in itertools.product((0, 1), repeat=len(ws)):
        idx = tuple(i1 if c else i0 for c, i0, i1 in zip(corner, i0s, i1s))
        weight = np.ones(len(ws[0]))
        for c, w in zip(corner, ws):
            weight = weight * (w if c else 1.0 - w)
        out += weight * table[idx]
    return out


def interpolate(grid: ValueGrid, x) -> np.ndarray:
    """Multilinear interpolation; exact at nodes, periodic axes wrap."""
    single = np.ndim(x) == 1
    out = _multilinear(grid.values, *_cell_coords(grid, x))
    return out[0] if single else out


def node_gradients(grid: ValueGrid) -> np.ndarray:
    """Central differences at nodes (one-sided at non-periodic edges), shape counts + (ndim,)."""
    grads = []
    for i, (h, p) in enumerate(zip(grid.spacing, grid.periodic)):
        if p:
            g = (np.roll(grid.values, -1, axis=i) - np.roll(grid.values, 1, axis=i)) / (2 * h)
        else:
            g = np.gradient(grid.values, h, axis=i, edge_order=1)
        grads.append(g)
    return np.stack(grads, axis=-1)


def grid_gradient(grid: ValueGrid, x, node_grads: Optional[np.ndarray] = None) -> np.ndarray:
    """Spatial gradient: node central differences, multilinearly interpolated."""
    single = np.ndim(x) == 1
    ng = node_gradients(grid) if node_grads is None else node_grads
    coords = _cell_coords(grid, x)
    out = np.stack([_multilinear(ng[..., i], *coords) for i in range(grid.ndim)], axis=1)
    return out[0] if single else out


# ---------------------------------------------------------------------- I/O


def save_grid(path, grid: ValueGrid) -> None:
    """Write ``HJRGRID1`` + uint64 LE header length + JSON header + float64 LE values (row-major)."""
    header = json.dumps({
        "format": 1, "dims": grid.ndim, "lo": list(grid.lo), "hi": list(grid.hi),
        "counts": list(grid.counts), "periodic": list(grid.periodic), "t": grid.t,
        "system": grid.system,
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def load_grid(path) -> ValueGrid:
    raw = Path(path).read_bytes()
    if raw[:8] != GRID_MAGIC:
        raise ValueError(f"{path}: not a grid file")
    (n,) = struct.unpack("<Q", raw[8:16])
    h = json.loads(raw[16:16 + n].decode())
    count = int(np.prod(h["counts"]))
    if len(raw) != 16 + n + 8 * count:
        raise ValueError(f"{path}: value block has wrong length")
    values = np.frombuffer(raw, dtype="<f8", count=count, offset=16 + n).astype(float)
    return ValueGrid(h["lo"], h["hi"], h["counts"], h["periodic"], values.reshape(h["counts"]), h["t"], h["system"])


def stack_in_time(grids: Sequence[ValueGrid]) -> list[ValueGrid]:
    """Snapshots sorted by increasing time (for time interpolation)."""
    return sorted(grids, key=lambda g: g.t)
