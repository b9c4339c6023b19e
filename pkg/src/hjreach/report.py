"""Figures rendered from the CSV files the other commands write.

Each CSV kind is recognized by its header row; nothing here recomputes a
value function, it only draws what is on disk.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _read(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return (rows[0], rows[1:]) if rows else ([], [])


def kind_of(header: list[str]) -> Optional[str]:
    if header[:2] == ["iteration", "phase"]:
        return "loss"
    if len(header) == 4 and header[2:] == ["value", "in_brt"]:
        return "slice"
    if header[:1] == ["t"] and "value" in header and "overridden" in header:
        return "trajectory"
    if header[:1] == ["activation"] and "median_mse" in header:
        return "ablation"
    if header[:1] == ["start"] and "payoff" in header:
        return "rollout_summary"
    return None


def _col(header, rows, name, cast=float):
    i = header.index(name)
    return np.array([cast(r[i]) if r[i] != "" else np.nan for r in rows])


def plot_loss(path: Path, out: Path) -> Path:
    header, rows = _read(path)
    it = _col(header, rows, "iteration", int)
    phase = _col(header, rows, "phase", str)
    fig, ax = plt.subplots(figsize=(6, 3.2))
    for name, style in (("h1", "-"), ("h2", "-"), ("loss", "--")):
        ax.plot(it, _col(header, rows, name), style, lw=0.8, label=name)
    boundary = np.flatnonzero(phase == "curriculum")
    if boundary.size:
        ax.axvline(it[boundary[0]], color="0.5", lw=0.6, ls=":")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean per-sample term")
    ax.legend(frameon=False)
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_slice(path: Path, out: Path) -> Path:
    header, rows = _read(path)
    a, b, v = (_col(header, rows, h) for h in header[:3])
    na = len(np.unique(a))
    nb = len(v) // na
    A, B, V = (arr.reshape(na, nb) for arr in (a, b, v))
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    lim = float(np.nanmax(np.abs(V))) or 1.0
    mesh = ax.pcolormesh(A, B, V, cmap="RdBu", vmin=-lim, vmax=lim, shading="auto")
    if np.nanmin(V) < 0 < np.nanmax(V):
        ax.contour(A, B, V, levels=[0.0], colors="k", linewidths=1.0)
    fig.colorbar(mesh, ax=ax, label="V")
    ax.set_xlabel(header[0])
    ax.set_ylabel(header[1])
    ax.set_aspect("auto")
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_trajectory(path: Path, out: Path) -> Path:
    header, rows = _read(path)
    t = _col(header, rows, "t")
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(8, 3.2))
    # planar path when there are two coordinates, otherwise x0 over time
    a, b = ("x0", "x1") if "x1" in header else ("t", "x0")
    ax0.plot(_col(header, rows, a), _col(header, rows, b), lw=1.0)
    ax0.plot(_col(header, rows, a)[:1], _col(header, rows, b)[:1], "o", ms=3)
    ax0.set_xlabel(a)
    ax0.set_ylabel(b)
    ax1.plot(t, _col(header, rows, "value"), lw=1.0, label="value")
    if "min_separation" in header:
        sep = _col(header, rows, "min_separation")
        if np.any(np.isfinite(sep)):
            ax1.plot(t, sep, lw=1.0, label="min separation")
    flags = _col(header, rows, "overridden")
    on = np.flatnonzero(flags == 1)
    if on.size:
        ax1.plot(t[on], np.zeros(on.size), "|", color="C3", ms=6, label="filter active")
    ax1.axhline(0.0, color="0.6", lw=0.5)
    ax1.set_xlabel("t")
    ax1.legend(frameon=False)
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_ablation(path: Path, out: Path) -> Path:
    header, rows = _read(path)
    acts = _col(header, rows, "activation", str)
    mse = _col(header, rows, "median_mse")
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(acts, mse, color="C0")
    ax.set_yscale("log")
    ax.set_ylabel("median MSE vs grid")
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_rollout_summary(path: Path, out: Path) -> Path:
    header, rows = _read(path)
    v0 = _col(header, rows, "value0")
    pay = _col(header, rows, "payoff")
    fig, ax = plt.subplots(figsize=(3.6, 3.4))
    ax.plot(v0, pay, ".", ms=4)
    lo, hi = np.nanmin([v0, pay]), np.nanmax([v0, pay])
    ax.plot([lo, hi], [lo, hi], color="0.6", lw=0.6)
    ax.set_xlabel("V(x0, t0)")
    ax.set_ylabel("realized payoff")
    fig.savefig(out)
    plt.close(fig)
    return out


RENDERERS = {
    "loss": plot_loss,
    "slice": plot_slice,
    "trajectory": plot_trajectory,
    "ablation": plot_ablation,
    "rollout_summary": plot_rollout_summary,
}


def _csv_files(inputs: Iterable[Path]) -> list[Path]:
    files = []
    for p in inputs:
        files.extend(sorted(p.rglob("*.csv")) if p.is_dir() else [p])
    return files


def render_all(inputs: Iterable[Path], out_dir: Path) -> list[Path]:
    """Render a PNG next to each recognized CSV, named after it, into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with plt.rc_context(STYLE):
        for path in _csv_files(inputs):
            header, _ = _read(path)
            kind = kind_of(header)
            if kind is None:
                continue
            stem = f"{path.parent.name}_{path.stem}" if path.parent.name else path.stem
            written.append(RENDERERS[kind](path, out_dir / f"{stem}.png"))
    return written
