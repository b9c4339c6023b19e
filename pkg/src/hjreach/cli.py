"""``hjreach`` command line: train, gridsolve, eval, rollout, slice, report.

Exit codes: 0 success, 1 config or input error, 2 numerical fault.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import statistics
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis as A
from . import config as C
from . import gridsolver as G
from . import rollout as R
from . import systems as S
from . import trainer as T
from . import valuenet as vn

log = logging.getLogger("hjreach")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
MANIFEST = "manifest.json"


# ------------------------------------------------------------ run directories


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def loss_log_digest(path: Path) -> str:
    """Digest of a loss log with the wall-time column dropped."""
    h = hashlib.sha256()
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            h.update(",".join(row[:-1]).encode() + b"\n")
    return h.hexdigest()


def write_manifest(run_dir: Path, cfg: Optional[C.RunConfig], command: str, extra: Optional[dict] = None) -> dict:
    """Record resolved config, seed and per-artifact checksums for ``run_dir``."""
    checksums = {}
    for p in sorted(run_dir.iterdir()):
        if p.name in (MANIFEST, "checksums.sha256") or not p.is_file():
            continue
        if p.name == "loss_log.csv":
            checksums["loss_log.csv#losses"] = loss_log_digest(p)
        else:
            checksums[p.name] = _sha256(p)
    manifest = {
        "command": command,
        "complete": True,
        "seed": cfg.seed if cfg is not None else None,
        "workers": cfg["run"]["workers"] if cfg is not None else 1,
        "config_digest": cfg.digest() if cfg is not None else None,
        "checksums": checksums,
        **(extra or {}),
    }
    (run_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (run_dir / "checksums.sha256").write_text("".join(f"{v}  {k}\n" for k, v in checksums.items()))
    return manifest


def _complete(run_dir: Path) -> bool:
    try:
        return json.loads((run_dir / MANIFEST).read_text()).get("complete", False)
    except (OSError, ValueError):
        return False


def _prepare_dir(run_dir: Path, cfg: C.RunConfig) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.cfg").write_text(cfg.to_text())


def train_run(cfg: C.RunConfig, runs_root: Path, force: bool = False, quiet: bool = False) -> Path:
    """Train ``cfg`` into its run directory, or reuse a finished run with the same hash and seed."""
    run_dir = Path(runs_root) / cfg.run_dir_name()
    if _complete(run_dir) and not force:
        log.info("reusing finished run %s", run_dir)
        return run_dir
    _prepare_dir(run_dir, cfg)
    system = cfg.system()

    def progress(rec: T.LossRecord) -> None:
        if not quiet:
            log.info("it %6d %-10s h1 %.4g h2 %.4g lambda %.3g (%.0fs)",
                     rec.iteration, rec.phase, rec.h1, rec.h2, rec.lam, rec.wall_time)

    result = T.train(system, cfg.schedule(), cfg.net(), out_dir=run_dir, progress=progress)
    write_manifest(run_dir, cfg, "train", {"lambda": result.lam, "system": system.name})
    return run_dir


def grid_dir_name(cfg: C.RunConfig) -> str:
    key = json.dumps({"system": cfg["system"], "grid": cfg["grid"]}, sort_keys=True)
    return f"{cfg['system']['name']}-grid-{hashlib.sha256(key.encode()).hexdigest()[:12]}"


def grid_file_name(t: float) -> str:
    return f"grid_t{t:.6f}.bin"


def gridsolve_run(cfg: C.RunConfig, runs_root: Path, force: bool = False) -> Path:
    run_dir = Path(runs_root) / grid_dir_name(cfg)
    if _complete(run_dir) and not force:
        log.info("reusing finished grid solve %s", run_dir)
        return run_dir
    system = cfg.system()
    g = cfg["grid"]
    if system.state_dim > G.MAX_DIMS:
        raise S.ContractError(f"grid solves support at most {G.MAX_DIMS} state dims; "
                              f"{system.name} has {system.state_dim}")
    _prepare_dir(run_dir, cfg)
    snaps = G.solve(system, cfg.resolution(), g["t_final"], g["snapshot_times"], g["cfl"], g["tube"],
                    g["dissipation"])
    for grid in snaps:
        G.save_grid(run_dir / grid_file_name(grid.t), grid)
    write_manifest(run_dir, cfg, "gridsolve", {"system": system.name, "times": [s.t for s in snaps]})
    return run_dir


# --------------------------------------------------------------- value sources


def load_source(checkpoint: Optional[str] = None, grids: Sequence[str] = ()) -> R.ValueSource:
    if checkpoint and grids:
        raise C.ConfigError("source", "give either a checkpoint or grid files, not both")
    if checkpoint:
        params, nmap, header = vn.load_checkpoint(checkpoint)
        if nmap is None:
            raise C.ConfigError(checkpoint, "checkpoint has no normalization map")
        return R.NetworkValueSource(params, nmap, header.get("extra", {}).get("system"))
    paths: list[Path] = []
    for g in grids:
        p = Path(g)
        paths.extend(sorted(p.glob("grid_t*.bin")) if p.is_dir() else [p])
    if not paths:
        raise C.ConfigError("source", "no checkpoint or grid files given")
    return R.GridValueSource([G.load_grid(p) for p in paths])


def _grid_at(grids: Sequence[str], t: float) -> G.ValueGrid:
    """The grid snapshot stamped ``t`` from a list of files or directories."""
    paths: list[Path] = []
    for g in grids:
        p = Path(g)
        paths.extend(sorted(p.glob("grid_t*.bin")) if p.is_dir() else [p])
    loaded = [G.load_grid(p) for p in paths]
    for grid in loaded:
        if abs(grid.t - t) < 1e-9:
            return grid
    raise C.ConfigError("grid", f"no grid snapshot at t = {t} among {[g.t for g in loaded]}")


# ------------------------------------------------------------------ commands


def cmd_train(args) -> int:
    cfg = C.load_config(args.config)
    run_dir = train_run(cfg, Path(args.runs), force=args.force)
    print(run_dir)
    return EXIT_OK


def cmd_gridsolve(args) -> int:
    cfg = C.load_config(args.config)
    run_dir = gridsolve_run(cfg, Path(args.runs), force=args.force)
    print(run_dir)
    return EXIT_OK


METRIC_COLUMNS = ("label", "activation", "seed", "system", "t", "mse", "brt_volume_error_pct")


def _median_summary(records: list[dict]) -> list[dict]:
    out = []
    for act in sorted({r["activation"] for r in records}):
        rows = [r for r in records if r["activation"] == act]
        out.append({"activation": act, "runs": len(rows),
                    "median_mse": statistics.median(r["mse"] for r in rows),
                    "median_brt_volume_error_pct": statistics.median(r["brt_volume_error_pct"] for r in rows)})
    return out


def evaluate_records(jobs: list[tuple[str, str, int, R.ValueSource]], grid: G.ValueGrid) -> list[dict]:
    records = []
    for label, act, seed, src in jobs:
        m = A.metrics_record(src, grid)
        records.append({"label": label, "activation": act, "seed": seed, **{k: m[k] for k in ("system", "t")},
                        "mse": m["mse"], "brt_volume_error_pct": m["brt_volume_error_pct"]})
    return records


def write_metrics(out: Path, records: list[dict]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, METRIC_COLUMNS)
        w.writeheader()
        w.writerows({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()} for r in records)
    summary = _median_summary(records)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ("activation", "runs", "median_mse", "median_brt_volume_error_pct"))
        w.writeheader()
        w.writerows({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()} for r in summary)
    (out / "metrics.json").write_text(json.dumps({"records": records, "summary": summary}, indent=2) + "\n")
    lines = [f"{r['label']}: mse={r['mse']:.6g} brt_volume_error_pct={r['brt_volume_error_pct']:.4g}" for r in records]
    lines += [f"median[{s['activation']}]: mse={s['median_mse']:.6g} "
              f"brt_volume_error_pct={s['median_brt_volume_error_pct']:.4g} (n={s['runs']})" for s in summary]
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_eval(args) -> int:
    jobs: list[tuple[str, str, int, R.ValueSource]] = []
    cfg = C.load_config(args.config) if args.config else None
    if args.grid:
        grid = _grid_at(args.grid, args.t)
    elif cfg is not None:
        oracle = cfg.with_overrides(grid={"snapshot_times": sorted({args.t})})
        grid = _grid_at([str(gridsolve_run(oracle, Path(args.runs)))], args.t)
    else:
        raise C.ConfigError("grid", "give --grid or a --config to solve one")
    for ck in args.checkpoint or []:
        params, nmap, header = vn.load_checkpoint(ck)
        system = header.get("extra", {}).get("system")
        jobs.append((str(ck), params.activation, params.seed, R.NetworkValueSource(params, nmap, system)))
    if cfg is not None:
        activations = args.activation or cfg["eval"]["activations"] or [cfg["network"]["activation"]]
        seeds = args.seeds if args.seeds is not None else (cfg["eval"]["seeds"] or [cfg.seed])
        for act in activations:
            for seed in seeds:
                run_cfg = cfg.with_overrides(network={"activation": act}, run={"seed": seed})
                run_dir = train_run(run_cfg, Path(args.runs), quiet=True)
                params, nmap, header = vn.load_checkpoint(run_dir / "checkpoint_final.bin")
                jobs.append((run_dir.name, act, seed, R.NetworkValueSource(params, nmap, header["extra"].get("system"))))
    if not jobs:
        raise C.ConfigError("checkpoint", "nothing to evaluate; give --checkpoint or --config")
    records = evaluate_records(jobs, grid)
    write_metrics(Path(args.out), records)
    return EXIT_OK


SUMMARY_COLUMNS = ("start", "file", "value0", "payoff", "min_separation", "steps", "truncated", "overrides")


def cmd_rollout(args) -> int:
    sc = C.load_scenario(args.scenario)
    src = load_source(args.checkpoint, args.grid or ())
    spec = S.make_system(sc.system)
    if getattr(src, "system", None) not in (None, spec.name):
        raise C.ConfigError("scenario.system", f"scenario is for {spec.name!r}, value source is for {src.system!r}")
    starts = list(sc.starts)
    if sc.random_starts:
        rng = np.random.default_rng(sc.random_seed)
        for i in range(sc.random_starts):
            starts.append(C.Start(f"random{i:03d}", rng.uniform(spec.domain_lo, spec.domain_hi)))
    if not starts:
        raise C.ConfigError("scenario", "no starts defined")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for st in starts:
        if len(st.x0) != spec.state_dim:
            raise C.ConfigError(f"start.{st.name}.x0", f"expected {spec.state_dim} coordinates, got {len(st.x0)}")
        if args.filtered:
            if st.nominal is None:
                raise C.ConfigError(f"start.{st.name}.nominal", "filtered rollouts need a nominal control")
            policy = R.FilterPolicy(st.nominal, sc.margin)
            traj = R.simulate_filtered(spec, src, policy, st.x0, sc.t0, sc.dt, sc.t_end)
        else:
            traj = R.simulate_optimal(spec, src, st.x0, sc.t0, sc.dt, sc.t_end)
        name = f"traj_{st.name}.csv"
        R.write_trajectory_csv(out / name, traj, spec)
        rows.append({"start": st.name, "file": name, "value0": repr(float(traj.values[0])),
                     "payoff": repr(traj.payoff),
                     "min_separation": repr(float(traj.separation.min())) if traj.separation is not None else "",
                     "steps": len(traj.times) - 1, "truncated": int(traj.truncated),
                     "overrides": int(traj.overridden.sum())})
    with open(out / "rollout_summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    print(out)
    return EXIT_OK


def _parse_fix(items: Sequence[str]) -> dict[int, float]:
    fixed = {}
    for item in items:
        try:
            k, v = item.split("=")
            fixed[int(k)] = float(v)
        except ValueError:
            raise C.ConfigError("--fix", f"expected DIM=VALUE, got {item!r}") from None
    return fixed


def cmd_slice(args) -> int:
    src = load_source(args.checkpoint, args.grid or ())
    name = args.system or getattr(src, "system", None)
    if name is None:
        raise C.ConfigError("--system", "value source does not name its system; pass --system")
    spec = S.make_system(name.split("+")[0])
    A.export_slice(src, spec, _parse_fix(args.fix), args.free, args.resolution, args.t, args.out)
    print(args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    from . import report

    written = report.render_all([Path(p) for p in args.inputs], Path(args.out))
    for p in written:
        print(p)
    if not written:
        raise C.ConfigError("inputs", "no recognizable CSV files found")
    return EXIT_OK


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hjreach", description="Neural and grid HJI reachability.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a value network from a run config")
    p.add_argument("config")
    p.add_argument("--runs", default="runs", help="root of run directories")
    p.add_argument("--force", action="store_true", help="retrain even if a finished run exists")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gridsolve", help="solve the grid oracle for a run config")
    p.add_argument("config")
    p.add_argument("--runs", default="runs")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gridsolve)

    p = sub.add_parser("eval", help="MSE and BRT volume error against a grid snapshot")
    p.add_argument("--grid", nargs="+", help="grid files or a gridsolve run directory")
    p.add_argument("--checkpoint", nargs="+", help="checkpoints to evaluate")
    p.add_argument("--config", help="train (or reuse) runs from this config and evaluate them")
    p.add_argument("--activation", nargs="+", choices=["sine", "relu", "tanh", "sigmoid"])
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--t", type=float, default=0.0, help="time of the grid snapshot to compare at")
    p.add_argument("--runs", default="runs")
    p.add_argument("--out", default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="simulate scenario starts under optimal or filtered play")
    p.add_argument("scenario")
    p.add_argument("--checkpoint")
    p.add_argument("--grid", nargs="+")
    p.add_argument("--filtered", action="store_true", help="nominal control with the safety filter")
    p.add_argument("--out", default="rollouts")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("slice", help="tabulate a 2D slice of a value function to CSV")
    p.add_argument("--checkpoint")
    p.add_argument("--grid", nargs="+")
    p.add_argument("--system")
    p.add_argument("--free", nargs=2, type=int, required=True)
    p.add_argument("--fix", nargs="*", default=[], metavar="DIM=VALUE")
    p.add_argument("--resolution", type=int, default=101)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--out", default="slice.csv")
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("report", help="render figures from CSV outputs")
    p.add_argument("inputs", nargs="+", help="CSV files or directories holding them")
    p.add_argument("--out", default="figures")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (C.ConfigError, S.ContractError) as exc:
        print(f"hjreach: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except T.TrainingDiverged as exc:
        print(f"hjreach: numerical fault: {exc} (last good checkpoint: {exc.last_checkpoint})", file=sys.stderr)
        return EXIT_NUMERIC
    except (vn.NumericalFault, FloatingPointError) as exc:
        print(f"hjreach: numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"hjreach: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
