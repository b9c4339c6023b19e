"""Self-supervised HJI training: pretraining, time curriculum and Adam.

Per-sample terms (normalized network, physical residual):

* ``h1 = |V - l(x)|`` on terminal samples (``max{l, g}`` for reach-avoid), else 0
* ``h2 = |min{D_t V + H(x, grad V), l - V}|`` (reach-avoid wraps it in
  ``max{., g - V}``)

Batch loss is ``mean(h1) + lambda * mean(h2)`` over the whole batch.
"""

from __future__ import annotations

import csv
import enum
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import systems as S
from . import valuenet as vn

log = logging.getLogger(__name__)

LAMBDA_CLAMP = (1e-2, 1e4)


class LambdaPolicy(enum.Enum):
    AUTO = "auto"
    FIXED = "fixed"


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_checkpoint: Optional[Path]):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainSchedule:
    batch_size: int = 10_000
    pretrain_iters: int = 2_000
    curriculum_iters: int = 20_000
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_policy: LambdaPolicy = LambdaPolicy.AUTO
    lambda_value: float = 1.0
    terminal_fraction: float = 0.1
    seed: int = 0
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.pretrain_iters < 0 or self.curriculum_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if min(self.learning_rate, self.adam_eps) <= 0 or not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("optimizer rates must be positive and betas in [0, 1)")
        if not 0.0 <= self.terminal_fraction <= 1.0:
            raise ValueError("terminal_fraction must lie in [0, 1]")
        if isinstance(self.lambda_policy, str):
            self.lambda_policy = LambdaPolicy(self.lambda_policy)
        if self.lambda_policy is LambdaPolicy.FIXED and self.lambda_value < 0:
            raise ValueError("fixed lambda must be non-negative")


@dataclass
class Batch:
    x: np.ndarray  # physical states (N, n)
    t: np.ndarray  # physical times (N,)
    is_terminal: np.ndarray  # t == T exactly
    xhat: np.ndarray = None
    that: np.ndarray = None


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: vn.NetworkParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()], 0)


PRETRAIN, CURRICULUM = "pretrain", "curriculum"


def sample_batch(schedule: TrainSchedule, system: S.SystemSpec, k: int, phase: str,
                 nmap: Optional[vn.NormalizationMap] = None) -> Batch:
    """Uniform states; times per phase.

    Pretraining pins every sample to t = T.  During the curriculum the first
    ``round(rho * N)`` samples are pinned to T and the rest draw
    t_hat ~ U[0, k/K].
    """
    K = schedule.curriculum_iters
    if phase == PRETRAIN:
        if not 0 <= k <= schedule.pretrain_iters:
            raise ValueError(f"pretraining iteration {k} out of range")
        stream = 0
    elif phase == CURRICULUM:
        if not 0 <= k <= K:
            raise ValueError(f"curriculum iteration {k} out of range")
        stream = 1
    else:
        raise ValueError(f"unknown phase {phase!r}")
    rng = np.random.default_rng([schedule.seed, stream, k])
    N, T = schedule.batch_size, system.horizon
    x = rng.uniform(system.domain_lo, system.domain_hi, size=(N, system.state_dim))
    if phase == PRETRAIN:
        t = np.full(N, T)
    else:
        window = k / K if K > 0 else 1.0
        that = rng.uniform(0.0, 1.0, size=N) * window
        t = T * (1.0 - that)
        t[: int(round(schedule.terminal_fraction * N))] = T
    batch = Batch(x=x, t=t, is_terminal=t == T)
    if nmap is not None:
        batch.xhat, batch.that = nmap.normalize(x, t)
    return batch


# ---------------------------------------------------------------- residuals


@dataclass
class Residual:
    """Per-sample residual terms plus their partials w.r.t. V, D_tV, grad_x V."""

    h1: np.ndarray
    h2: np.ndarray
    dh1_dv: np.ndarray
    dh2_dv: np.ndarray
    dh2_ddt: np.ndarray
    dh2_dgrad: np.ndarray


def _terminal_term(v, boundary, terminal):
    diff = v - boundary
    h1 = np.where(terminal, np.abs(diff), 0.0)
    return h1, np.where(terminal, np.sign(diff), 0.0)


def residual_brt(v, dvdt, grad, system: S.SystemSpec, x, t) -> Residual:
    """BRT residual terms; gradients are physical.  Ties in the min take the PDE branch."""
    x = S.wrap_state(system, np.atleast_2d(x))
    v, dvdt, t = np.atleast_1d(v), np.atleast_1d(dvdt), np.atleast_1d(t)
    grad = np.atleast_2d(grad)
    lx = system.target(x)
    h1, dh1 = _terminal_term(v, lx, t == system.horizon)
    ham, fstar = S.hamiltonian_and_flow(system, x, grad)
    pde = dvdt + ham
    clamp = lx - v
    use_pde = pde <= clamp
    inner = np.where(use_pde, pde, clamp)
    sgn = np.sign(inner)
    h2 = np.abs(inner)
    return Residual(
        h1=h1, h2=h2, dh1_dv=dh1,
        dh2_dv=np.where(use_pde, 0.0, -sgn),
        dh2_ddt=np.where(use_pde, sgn, 0.0),
        dh2_dgrad=np.where(use_pde, sgn, 0.0)[:, None] * fstar,
    )


def residual_brat(v, dvdt, grad, system: S.SystemSpec, x, t) -> Residual:
    """Reach-avoid residual; ties in the outer max take the obstacle branch."""
    if system.obstacle is None:
        raise S.ContractError(f"system {system.name!r} has no obstacle function")
    x = S.wrap_state(system, np.atleast_2d(x))
    v, dvdt, t = np.atleast_1d(v), np.atleast_1d(dvdt), np.atleast_1d(t)
    grad = np.atleast_2d(grad)
    lx = system.target(x)
    gx = system.obstacle(x)
    h1, dh1 = _terminal_term(v, np.maximum(lx, gx), t == system.horizon)
    ham, fstar = S.hamiltonian_and_flow(system, x, grad)
    pde = dvdt + ham
    clamp = lx - v
    use_pde = pde <= clamp
    inner = np.where(use_pde, pde, clamp)
    obst = gx - v
    use_obst = obst >= inner
    outer = np.where(use_obst, obst, inner)
    sgn = np.sign(outer)
    pde_active = ~use_obst & use_pde
    return Residual(
        h1=h1, h2=np.abs(outer), dh1_dv=dh1,
        dh2_dv=np.where(pde_active, 0.0, -sgn),
        dh2_ddt=np.where(pde_active, sgn, 0.0),
        dh2_dgrad=np.where(pde_active, sgn, 0.0)[:, None] * fstar,
    )


def residual_for(system: S.SystemSpec) -> Callable[..., Residual]:
    return residual_brat if system.obstacle is not None else residual_brt


def make_loss(system: S.SystemSpec, nmap: vn.NormalizationMap, batch: Batch, lam: float):
    """Residual evaluator for :func:`valuenet.loss_param_grads`."""
    resid = residual_for(system)
    N = len(batch.t)
    inv_s = 1.0 / nmap.half_width
    dt_scale = -1.0 / nmap.horizon

    def evaluate(v, dv_dthat, grad_xhat, xhat, that):
        r = resid(v, dt_scale * dv_dthat, grad_xhat * inv_s, system, batch.x, batch.t)
        h1m, h2m = r.h1.mean(), r.h2.mean()
        return vn.ResidualOutput(
            loss=h1m + lam * h2m,
            per_sample=r.h1 + lam * r.h2,
            d_value=(r.dh1_dv + lam * r.dh2_dv) / N,
            d_time=lam * r.dh2_ddt * dt_scale / N,
            d_space=lam * r.dh2_dgrad * inv_s / N,
            info={"h1": h1m, "h2": h2m},
        )

    return evaluate


def batch_terms(params: vn.NetworkParams, system: S.SystemSpec, nmap: vn.NormalizationMap, batch: Batch) -> Residual:
    xhat, that = nmap.normalize(batch.x, batch.t)
    v, dthat, gx = vn.value_and_input_grads(params, xhat, that)
    return residual_for(system)(v, -dthat / nmap.horizon, gx / nmap.half_width, system, batch.x, batch.t)


def auto_lambda(h1_terms, h2_terms) -> float:
    """Balance the two loss terms on the first curriculum batch, then freeze."""
    m1 = float(np.mean(h1_terms))
    m2 = float(np.mean(h2_terms))
    if m2 == 0.0:
        log.warning("h2 terms are all zero on the balancing batch; lambda set to upper clamp")
        return LAMBDA_CLAMP[1]
    lam = float(np.clip(m1 / (m2 + 1e-12), *LAMBDA_CLAMP))
    log.info("auto lambda = %.6g (mean h1 %.4g, mean h2 %.4g)", lam, m1, m2)
    return lam


def resolve_lambda(schedule: TrainSchedule, h1_terms=None, h2_terms=None) -> float:
    if schedule.lambda_policy is LambdaPolicy.FIXED:
        return float(schedule.lambda_value)
    return auto_lambda(h1_terms, h2_terms)


def adam_step(params: vn.NetworkParams, grads: list[np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns new (params, state)."""
    arrays = params.arrays()
    if len(grads) != len(arrays) or any(g.shape != a.shape for g, a in zip(grads, arrays)):
        raise ValueError("gradient shapes do not match parameters")
    offset = 0
    for g in grads:
        bad = ~np.isfinite(g)
        if np.any(bad):
            idx = offset + int(np.argmax(bad.ravel()))
            raise vn.NumericalFault(f"non-finite gradient at flat parameter index {idx}", index=idx)
        offset += g.size
    step = state.step + 1
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    new_m, new_v, new_p = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_p.append(a - lr * (m / bc1) / (np.sqrt(v / bc2) + eps))
        new_m.append(m)
        new_v.append(v)
    return params.with_arrays(new_p), AdamState(new_m, new_v, step)


# ------------------------------------------------------------------ training


@dataclass
class NetConfig:
    hidden_layers: int = 3
    hidden_width: int = 128
    omega0: float = 30.0
    hidden_omega: float = 30.0
    activation: str = "sine"


@dataclass
class LossRecord:
    iteration: int
    phase: str
    h1: float
    h2: float
    lam: float
    loss: float
    wall_time: float


@dataclass
class TrainResult:
    params: vn.NetworkParams
    nmap: vn.NormalizationMap
    log: list[LossRecord] = field(default_factory=list)
    lam: float = 0.0
    checkpoints: list[Path] = field(default_factory=list)


LOSS_LOG_COLUMNS = ("iteration", "phase", "h1", "h2", "lambda", "loss", "wall_time")


def write_loss_log(path, records: list[LossRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_LOG_COLUMNS)
        for r in records:
            w.writerow([r.iteration, r.phase, repr(r.h1), repr(r.h2), repr(r.lam), repr(r.loss), f"{r.wall_time:.3f}"])


def read_loss_log(path) -> list[LossRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [LossRecord(int(r["iteration"]), r["phase"], float(r["h1"]), float(r["h2"]), float(r["lambda"]),
                       float(r["loss"]), float(r["wall_time"])) for r in rows]


def train(system: S.SystemSpec, schedule: TrainSchedule, net: NetConfig = NetConfig(),
          out_dir: Optional[Path] = None, progress: Optional[Callable[[LossRecord], None]] = None,
          log_every: int = 100) -> TrainResult:
    """Pretrain on the terminal condition (lambda = 0), then run the curriculum.

    Checkpoints go to ``out_dir`` every ``schedule.checkpoint_every``
    iterations plus a final one; ``loss_log.csv`` is rewritten alongside.
    """
    nmap = vn.NormalizationMap.for_system(system)
    params = vn.init(schedule.seed, system.state_dim + 1, net.hidden_layers, net.hidden_width,
                     net.omega0, net.activation, net.hidden_omega)
    state = AdamState.zeros_like(params)
    result = TrainResult(params=params, nmap=nmap)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    last_good: Optional[Path] = None
    total = schedule.pretrain_iters + schedule.curriculum_iters
    lam = 0.0

    def save(it: int, final: bool = False):
        nonlocal last_good
        if out_dir is None:
            return
        path = out_dir / ("checkpoint_final.bin" if final else f"checkpoint_{it:07d}.bin")
        vn.save_checkpoint(path, params, nmap, iteration=it,
                           extra={"system": system.name, "lambda": lam})
        result.checkpoints.append(path)
        last_good = path
        write_loss_log(out_dir / "loss_log.csv", result.log)

    for it in range(total):
        if it < schedule.pretrain_iters:
            phase, k, lam_it = PRETRAIN, it, 0.0
        else:
            phase, k = CURRICULUM, it - schedule.pretrain_iters + 1
            if k == 1:
                if schedule.lambda_policy is LambdaPolicy.AUTO:
                    probe = sample_batch(schedule, system, k, CURRICULUM, nmap)
                    r = batch_terms(params, system, nmap, probe)
                    lam = resolve_lambda(schedule, r.h1, r.h2)
                else:
                    lam = resolve_lambda(schedule)
            lam_it = lam
        batch = sample_batch(schedule, system, k, phase, nmap)
        try:
            loss, grads, res = vn.loss_param_grads(params, batch, make_loss(system, nmap, batch, lam_it))
            params, state = adam_step(params, grads, state, schedule.learning_rate,
                                      schedule.adam_beta1, schedule.adam_beta2, schedule.adam_eps)
        except vn.NumericalFault as exc:
            save_path = last_good
            if out_dir is not None:
                write_loss_log(out_dir / "loss_log.csv", result.log)
            raise TrainingDiverged(f"iteration {it}: {exc}", save_path) from exc
        rec = LossRecord(it, phase, float(res.info["h1"]), float(res.info["h2"]), lam_it, loss,
                         time.perf_counter() - start)
        result.log.append(rec)
        if progress is not None and (it % log_every == 0 or it == total - 1):
            progress(rec)
        if schedule.checkpoint_every and (it + 1) % schedule.checkpoint_every == 0 and it + 1 < total:
            save(it + 1)
    result.params, result.lam = params, lam
    save(total, final=True)
    return result
