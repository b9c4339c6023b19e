"""Fully-connected sinusoidal value network V(x_hat, t_hat) with exact derivatives.

The forward pass carries ``1 + D`` channels per hidden unit: channel 0 is the
activation itself and channels ``1..D`` are its derivatives with respect to
each of the ``D = n + 1`` network inputs (forward-mode tangents).  A hand
written reverse sweep over that extended computation yields parameter
gradients of any loss built from the value *and* its input gradients, which is
what the HJI residual needs.

Ties in piecewise activations (ReLU at 0) take derivative 0.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

ACTIVATIONS = ("sine", "relu", "tanh", "sigmoid")
CHECKPOINT_MAGIC = b"HJRCKPT1"


class NumericalFault(FloatingPointError):
    """A non-finite number appeared where the contract requires finite values."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


@dataclass
class NetworkParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_layers: int
    hidden_width: int
    input_dim: int
    omega0: float = 30.0
    hidden_omega: float = 30.0
    activation: str = "sine"
    seed: int = 0

    def __post_init__(self):
        shapes = [w.shape for w in self.weights]
        expect = [(self.hidden_width, self.input_dim)]
        expect += [(self.hidden_width, self.hidden_width)] * (self.hidden_layers - 1)
        expect += [(1, self.hidden_width)]
        if shapes != expect:
            raise ValueError(f"layer shapes {shapes} do not chain as {expect}")
        if [b.shape for b in self.biases] != [(s[0],) for s in expect]:
            raise ValueError("bias shapes do not match layer widths")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_scales(self) -> list[float]:
        """Multiplier applied to each hidden layer's pre-activation."""
        if self.activation != "sine":
            return [1.0] * self.hidden_layers
        return [self.omega0] + [self.hidden_omega] * (self.hidden_layers - 1)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def arrays(self) -> list[np.ndarray]:
        """Parameters in layer order: W0, b0, W1, b1, ..."""
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "NetworkParams":
        return NetworkParams(
            weights=[np.array(a) for a in arrays[0::2]], biases=[np.array(a) for a in arrays[1::2]],
            hidden_layers=self.hidden_layers, hidden_width=self.hidden_width,
            input_dim=self.input_dim, omega0=self.omega0, hidden_omega=self.hidden_omega,
            activation=self.activation, seed=self.seed,
        )

    def check_finite(self):
        for i, a in enumerate(self.arrays()):
            if not np.all(np.isfinite(a)):
                raise NumericalFault(f"non-finite entry in parameter array {i}", index=i)


@dataclass
class NormalizationMap:
    """Physical state/time <-> network inputs in [-1, 1]^n x [0, 1]."""

    center: np.ndarray
    half_width: np.ndarray
    horizon: float
    periodic_dims: tuple[int, ...] = ()

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half_width = np.asarray(self.half_width, dtype=float)
        if np.any(self.half_width <= 0) or self.horizon <= 0:
            raise ValueError("half-widths and horizon must be positive")
        self.periodic_dims = tuple(int(i) for i in self.periodic_dims)

    @classmethod
    def for_system(cls, spec) -> "NormalizationMap":
        lo, hi = spec.domain_lo, spec.domain_hi
        return cls(0.5 * (lo + hi), 0.5 * (hi - lo), spec.horizon, tuple(sorted(spec.periodic_dims)))

    def normalize(self, x, t):
        x = np.array(x, dtype=float, copy=True)
        for i in self.periodic_dims:
            x[..., i] = np.mod(x[..., i] + np.pi, 2 * np.pi) - np.pi
        return (x - self.center) / self.half_width, (self.horizon - np.asarray(t, dtype=float)) / self.horizon

    def denormalize(self, xhat, that):
        return np.asarray(xhat) * self.half_width + self.center, self.horizon * (1.0 - np.asarray(that))

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "half_width": self.half_width.tolist(),
                "horizon": self.horizon, "periodic_dims": list(self.periodic_dims)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationMap":
        return cls(np.array(d["center"]), np.array(d["half_width"]), d["horizon"], tuple(d["periodic_dims"]))


# ----------------------------------------------------------- initialization


def init(seed: int, input_dim: int, hidden_layers: int, hidden_width: int, omega0: float = 30.0,
         activation: str = "sine", hidden_omega: Optional[float] = None) -> NetworkParams:
    """Draw parameters deterministically from ``seed``.

    Sine: first layer U(+-1/fan_in), later layers (output included)
    U(+-sqrt(6/fan_in)/omega0); biases share their layer's range.
    ReLU: U(+-sqrt(6/fan_in)); tanh/sigmoid: U(+-sqrt(6/(fan_in+fan_out)));
    their biases U(+-1/sqrt(fan_in)).
    """
    if min(input_dim, hidden_layers, hidden_width) < 1:
        raise ValueError("network dimensions must be positive")
    rng = np.random.default_rng(seed)
    dims = [input_dim] + [hidden_width] * hidden_layers + [1]
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if activation == "sine":
            bound = 1.0 / fan_in if k == 0 else np.sqrt(6.0 / fan_in) / omega0
            bias_bound = bound
        elif activation == "relu":
            bound = np.sqrt(6.0 / fan_in)
            bias_bound = 1.0 / np.sqrt(fan_in)
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            bias_bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bias_bound, bias_bound, size=fan_out))
    return NetworkParams(weights, biases, hidden_layers, hidden_width, input_dim, omega0,
                         omega0 if hidden_omega is None else hidden_omega, activation, seed)


# ------------------------------------------------------------- activations


def _act(name: str, a: np.ndarray):
    """Return sigma(a), sigma'(a), sigma''(a)."""
    if name == "sine":
        s, c = np.sin(a), np.cos(a)
        return s, c, -s
    if name == "tanh":
        y = np.tanh(a)
        d1 = 1.0 - y * y
        return y, d1, -2.0 * y * d1
    if name == "sigmoid":
        y = 0.5 * (1.0 + np.tanh(0.5 * a))
        d1 = y * (1.0 - y)
        return y, d1, d1 * (1.0 - 2.0 * y)
    if name == "relu":
        pos = a > 0
        return np.where(pos, a, 0.0), pos.astype(float), np.zeros_like(a)
    raise ValueError(name)


def _stack_inputs(xhat, that) -> np.ndarray:
    xhat = np.asarray(xhat, dtype=float)
    that = np.asarray(that, dtype=float)
    if xhat.ndim == 1:
        xhat = xhat[None, :]
    that = np.broadcast_to(that.reshape(-1), (xhat.shape[0],))
    return np.concatenate([xhat, that[:, None]], axis=1)


# ------------------------------------------------------------------ forward


def forward(params: NetworkParams, xhat, that) -> np.ndarray:
    """Network value at normalized inputs; returns shape (B,)."""
    params.check_finite()
    h = _stack_inputs(xhat, that)
    if h.shape[1] != params.input_dim:
        raise ValueError(f"input has {h.shape[1]} coordinates, network expects {params.input_dim}")
    for W, b, s in zip(params.weights[:-1], params.biases[:-1], params.layer_scales):
        h = _act(params.activation, s * (h @ W.T + b))[0]
    return (h @ params.weights[-1].T + params.biases[-1])[:, 0]


@dataclass
class _Tape:
    inputs: list[np.ndarray] = field(default_factory=list)  # X_l, (B, C, fan_in)
    pre: list[np.ndarray] = field(default_factory=list)  # A_l, (B, C, fan_out)
    d1: list[np.ndarray] = field(default_factory=list)  # sigma'(A_l[:, 0])
    d2: list[np.ndarray] = field(default_factory=list)  # sigma''(A_l[:, 0])


def _forward_tangent(params: NetworkParams, z: np.ndarray, tape: Optional[_Tape] = None) -> np.ndarray:
    """Propagate value and input-tangent channels; returns (B, 1 + D) output."""
    B, D = z.shape
    X = np.zeros((B, D + 1, D))
    X[:, 0, :] = z
    X[:, 1:, :] = np.eye(D)
    for W, b, s in zip(params.weights[:-1], params.biases[:-1], params.layer_scales):
        A = (X.reshape(-1, X.shape[2]) @ (s * W).T).reshape(B, D + 1, -1)
        A[:, 0, :] += s * b
        y, d1, d2 = _act(params.activation, A[:, 0, :])
        H = A * d1[:, None, :]
        H[:, 0, :] = y
        if tape is not None:
            tape.inputs.append(X)
            tape.pre.append(A)
            tape.d1.append(d1)
            tape.d2.append(d2)
        X = H
    if tape is not None:
        tape.inputs.append(X)
    out = X @ params.weights[-1][0]
    out[:, 0] += params.biases[-1][0]
    return out


def value_and_input_grads(params: NetworkParams, xhat, that):
    """Return (V, dV/dt_hat, grad_xhat V) at normalized inputs."""
    params.check_finite()
    z = _stack_inputs(xhat, that)
    out = _forward_tangent(params, z)
    return out[:, 0], out[:, -1], out[:, 1:-1]


def _backward(params: NetworkParams, tape: _Tape, g_out: np.ndarray) -> list[np.ndarray]:
    """Reverse sweep; ``g_out`` is dLoss/d(output channels), shape (B, 1 + D)."""
    X = tape.inputs[-1]
    W_out = params.weights[-1]
    out_grads = [np.array([np.einsum("bc,bcw->w", g_out, X)]), np.array([g_out[:, 0].sum()])]
    hidden: list[list[np.ndarray]] = [[] for _ in range(params.hidden_layers)]
    gX = g_out[:, :, None] * W_out[0][None, None, :]
    for layer in reversed(range(params.hidden_layers)):
        A, d1, d2, Xin = tape.pre[layer], tape.d1[layer], tape.d2[layer], tape.inputs[layer]
        s = params.layer_scales[layer]
        # H_0 = sigma(A_0), H_j = sigma'(A_0) A_j
        gA = gX * d1[:, None, :]
        gA[:, 0, :] += np.einsum("bcw,bcw->bw", gX[:, 1:, :], A[:, 1:, :]) * d2
        C, width = gA.shape[1], gA.shape[2]
        gA2 = gA.reshape(-1, width)
        hidden[layer] = [s * (gA2.T @ Xin.reshape(-1, Xin.shape[2])), s * gA[:, 0, :].sum(axis=0)]
        if layer > 0:
            gX = (gA2 @ (s * params.weights[layer])).reshape(-1, C, Xin.shape[2])
    return [g for pair in hidden for g in pair] + out_grads


@dataclass
class ResidualOutput:
    """What a residual evaluator returns for one batch.

    ``d_value`` and ``d_time``/``d_space`` are partial derivatives of ``loss``
    with respect to V, dV/dt_hat and grad_xhat V (normalized coordinates).
    """

    loss: float
    per_sample: np.ndarray
    d_value: np.ndarray
    d_time: np.ndarray
    d_space: np.ndarray
    info: dict = field(default_factory=dict)


ResidualEvaluator = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray], ResidualOutput]


def loss_param_grads(params: NetworkParams, batch, residual: ResidualEvaluator):
    """Loss and its gradient with respect to every parameter array.

    ``batch`` is ``(xhat, that)`` or any object with ``xhat``/``that``
    attributes.  ``residual(V, dV/dt_hat, grad_xhat V, xhat, that)`` returns a
    :class:`ResidualOutput`.  Returns ``(loss, grads, residual_output)`` with
    ``grads`` in :meth:`NetworkParams.arrays` order.
    """
    params.check_finite()
    xhat, that = (batch.xhat, batch.that) if hasattr(batch, "xhat") else batch
    z = _stack_inputs(xhat, that)
    tape = _Tape()
    out = _forward_tangent(params, z, tape)
    res = residual(out[:, 0], out[:, -1], out[:, 1:-1], z[:, :-1], z[:, -1])
    bad = ~np.isfinite(res.per_sample)
    if np.any(bad) or not np.isfinite(res.loss):
        idx = int(np.argmax(bad)) if np.any(bad) else None
        raise NumericalFault(f"non-finite loss at sample {idx}", index=idx)
    g_out = np.concatenate([res.d_value[:, None], res.d_space, res.d_time[:, None]], axis=1)
    return float(res.loss), _backward(params, tape, g_out), res


def physical_gradients(params: NetworkParams, nmap: NormalizationMap, x, t):
    """(V, dV/dt, grad_x V) in physical coordinates via the chain rule."""
    xhat, that = nmap.normalize(x, t)
    v, dv_dthat, g = value_and_input_grads(params, xhat, that)
    return v, -dv_dthat / nmap.horizon, g / nmap.half_width


def value(params: NetworkParams, nmap: NormalizationMap, x, t) -> np.ndarray:
    xhat, that = nmap.normalize(x, t)
    return forward(params, xhat, that)


# --------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: NetworkParams, nmap: Optional[NormalizationMap] = None,
                    iteration: int = 0, extra: Optional[dict] = None) -> None:
    """Write the checkpoint container.

    Layout: 8-byte magic ``HJRCKPT1``, little-endian uint64 header length,
    UTF-8 JSON header, then every parameter array as float64 little-endian in
    row-major order, layer by layer (W0, b0, W1, b1, ...).
    """
    header = {
        "format": 1,
        "activation": params.activation,
        "hidden_layers": params.hidden_layers,
        "hidden_width": params.hidden_width,
        "input_dim": params.input_dim,
        "omega0": params.omega0,
        "hidden_omega": params.hidden_omega,
        "seed": params.seed,
        "iteration": int(iteration),
        "shapes": [list(a.shape) for a in params.arrays()],
        "normalization": nmap.to_dict() if nmap is not None else None,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for a in params.arrays():
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Return ``(params, normalization_map_or_None, header)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n].decode())
    offset = 16 + n
    arrays = []
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(float))
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after parameter arrays")
    params = NetworkParams(
        weights=arrays[0::2], biases=arrays[1::2], hidden_layers=header["hidden_layers"],
        hidden_width=header["hidden_width"], input_dim=header["input_dim"], omega0=header["omega0"],
        hidden_omega=header["hidden_omega"], activation=header["activation"], seed=header["seed"],
    )
    nmap = NormalizationMap.from_dict(header["normalization"]) if header["normalization"] else None
    return params, nmap, header
