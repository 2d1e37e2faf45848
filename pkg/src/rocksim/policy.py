"""Float MLP policy: evaluation, gradients, checkpoint format, action mapping.

The network is a plain fully connected stack (default [45, 512, 256, 128, 1],
ELU hidden, tanh output). The trainer drives the same class through
forward_cached/backward, treating the final linear pre-activation as the
distribution mean; the tanh squash applies at the action interface.

Checkpoint layout (ROCKPOL1, little-endian):
  8s   magic "ROCKPOL1"
  u32  layer count L
  L x [u32 rows, u32 cols, rows*cols f64 row-major weights, rows f64 bias]
  L x  u8 activation id (0 identity, 1 elu, 2 tanh)
A JSON text sidecar at <path>.meta.json records the training config hash.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC_FLOAT = b"ROCKPOL1"
ACTIVATION_IDS = {"identity": 0, "elu": 1, "tanh": 2}
ACTIVATION_NAMES = {v: k for k, v in ACTIVATION_IDS.items()}
MAX_MOTOR_SETPOINT = 21.0  # rad/s

DEFAULT_WIDTHS = (45, 512, 256, 128, 1)


class CorruptedModelError(RuntimeError):
    """Non-finite parameters or activations encountered during evaluation."""


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "elu":
        return np.where(z > 0.0, z, np.expm1(np.minimum(z, 0.0)))
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "elu":
        return np.where(z > 0.0, 1.0, a + 1.0)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _orthogonal(rows: int, cols: int, rng: np.random.Generator, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class Mlp:
    """Weights are (out, in) matrices; forward maps (..., in) -> (..., out)."""

    def __init__(self, weights, biases, hidden_activation="elu", output_activation="tanh"):
        self.weights = [np.ascontiguousarray(w, dtype=float) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=float) for b in biases]
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise ValueError("bias length must match weight rows")

    @classmethod
    def init(
        cls,
        widths,
        rng: np.random.Generator,
        hidden_activation: str = "elu",
        output_activation: str = "tanh",
        output_gain: float = 1.0,
    ) -> "Mlp":
        weights, biases = [], []
        for i in range(len(widths) - 1):
            last = i == len(widths) - 2
            gain = output_gain if last else np.sqrt(2.0)
            weights.append(_orthogonal(widths[i + 1], widths[i], rng, gain))
            biases.append(np.zeros(widths[i + 1]))
        return cls(weights, biases, hidden_activation, output_activation)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def activation_of(self, layer: int) -> str:
        return self.output_activation if layer == len(self.weights) - 1 else self.hidden_activation

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def check_finite(self) -> None:
        for p in self.parameters():
            if not np.all(np.isfinite(p)):
                raise CorruptedModelError("non-finite parameter in model")

    def forward_pre(self, x: np.ndarray) -> np.ndarray:
        """Output of the final linear layer before the output activation."""
        a = np.asarray(x, dtype=float)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if i == last else _act(self.hidden_activation, z)
        return a

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = _act(self.output_activation, self.forward_pre(x))
        if not np.all(np.isfinite(out)):
            self.check_finite()
            raise CorruptedModelError("non-finite activation during forward pass")
        return out

    def forward_trace(self, x: np.ndarray):
        """All pre-activations and activations per layer (calibration use)."""
        a = np.asarray(x, dtype=float)
        pres, acts = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = _act(self.activation_of(i), z)
            pres.append(z)
            acts.append(a)
        return pres, acts

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping what backward() needs; returns the final
        pre-activation (the distribution mean for the trainer)."""
        a = np.asarray(x, dtype=float)
        inputs = [a]
        pres = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            pres.append(z)
            a = z if i == last else _act(self.hidden_activation, z)
            if i != last:
                inputs.append(a)
        return pres[-1], (inputs, pres)

    def backward(self, cache, grad_pre_out: np.ndarray):
        """Gradients of a scalar loss given d(loss)/d(final pre-activation).

        Returns a list matching parameters(): [dW0, db0, dW1, db1, ...].
        """
        inputs, pres = cache
        grads = [None] * (2 * len(self.weights))
        delta = np.asarray(grad_pre_out, dtype=float)
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = delta.T @ inputs[i]
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i]
                a_prev = inputs[i]
                delta = delta * _act_grad(self.hidden_activation, pres[i - 1], a_prev)
        return grads


class PolicyNet(Mlp):
    """Actor network with the deployment interface widths and squashing."""

    @classmethod
    def create(cls, rng: np.random.Generator, widths=DEFAULT_WIDTHS, output_gain: float = 1.0):
        base = Mlp.init(widths, rng, "elu", "tanh", output_gain)
        return cls(base.weights, base.biases, "elu", "tanh")


def forward(policy: Mlp, obs: np.ndarray) -> float:
    """Deterministic action in [-1, 1] for one 45-entry observation."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (policy.widths[0],):
        raise ValueError(f"observation must have shape ({policy.widths[0]},)")
    out = policy.forward(obs[None, :])
    return float(out[0, 0])


def action_to_setpoint(action: float) -> float:
    """Map a policy action to the motor velocity setpoint interface."""
    if not np.isfinite(action):
        raise ValueError("action must be finite")
    return MAX_MOTOR_SETPOINT * max(-1.0, min(1.0, float(action)))


def config_hash(config_text: str) -> str:
    return hashlib.sha256(config_text.encode("utf-8")).hexdigest()


def save_policy(policy: Mlp, path: str | Path, meta: dict | None = None) -> None:
    path = Path(path)
    blob = bytearray()
    blob += MAGIC_FLOAT
    blob += struct.pack("<I", len(policy.weights))
    for w, b in zip(policy.weights, policy.biases):
        blob += struct.pack("<II", w.shape[0], w.shape[1])
        blob += np.ascontiguousarray(w, dtype="<f8").tobytes()
        blob += np.ascontiguousarray(b, dtype="<f8").tobytes()
    for i in range(len(policy.weights)):
        blob += struct.pack("<B", ACTIVATION_IDS[policy.activation_of(i)])
    path.write_bytes(bytes(blob))
    sidecar = {
        "format": "ROCKPOL1",
        "widths": policy.widths,
        "hidden_activation": policy.hidden_activation,
        "output_activation": policy.output_activation,
    }
    sidecar.update(meta or {})
    Path(str(path) + ".meta.json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_policy(path: str | Path) -> PolicyNet:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC_FLOAT:
        raise ValueError("not a ROCKPOL1 checkpoint")
    off = 8
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    weights, biases = [], []
    for _ in range(count):
        rows, cols = struct.unpack_from("<II", raw, off)
        off += 8
        w = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
        off += rows * cols * 8
        b = np.frombuffer(raw, dtype="<f8", count=rows, offset=off)
        off += rows * 8
        weights.append(w.copy())
        biases.append(b.copy())
    acts = [ACTIVATION_NAMES[raw[off + i]] for i in range(count)]
    policy = PolicyNet(weights, biases, hidden_activation=acts[0] if count > 1 else "identity",
                       output_activation=acts[-1])
    policy.check_finite()
    return policy
