"""Symmetric int8 quantized inference for the policy MLP.

Weights are per-tensor symmetric int8; biases accumulate in int32 at the
layer's input*weight scale. Activation ranges are calibrated from the largest
absolute pre-activation seen over a calibration set; the nonlinearity is
applied to the dequantized int32 accumulator and the result requantized once
as the next layer's int8 input, whose scale is the activation's peak over the
calibrated pre-activation range. The matmul inner loops are pure integer
arithmetic, so repeated evaluation is bit-identical.

Checkpoint layout (ROCKQNT1, little-endian):
  8s   magic "ROCKQNT1"
  u32  layer count L
  L x [u32 rows, u32 cols, rows*cols i8 row-major weights, rows i32 bias]
  L x  u8 activation id (0 identity, 1 elu, 2 tanh)
  L x [f64 weight_scale, f64 in_scale, f64 pre_scale, i8 zero_point]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .policy import ACTIVATION_IDS, ACTIVATION_NAMES, Mlp, _act

MAGIC_QUANT = b"ROCKQNT1"
INPUT_SCALE = 1.0 / 127.0  # observations are scaled/clipped to [-1, 1]


class DegenerateCalibrationError(ValueError):
    def __init__(self, layer: int):
        super().__init__(f"calibration produced zero dynamic range for layer {layer}")
        self.layer = layer


@dataclass
class QuantizedPolicy:
    weights_q: list[np.ndarray]  # int8, (out, in)
    biases_q: list[np.ndarray]  # int32
    weight_scales: list[float]
    in_scales: list[float]  # int8 input scale per layer; [0] fixed by [-1, 1]
    pre_scales: list[float]  # calibrated pre-activation scale per layer
    activations: list[str]
    zero_points: list[int]  # all zero (symmetric); kept for the wire format

    @property
    def widths(self) -> list[int]:
        return [self.weights_q[0].shape[1]] + [w.shape[0] for w in self.weights_q]


def quantize_tensor(w: np.ndarray) -> tuple[np.ndarray, float]:
    """Symmetric per-tensor int8 quantization; zero tensors get unit scale."""
    peak = float(np.abs(w).max()) if w.size else 0.0
    scale = peak / 127.0 if peak > 0.0 else 1.0
    q = np.clip(np.round(w / scale), -127, 127).astype(np.int8)
    return q, scale


def _activation_peak(name: str, pre_scale: float) -> float:
    lo, hi = -127.0 * pre_scale, 127.0 * pre_scale
    return max(abs(_act(name, np.array(lo))), abs(_act(name, np.array(hi))))


def quantize(policy: Mlp, calibration_obs: np.ndarray) -> QuantizedPolicy:
    """Build the int8 model, calibrating activation ranges on `calibration_obs`
    (entries expected inside [-1, 1])."""
    calib = np.asarray(calibration_obs, dtype=float)
    if calib.ndim != 2 or calib.shape[0] == 0:
        raise ValueError("calibration set must be a non-empty (n, obs) array")
    pres, _ = policy.forward_trace(calib)

    weights_q, biases_q = [], []
    weight_scales, in_scales, pre_scales, activations = [], [], [], []
    in_scale = INPUT_SCALE
    for i, (w, b) in enumerate(zip(policy.weights, policy.biases)):
        act_name = policy.activation_of(i)
        q_w, w_scale = quantize_tensor(w)
        peak_pre = float(np.abs(pres[i]).max())
        if peak_pre == 0.0:
            raise DegenerateCalibrationError(i)
        pre_scale = peak_pre / 127.0
        acc_scale = in_scale * w_scale
        q_b = np.round(b / acc_scale).astype(np.int64)
        if np.any(np.abs(q_b) > np.iinfo(np.int32).max):
            raise DegenerateCalibrationError(i)
        weights_q.append(q_w)
        biases_q.append(q_b.astype(np.int32))
        weight_scales.append(w_scale)
        in_scales.append(in_scale)
        pre_scales.append(pre_scale)
        activations.append(act_name)
        in_scale = _activation_peak(act_name, pre_scale) / 127.0
        if in_scale == 0.0:
            in_scale = INPUT_SCALE  # identity-on-zero guard; next layer sees zeros
    return QuantizedPolicy(
        weights_q=weights_q,
        biases_q=biases_q,
        weight_scales=weight_scales,
        in_scales=in_scales,
        pre_scales=pre_scales,
        activations=activations,
        zero_points=[0] * len(weights_q),
    )


def dequantized_weight(qp: QuantizedPolicy, layer: int) -> np.ndarray:
    return qp.weights_q[layer].astype(float) * qp.weight_scales[layer]


def forward_q(qp: QuantizedPolicy, obs: np.ndarray):
    """Quantized evaluation; scalar action in [-1, 1] for one observation or
    a vector of actions for a batch."""
    x = np.asarray(obs, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != qp.widths[0]:
        raise ValueError(f"observation must have {qp.widths[0]} entries")
    q = np.clip(np.round(x / qp.in_scales[0]), -127, 127).astype(np.int32)
    last = len(qp.weights_q) - 1
    out = None
    for i, (w_q, b_q) in enumerate(zip(qp.weights_q, qp.biases_q)):
        acc = q @ w_q.T.astype(np.int32) + b_q  # int32 inner loops
        a = _act(qp.activations[i], acc * (qp.in_scales[i] * qp.weight_scales[i]))
        if i == last:
            out = a
        else:
            q = np.clip(np.round(a / qp.in_scales[i + 1]), -127, 127).astype(np.int32)
    result = out[:, 0] if out.shape[1] == 1 else out
    return float(result[0]) if single else result


def save_quantized(qp: QuantizedPolicy, path: str | Path, meta: dict | None = None) -> None:
    path = Path(path)
    blob = bytearray()
    blob += MAGIC_QUANT
    blob += struct.pack("<I", len(qp.weights_q))
    for w, b in zip(qp.weights_q, qp.biases_q):
        blob += struct.pack("<II", w.shape[0], w.shape[1])
        blob += np.ascontiguousarray(w, dtype="<i1").tobytes()
        blob += np.ascontiguousarray(b, dtype="<i4").tobytes()
    for name in qp.activations:
        blob += struct.pack("<B", ACTIVATION_IDS[name])
    for i in range(len(qp.weights_q)):
        blob += struct.pack(
            "<dddb", qp.weight_scales[i], qp.in_scales[i], qp.pre_scales[i], qp.zero_points[i]
        )
    path.write_bytes(bytes(blob))
    if meta is not None:
        import json

        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_quantized(path: str | Path) -> QuantizedPolicy:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC_QUANT:
        raise ValueError("not a ROCKQNT1 checkpoint")
    off = 8
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    weights_q, biases_q = [], []
    for _ in range(count):
        rows, cols = struct.unpack_from("<II", raw, off)
        off += 8
        w = np.frombuffer(raw, dtype="<i1", count=rows * cols, offset=off).reshape(rows, cols)
        off += rows * cols
        b = np.frombuffer(raw, dtype="<i4", count=rows, offset=off)
        off += rows * 4
        weights_q.append(w.copy())
        biases_q.append(b.astype(np.int32))
    activations = [ACTIVATION_NAMES[raw[off + i]] for i in range(count)]
    off += count
    weight_scales, in_scales, pre_scales, zero_points = [], [], [], []
    for _ in range(count):
        ws, ins, ps, zp = struct.unpack_from("<dddb", raw, off)
        off += struct.calcsize("<ddb") + 8
        weight_scales.append(ws)
        in_scales.append(ins)
        pre_scales.append(ps)
        zero_points.append(zp)
    return QuantizedPolicy(
        weights_q=weights_q,
        biases_q=biases_q,
        weight_scales=weight_scales,
        in_scales=in_scales,
        pre_scales=pre_scales,
        activations=activations,
        zero_points=zero_points,
    )
