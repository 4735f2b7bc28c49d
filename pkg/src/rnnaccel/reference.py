"""Double-precision oracle and the simulator-vs-oracle validation tool.

Gate conventions match the engine exactly: GRU ``(z, r, h~)`` with
``h' = (1 - z) * h~ + z * h`` and the reset gate applied before the
recurrent product; LSTM ``(i, f, g, o)``. The oracle has no cell clip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activation import ActivationKind, eval_real
from .engine import Engine, EngineConfig
from .fxp import ONE_Q14, Q14, quantize
from .loadable import (
    CompiledModel, LayerType, LayerWeights, Manifest, dequantize_layers, manifest_of,
)

DEFAULT_TOLERANCE = 0.01


class TopologyMismatch(ValueError):
    code = "TOPOLOGY_MISMATCH"


def _sigmoid(x):
    return eval_real(ActivationKind.SIGMOID, x)


@dataclass
class FloatModel:
    manifest: Manifest
    weights: list[LayerWeights]

    @classmethod
    def from_compiled(cls, model: CompiledModel) -> "FloatModel":
        """Float model holding exactly the quantized weights (weights-only quantization)."""
        return cls(manifest_of(model), dequantize_layers(model))

    def topology(self) -> list[tuple[str, int, int]]:
        return [(layer.type.name, layer.input_dim, layer.output_dim)
                for layer in self.manifest.layers]


@dataclass
class ForwardResult:
    outputs: np.ndarray  # final layer output for the last inference
    layer_outputs: list[np.ndarray]  # per layer, one row per produced vector
    cells: list[np.ndarray | None]


def forward(model: FloatModel, inputs, h0=None, c0=None) -> ForwardResult:
    """Float forward pass; streaming models apply FC layers after every step.

    ``h0``/``c0`` optionally map layer index to an initial state vector.
    """
    m = model.manifest
    x_seq = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if not np.all(np.isfinite(x_seq)):
        raise ValueError("forward: non-finite input")
    h0, c0 = h0 or {}, c0 or {}
    rec = [i for i, layer in enumerate(m.layers) if layer.type.recurrent]
    h = {i: np.asarray(h0.get(i, np.zeros(m.layers[i].output_dim)), dtype=np.float64)
         for i in rec}
    c = {i: np.asarray(c0.get(i, np.zeros(m.layers[i].output_dim)), dtype=np.float64)
         for i in rec if m.layers[i].type is LayerType.LSTM}
    traj: list[list[np.ndarray]] = [[] for _ in m.layers]
    cells: list[list[np.ndarray]] = [[] for _ in m.layers]
    streaming = m.exec_mode.name == "STREAMING"
    out = None

    def heads(vec):
        for li in range(len(rec), len(m.layers)):
            layer, lw = m.layers[li], model.weights[li]
            vec = eval_real(layer.activation, lw.gates[0] @ vec + lw.biases[0])
            traj[li].append(vec)
        return vec

    for x in x_seq:
        vec = x
        for li in rec:
            layer, lw = m.layers[li], model.weights[li]
            if layer.type is LayerType.GRU:
                h[li] = _gru_step(lw, vec, h[li])
            else:
                h[li], c[li] = _lstm_step(lw, vec, h[li], c[li])
                cells[li].append(c[li])
            traj[li].append(h[li])
            vec = h[li]
        if streaming:
            out = heads(vec)
    if not streaming:
        out = heads(vec)
    for rows in traj:
        if rows and not np.all(np.isfinite(rows)):
            raise ValueError("forward: non-finite intermediate value")
    return ForwardResult(out, [np.array(r) for r in traj],
                         [np.array(r) if r else None for r in cells])


def _gru_step(lw: LayerWeights, x, h):
    wz, wr, wh = lw.gates
    bz, br, bh = lw.biases
    xh = np.concatenate([x, h])
    z = _sigmoid(wz @ xh + bz)
    r = _sigmoid(wr @ xh + br)
    cand = np.tanh(wh @ np.concatenate([x, r * h]) + bh)
    return (1 - z) * cand + z * h


def _lstm_step(lw: LayerWeights, x, h, c):
    wi, wf, wg, wo = lw.gates
    bi, bf, bg, bo = lw.biases
    xh = np.concatenate([x, h])
    i = _sigmoid(wi @ xh + bi)
    f = _sigmoid(wf @ xh + bf)
    g = np.tanh(wg @ xh + bg)
    o = _sigmoid(wo @ xh + bo)
    c = f * c + i * g
    return o * np.tanh(c), c


# --- validation -------------------------------------------------------------


@dataclass
class LayerError:
    index: int
    type: str
    max_abs_error: float
    rms_error: float
    count: int

    def to_dict(self) -> dict:
        return {"index": self.index, "type": self.type, "max_abs_error": self.max_abs_error,
                "rms_error": self.rms_error, "count": self.count}


@dataclass
class ValidationReport:
    layers: list[LayerError]
    max_abs_error: float
    rms_error: float
    count: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_error <= self.tolerance

    @property
    def worst_layer(self) -> int:
        return max(self.layers, key=lambda e: e.max_abs_error).index

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "max_abs_error": self.max_abs_error,
            "rms_error": self.rms_error,
            "count": self.count,
            "layers": [e.to_dict() for e in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ValidationReport":
        layers = [LayerError(e["index"], e["type"], e["max_abs_error"], e["rms_error"],
                             e["count"]) for e in d["layers"]]
        return cls(layers, d["max_abs_error"], d["rms_error"], d["count"], d["tolerance"])


def _errors(got: np.ndarray, want: np.ndarray) -> tuple[float, float, int]:
    diff = np.abs(np.asarray(got, dtype=np.float64) - np.asarray(want, dtype=np.float64))
    if not diff.size:
        return 0.0, 0.0, 0
    return float(diff.max()), float(np.sqrt(np.mean(diff ** 2))), int(diff.size)


def quantize_inputs(inputs) -> np.ndarray:
    """Real input frames to saturating Q1.14."""
    return quantize(np.atleast_2d(inputs), Q14, 16)


def validate(compiled: CompiledModel, float_model: FloatModel, inputs,
             config: EngineConfig | None = None,
             tolerance: float = DEFAULT_TOLERANCE) -> ValidationReport:
    """Run simulator and oracle on the same real input and compare."""
    if compiled.topology() != float_model.topology():
        raise TopologyMismatch(f"compiled {compiled.topology()} vs float {float_model.topology()}")
    m = float_model.manifest
    if (m.seq_len, m.exec_mode) != (compiled.seq_len, compiled.exec_mode):
        float_model = FloatModel(m.with_options(seq_len=compiled.seq_len,
                                                exec_mode=compiled.exec_mode),
                                 float_model.weights)
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    engine = Engine(config or EngineConfig())
    result = engine.open_session(compiled).run(quantize_inputs(x))
    oracle = forward(float_model, x)
    layers = []
    for li, layer in enumerate(compiled.layers):
        if li == len(compiled.layers) - 1:
            got = result.head_real()
        else:
            got = result.layer_outputs[li] / ONE_Q14
        want = oracle.layer_outputs[li]
        mx, rms, n = _errors(got, want)
        layers.append(LayerError(li, layer.type.name, mx, rms, n))
    mx, rms, n = _errors(result.final_real(), oracle.outputs)
    return ValidationReport(layers, mx, rms, n, tolerance)
