"""Behaviour simulator: bit-exact execution plus a closed-form cycle model.

Cycle model
    mat-vec     ceil(R / lanes) * (C + p_drain)
    GRU step    3 mat-vecs + 2 * d_dep
    LSTM step   4 mat-vecs + 2 * d_dep
    FC layer    1 mat-vec  + d_dep

``lanes`` is ``n_macs`` for 8-bit weights and ``n_macs // 2`` for 16-bit
weights (two 16x8 units pair into one 16x16 MAC). Activation and
element-wise units are pipelined behind the MAC array and only cost
``d_dep`` at data-dependency boundaries. A batch inference runs
``seq_len`` recurrent steps then the trailing FC layers once; a streaming
inference is one recurrent step plus the FC layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activation import ActivationKind, eval_fixed, preactivation_exponent
from .fxp import (
    ACC_BITS, ONE_Q14, Q13, Q14, SatCounter, add_sat_array, dot_saturating, emul_array,
    requantize_array,
)
from .loadable import CompiledLayer, CompiledModel, ExecMode, GateTensor, LayerType


class EngineError(ValueError):
    code = "ENGINE"


class PoolOverflowError(EngineError):
    code = "POOL_OVERFLOW"


class DimensionError(EngineError):
    code = "DIM_MISMATCH"


class ConfigError(EngineError):
    code = "BAD_CONFIG"


@dataclass(frozen=True)
class EngineConfig:
    n_macs: int = 32
    clock_mhz: float = 250.0
    pool_bytes: int = 12288
    weight_mode: str | None = None  # "w8" / "w16"; None follows the model
    p_drain: int = 4
    d_dep: int = 12
    decomp_stall: bool = False  # charge one cycle per pass for compressed weights

    def __post_init__(self):
        n = self.n_macs
        if n < 8 or n & (n - 1):
            raise ConfigError(f"n_macs must be a power of two >= 8, got {n}")
        if self.weight_mode not in (None, "w8", "w16"):
            raise ConfigError(f"weight_mode must be w8 or w16, got {self.weight_mode!r}")
        if self.pool_bytes < 0 or self.p_drain < 0 or self.d_dep < 0:
            raise ConfigError("pool_bytes, p_drain and d_dep must be non-negative")

    def lanes(self, weight_bits: int) -> int:
        return self.n_macs if weight_bits == 8 else self.n_macs // 2

    def to_dict(self) -> dict:
        return {
            "n_macs": self.n_macs,
            "clock_mhz": self.clock_mhz,
            "pool_bytes": self.pool_bytes,
            "weight_mode": self.weight_mode,
            "p_drain": self.p_drain,
            "d_dep": self.d_dep,
            "decomp_stall": self.decomp_stall,
        }


def peak_gops(n_macs: int, clock_mhz: float) -> float:
    return n_macs * clock_mhz * 2 / 1000


def matvec_cycles(rows: int, cols: int, lanes: int, p_drain: int) -> int:
    return -(-rows // lanes) * (cols + p_drain)


# --- reports ----------------------------------------------------------------

_COUNTERS = ("total_cycles", "useful_mac_ops", "weight_bytes_read", "bias_bytes_read",
             "input_bytes_read", "output_bytes_written", "saturation_events")


@dataclass
class LayerReport:
    index: int
    type: str
    total_cycles: int = 0
    useful_mac_ops: int = 0
    weight_bytes_read: int = 0
    bias_bytes_read: int = 0
    input_bytes_read: int = 0
    output_bytes_written: int = 0
    saturation_events: int = 0

    def to_dict(self) -> dict:
        return {"index": self.index, "type": self.type,
                **{k: getattr(self, k) for k in _COUNTERS}}


@dataclass
class SimReport:
    n_macs: int
    clock_mhz: float
    mac_lanes: int
    inferences: int = 0
    total_cycles: int = 0
    useful_mac_ops: int = 0
    weight_bytes_read: int = 0
    bias_bytes_read: int = 0
    input_bytes_read: int = 0
    output_bytes_written: int = 0
    saturation_events: int = 0
    layers: list[LayerReport] = field(default_factory=list)

    @property
    def cycles_per_inference(self) -> float:
        return self.total_cycles / self.inferences if self.inferences else 0.0

    @property
    def utilization(self) -> float:
        """Busy lane-cycles over available lane-cycles (pad lanes count as idle)."""
        if not self.total_cycles:
            return 0.0
        return self.useful_mac_ops / (self.mac_lanes * self.total_cycles)

    @property
    def inferences_per_second(self) -> float:
        cpi = self.cycles_per_inference
        return self.clock_mhz * 1e6 / cpi if cpi else 0.0

    @property
    def peak_gops(self) -> float:
        return peak_gops(self.n_macs, self.clock_mhz)

    @property
    def effective_gops(self) -> float:
        return 2 * self.useful_mac_ops * self.clock_mhz * 1e6 / self.total_cycles / 1e9 \
            if self.total_cycles else 0.0

    def merge(self, other: "SimReport") -> None:
        self.inferences += other.inferences
        for k in _COUNTERS:
            setattr(self, k, getattr(self, k) + getattr(other, k))
        if not self.layers:
            self.layers = [LayerReport(lr.index, lr.type) for lr in other.layers]
        for mine, theirs in zip(self.layers, other.layers):
            for k in _COUNTERS:
                setattr(mine, k, getattr(mine, k) + getattr(theirs, k))

    def to_dict(self) -> dict:
        return {
            "n_macs": self.n_macs,
            "clock_mhz": self.clock_mhz,
            "mac_lanes": self.mac_lanes,
            "inferences": self.inferences,
            "total_cycles": self.total_cycles,
            "cycles_per_inference": self.cycles_per_inference,
            "useful_mac_ops": self.useful_mac_ops,
            "utilization": self.utilization,
            "inferences_per_second": self.inferences_per_second,
            "peak_gops": self.peak_gops,
            "effective_gops": self.effective_gops,
            "weight_bytes_read": self.weight_bytes_read,
            "bias_bytes_read": self.bias_bytes_read,
            "input_bytes_read": self.input_bytes_read,
            "output_bytes_written": self.output_bytes_written,
            "saturation_events": self.saturation_events,
            "layers": [lr.to_dict() for lr in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimReport":
        rep = cls(d["n_macs"], d["clock_mhz"], d["mac_lanes"], d["inferences"],
                  **{k: d[k] for k in _COUNTERS})
        rep.layers = [LayerReport(lr["index"], lr["type"], **{k: lr[k] for k in _COUNTERS})
                      for lr in d["layers"]]
        return rep


# --- datapath ---------------------------------------------------------------


class _Tally:
    """Per-layer counters for one call."""

    def __init__(self, report: LayerReport, cfg: EngineConfig, weight_bits: int):
        self.rep = report
        self.cfg = cfg
        self.bits = weight_bits
        self.lanes = cfg.lanes(weight_bits)
        self.sat = SatCounter()

    def matvec(self, gate: GateTensor, invec: np.ndarray) -> np.ndarray:
        acc, cycles = matvec(gate, invec, self.cfg, self.bits, self.sat)
        rows, cols = gate.weights.shape
        self.rep.total_cycles += cycles
        self.rep.useful_mac_ops += rows * cols
        if gate.blob is not None:
            self.rep.weight_bytes_read += gate.blob.codebook_bytes + len(gate.blob.payload)
        else:
            self.rep.weight_bytes_read += rows * cols * self.bits // 8
        self.rep.bias_bytes_read += 4 * rows
        return acc

    def activate(self, gate: GateTensor, acc: np.ndarray, kind: ActivationKind) -> np.ndarray:
        e_pre = preactivation_exponent(kind)
        pre = requantize_array(acc, e_pre - gate.e_acc, 16, self.sat)
        return eval_fixed(kind, pre, e_pre)

    def boundary(self, n: int = 1) -> None:
        self.rep.total_cycles += n * self.cfg.d_dep

    def close(self) -> None:
        self.rep.saturation_events += self.sat.count
        self.sat = SatCounter()


def matvec(gate: GateTensor, invec: np.ndarray, cfg: EngineConfig, weight_bits: int,
           counter: SatCounter | None = None) -> tuple[np.ndarray, int]:
    """Fused gate mat-vec: accumulators (bias first, then columns in order) and cycles."""
    rows, cols = gate.weights.shape
    if invec.shape != (cols,):
        raise DimensionError(f"mat-vec input length {invec.shape} != {cols}")
    acc = dot_saturating(gate.weights.data, invec, gate.bias.data, ACC_BITS[weight_bits], counter)
    lanes = cfg.lanes(weight_bits)
    cycles = matvec_cycles(rows, cols, lanes, cfg.p_drain)
    if cfg.decomp_stall and gate.blob is not None:
        cycles += -(-rows // lanes)
    return acc, cycles


def step_gru(layer: CompiledLayer, x: np.ndarray, h: np.ndarray, t: _Tally) -> np.ndarray:
    gz, gr, gh = layer.gates
    xh = np.concatenate([x, h])
    z = t.activate(gz, t.matvec(gz, xh), ActivationKind.SIGMOID)
    r = t.activate(gr, t.matvec(gr, xh), ActivationKind.SIGMOID)
    t.boundary()  # r must settle before the candidate mat-vec
    rh = emul_array(r, h, 14, t.sat)
    cand = t.activate(gh, t.matvec(gh, np.concatenate([x, rh])), ActivationKind.TANH)
    t.boundary()  # candidate -> state update
    keep = emul_array(z, h, 14, t.sat)
    new = emul_array(ONE_Q14 - z, cand, 14, t.sat)
    return add_sat_array(new, keep, 16, t.sat)


def step_lstm(layer: CompiledLayer, x: np.ndarray, h: np.ndarray, c: np.ndarray,
              t: _Tally) -> tuple[np.ndarray, np.ndarray]:
    gi, gf, gg, go = layer.gates
    xh = np.concatenate([x, h])
    i = t.activate(gi, t.matvec(gi, xh), ActivationKind.SIGMOID)
    f = t.activate(gf, t.matvec(gf, xh), ActivationKind.SIGMOID)
    g = t.activate(gg, t.matvec(gg, xh), ActivationKind.TANH)
    o = t.activate(go, t.matvec(go, xh), ActivationKind.SIGMOID)
    t.boundary()  # gates -> cell update
    # c is Q2.13: f*c keeps c's scale, i*g (Q1.14 * Q1.14) needs one extra bit of shift
    c_new = add_sat_array(emul_array(f, c, 14, t.sat), emul_array(i, g, 15, t.sat), 16, t.sat)
    t.boundary()  # cell -> output
    h_new = emul_array(o, eval_fixed(ActivationKind.TANH, c_new, Q13), 14, t.sat)
    return h_new, c_new


def run_fc(layer: CompiledLayer, x: np.ndarray, t: _Tally) -> tuple[np.ndarray, np.ndarray]:
    """Q1.14 outputs plus the raw accumulators (exponent ``gate.e_acc``)."""
    gate = layer.gates[0]
    acc = t.matvec(gate, x)
    out = t.activate(gate, acc, layer.activation)
    t.boundary()
    return out, acc


# --- sessions ---------------------------------------------------------------


@dataclass
class InferenceResult:
    outputs: np.ndarray  # int16 Q1.14 of the last layer, last inference
    logits: np.ndarray | None  # raw accumulators of a final FC layer, one row per inference
    logit_exponent: int | None
    layer_outputs: list[np.ndarray]  # per layer, one row per produced vector
    report: SimReport
    final_kind: ActivationKind | None = None

    def final_real(self) -> np.ndarray:
        """Dequantized network output; identity FC heads use the unsaturated accumulators."""
        return self.head_real()[-1]

    def head_real(self) -> np.ndarray:
        """Dequantized last-layer output for every inference of the call."""
        if self.logits is not None and self.final_kind is ActivationKind.IDENTITY:
            return np.ldexp(self.logits.astype(np.float64), self.logit_exponent)
        return self.layer_outputs[-1] / ONE_Q14


class Session:
    """Persistent recurrent state for one resident model."""

    def __init__(self, engine: "Engine", model: CompiledModel):
        self.engine = engine
        self.model = model
        self.h: list[np.ndarray | None] = []
        self.c: list[np.ndarray | None] = []
        self.reset()

    @property
    def state_bytes(self) -> int:
        return self.model.state_bytes

    def reset(self) -> None:
        self.h = [np.zeros(layer.output_dim, dtype=np.int64) if layer.type.recurrent else None
                  for layer in self.model.layers]
        self.c = [np.zeros(layer.output_dim, dtype=np.int64) if layer.type is LayerType.LSTM
                  else None for layer in self.model.layers]

    def set_state(self, layer: int, h=None, c=None) -> None:
        """Inject Q1.14 hidden and/or Q2.13 cell state."""
        dim = self.model.layers[layer].output_dim
        if h is not None:
            h = np.asarray(h, dtype=np.int64)
            if h.shape != (dim,) or self.h[layer] is None:
                raise DimensionError(f"layer {layer}: hidden state shape {h.shape}")
            self.h[layer] = np.clip(h, -32768, 32767)
        if c is not None:
            c = np.asarray(c, dtype=np.int64)
            if c.shape != (dim,) or self.c[layer] is None:
                raise DimensionError(f"layer {layer}: cell state shape {c.shape}")
            self.c[layer] = np.clip(c, -32768, 32767)

    def run(self, inputs, e_in: int = Q14) -> InferenceResult:
        return self.engine.run(self, inputs, e_in)


class Engine:
    """A configured MAC array with a local memory pool shared by resident sessions."""

    def __init__(self, config: EngineConfig | None = None):
        self.config = config or EngineConfig()
        self.sessions: list[Session] = []

    @property
    def resident_bytes(self) -> int:
        return sum(s.state_bytes for s in self.sessions)

    def open_session(self, model: CompiledModel) -> Session:
        mode = self.config.weight_mode
        if mode is not None and mode != f"w{model.weight_bits}":
            raise ConfigError(f"engine is in {mode} mode, model has {model.weight_bits}-bit weights")
        need = self.resident_bytes + model.state_bytes
        if need > self.config.pool_bytes:
            raise PoolOverflowError(f"state needs {need} bytes, pool has {self.config.pool_bytes}")
        session = Session(self, model)
        self.sessions.append(session)
        return session

    def close_session(self, session: Session) -> None:
        self.sessions.remove(session)

    def _new_report(self, model: CompiledModel) -> SimReport:
        cfg = self.config
        rep = SimReport(cfg.n_macs, cfg.clock_mhz, cfg.lanes(model.weight_bits))
        rep.layers = [LayerReport(i, layer.type.name) for i, layer in enumerate(model.layers)]
        return rep

    def run(self, session: Session, inputs, e_in: int = Q14) -> InferenceResult:
        """Batch mode: ``inputs`` is ``seq_len x input_dim``. Streaming mode: each
        row is one inference (one recurrent step plus the FC layers)."""
        if session not in self.sessions:
            raise EngineError("session is not resident on this engine")
        model = session.model
        frames = np.asarray(inputs, dtype=np.int64)
        if frames.ndim == 1:
            frames = frames[None, :]
        if frames.ndim != 2 or frames.shape[1] != model.input_dim or not frames.shape[0]:
            raise DimensionError(f"input shape {np.shape(inputs)} does not match input_dim "
                                 f"{model.input_dim}")
        if model.exec_mode is ExecMode.BATCH and frames.shape[0] != model.seq_len:
            raise DimensionError(f"batch model expects {model.seq_len} frames, got {frames.shape[0]}")
        # inputs are brought to Q1.14 at ingestion so both halves of a fused
        # gate matrix see the same activation exponent
        sat = SatCounter()
        frames = requantize_array(frames, Q14 - e_in, 16, sat)
        report = self._new_report(model)
        report.saturation_events += sat.count
        tallies = [_Tally(lr, self.config, model.weight_bits) for lr in report.layers]
        n_rec = sum(1 for layer in model.layers if layer.type.recurrent)
        traj: list[list[np.ndarray]] = [[] for _ in model.layers]
        logits = []
        out = None
        if model.exec_mode is ExecMode.BATCH:
            groups = [frames]
        else:
            groups = [frames[k:k + 1] for k in range(frames.shape[0])]
        for group in groups:
            for x in group:
                report.input_bytes_read += 2 * model.input_dim
                vec = x
                for li in range(n_rec):
                    vec = self._recurrent(session, li, vec, tallies[li])
                    traj[li].append(vec)
                self._check_pool()
            out = vec
            for li in range(n_rec, len(model.layers)):
                out, acc = run_fc(model.layers[li], out, tallies[li])
                traj[li].append(out)
            if model.layers[-1].type is LayerType.FC:
                logits.append(acc)
            report.output_bytes_written += 2 * model.output_dim
            report.inferences += 1
        for t in tallies:
            t.close()
        for k in _COUNTERS:
            if k in ("input_bytes_read", "output_bytes_written"):
                continue
            setattr(report, k, getattr(report, k) + sum(getattr(lr, k) for lr in report.layers))
        last = model.layers[-1]
        return InferenceResult(
            outputs=out,
            logits=np.array(logits) if logits else None,
            logit_exponent=last.gates[0].e_acc if last.type is LayerType.FC else None,
            layer_outputs=[np.array(rows) for rows in traj],
            report=report,
            final_kind=last.activation if last.type is LayerType.FC else None,
        )

    def _recurrent(self, session: Session, li: int, x: np.ndarray, t: _Tally) -> np.ndarray:
        layer = session.model.layers[li]
        if layer.type is LayerType.GRU:
            session.h[li] = step_gru(layer, x, session.h[li], t)
        else:
            session.h[li], session.c[li] = step_lstm(layer, x, session.h[li], session.c[li], t)
        return session.h[li]

    def _check_pool(self) -> None:
        if self.resident_bytes > self.config.pool_bytes:
            raise PoolOverflowError("resident state exceeds the local memory pool")


def run_inference(model: CompiledModel, inputs, config: EngineConfig | None = None,
                  session: Session | None = None, e_in: int = Q14) -> InferenceResult:
    """One-shot helper: open a session if none is given and run ``inputs``."""
    if session is None:
        session = Engine(config).open_session(model)
    return session.run(inputs, e_in)


def expected_cycles(model: CompiledModel, config: EngineConfig, inferences: int = 1) -> int:
    """Closed-form total cycles for ``inferences`` calls' worth of work."""
    lanes = config.lanes(model.weight_bits)
    rec = fc = 0
    for layer in model.layers:
        rows, cols = layer.gates[0].weights.shape
        mv = matvec_cycles(rows, cols, lanes, config.p_drain)
        if config.decomp_stall and layer.gates[0].blob is not None:
            mv += -(-rows // lanes)
        if layer.type.recurrent:
            rec += layer.type.n_gates * mv + 2 * config.d_dep
        else:
            fc += mv + config.d_dep
    steps = model.seq_len if model.exec_mode is ExecMode.BATCH else 1
    return inferences * (steps * rec + fc)
