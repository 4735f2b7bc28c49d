"""Model manifest parsing, compilation and the binary loadable container.

Loadable layout, all fields little-endian::

    header (16 B)
        u32 magic 0x414E4E52 ("RNNA")   u16 version (1)
        u8  weight_bits                  u8  compression_b (0 = none)
        u16 n_layers                     u16 seq_len
        u8  exec_mode (0 batch, 1 streaming)
        u8  reserved                     u16 n_tensors
    layer table (32 B per layer)
        u8 type (0 FC, 1 GRU, 2 LSTM)   u8 activation
        u16 input_dim                    u16 output_dim
        u16 x 4 gate weight tensor indices (0xFFFF = unused)
        u16 first bias tensor index (biases of all gates are consecutive)
        u16 reserved (0xFFFF), 14 B padding
    tensor table (16 B per tensor)
        u32 offset (absolute)   u32 length   u16 rows   u16 cols
        u8 kind (0 weight, 1 bias)   i8 exponent
        u8 encoding (0 raw, 1 compressed blob)   u8 reserved
    blob section
        raw int8/int16 weights, int32 biases, or compressed blobs

Gate order is (z, r, h~) for GRU and (i, f, g, o) for LSTM; each
recurrent gate matrix is ``output_dim x (input_dim + output_dim)`` with the
input columns first.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codec
from .activation import ActivationKind
from .fxp import Q14, QFormat, QTensor, choose_exponent, lane_max, quantize

MAGIC = 0x414E4E52
VERSION = 1
MAX_DIM = 4096
MAX_SEQ = 1024
NO_TENSOR = 0xFFFF

HEADER = struct.Struct("<IHBBHHBBH")
LAYER = struct.Struct("<BBHH6H14x")
TENSOR = struct.Struct("<IIHHBbBB")
assert HEADER.size == 16 and LAYER.size == 32 and TENSOR.size == 16


class LayerType(enum.IntEnum):
    FC = 0
    GRU = 1
    LSTM = 2

    @property
    def n_gates(self) -> int:
        return {LayerType.FC: 1, LayerType.GRU: 3, LayerType.LSTM: 4}[self]

    @property
    def recurrent(self) -> bool:
        return self is not LayerType.FC


class ExecMode(enum.IntEnum):
    BATCH = 0
    STREAMING = 1


GATE_ACTIVATIONS = {
    LayerType.GRU: (ActivationKind.SIGMOID, ActivationKind.SIGMOID, ActivationKind.TANH),
    LayerType.LSTM: (ActivationKind.SIGMOID, ActivationKind.SIGMOID, ActivationKind.TANH,
                     ActivationKind.SIGMOID),
}


def param_count(ltype: LayerType, input_dim: int, output_dim: int) -> int:
    if ltype is LayerType.FC:
        return output_dim * input_dim + output_dim
    h, i = output_dim, input_dim
    return ltype.n_gates * (h * (h + i) + h)


def weight_shape(ltype: LayerType, input_dim: int, output_dim: int) -> tuple[int, int]:
    if ltype is LayerType.FC:
        return output_dim, input_dim
    return output_dim, input_dim + output_dim


# --- errors ---------------------------------------------------------------


class ManifestError(ValueError):
    def __init__(self, code: str, message: str, layer: int | None = None):
        where = f"layer {layer}: " if layer is not None else ""
        super().__init__(where + message)
        self.code = code
        self.layer = layer


class CompileError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class LoadableError(ValueError):
    code = "LOADABLE"


class BadMagic(LoadableError):
    code = "BAD_MAGIC"


class UnsupportedVersion(LoadableError):
    code = "UNSUPPORTED_VERSION"


class OutOfBounds(LoadableError):
    code = "OUT_OF_BOUNDS"


class CorruptBlob(LoadableError):
    code = "CORRUPT_BLOB"


class InvalidLayout(LoadableError):
    code = "INVALID_LAYOUT"


# --- manifest -------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    type: LayerType
    input_dim: int
    output_dim: int
    activation: ActivationKind = ActivationKind.TANH
    weights: tuple[str, ...] = ()
    bias: tuple[str, ...] = ()

    @property
    def n_params(self) -> int:
        return param_count(self.type, self.input_dim, self.output_dim)


@dataclass(frozen=True)
class Manifest:
    network: str
    layers: tuple[LayerSpec, ...]
    seq_len: int = 1
    exec_mode: ExecMode = ExecMode.BATCH
    weight_bits: int = 8
    compression: int | None = None

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def with_options(self, **changes) -> "Manifest":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return Manifest(**fields)

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            d = {"type": layer.type.name, "input_dim": layer.input_dim,
                 "output_dim": layer.output_dim}
            if layer.type is LayerType.FC:
                d["activation"] = layer.activation.name.lower()
            d["weights"] = list(layer.weights)
            d["bias"] = list(layer.bias)
            layers.append(d)
        return {
            "network": self.network,
            "layers": layers,
            "seq_len": self.seq_len,
            "exec_mode": self.exec_mode.name.lower(),
            "weight_bits": self.weight_bits,
            "compression": "none" if self.compression is None else self.compression,
        }


@dataclass
class LayerWeights:
    """Float gate matrices and bias vectors for one layer, in gate order."""

    gates: list[np.ndarray]
    biases: list[np.ndarray]


def _as_list(value) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        return (value,)
    return tuple(str(v) for v in value)


def _int_field(d: dict, key: str, layer: int | None, default=None) -> int:
    if key not in d:
        if default is None:
            raise ManifestError("MISSING_FIELD", f"missing field {key!r}", layer)
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ManifestError("BAD_FIELD", f"field {key!r} must be an integer", layer)
    return v


def validate_manifest(m: Manifest) -> None:
    """Structural checks that need no weight data."""
    if not m.layers:
        raise ManifestError("NO_LAYERS", "manifest has no layers")
    if m.weight_bits not in (8, 16):
        raise ManifestError("BAD_FIELD", f"weight_bits must be 8 or 16, got {m.weight_bits}")
    if m.compression is not None and m.compression not in codec.INDEX_BITS:
        raise ManifestError("BAD_FIELD", "compression must be none, 2, 4 or 6")
    if not 1 <= m.seq_len <= MAX_SEQ:
        raise ManifestError("BAD_FIELD", f"seq_len out of range [1, {MAX_SEQ}]")
    seen_fc = False
    for i, layer in enumerate(m.layers):
        if not (1 <= layer.input_dim <= MAX_DIM and 1 <= layer.output_dim <= MAX_DIM):
            raise ManifestError("DIMS", "dims out of range", i)
        if i and m.layers[i - 1].output_dim != layer.input_dim:
            raise ManifestError(
                "CHAIN", f"input_dim {layer.input_dim} does not match previous "
                         f"output_dim {m.layers[i - 1].output_dim}", i)
        if layer.type.recurrent and seen_fc:
            raise ManifestError("ORDER", "recurrent layer after an FC layer", i)
        seen_fc |= layer.type is LayerType.FC
        if layer.type.recurrent and layer.activation is not ActivationKind.TANH:
            raise ManifestError("BAD_ACTIVATION", "recurrent layers use fixed gate activations", i)
        if layer.weights and len(layer.weights) != layer.type.n_gates:
            raise ManifestError("WEIGHT_REFS", f"expected {layer.type.n_gates} weight files, "
                                               f"got {len(layer.weights)}", i)
        if layer.bias and len(layer.bias) != layer.type.n_gates:
            raise ManifestError("WEIGHT_REFS", f"expected {layer.type.n_gates} bias files, "
                                               f"got {len(layer.bias)}", i)


def manifest_from_dict(d: dict) -> Manifest:
    if not isinstance(d, dict):
        raise ManifestError("SYNTAX", "manifest must be an object")
    raw_layers = d.get("layers")
    if not isinstance(raw_layers, list):
        raise ManifestError("MISSING_FIELD", "missing field 'layers'")
    layers = []
    for i, ld in enumerate(raw_layers):
        if not isinstance(ld, dict):
            raise ManifestError("SYNTAX", "layer entry must be an object", i)
        tname = str(ld.get("type", "")).upper()
        if tname not in LayerType.__members__:
            raise ManifestError("UNKNOWN_TYPE", f"unknown layer type {ld.get('type')!r}", i)
        ltype = LayerType[tname]
        if ltype is LayerType.FC:
            try:
                act = ActivationKind.parse(str(ld.get("activation", "identity")))
            except ValueError:
                raise ManifestError("UNKNOWN_ACTIVATION",
                                    f"unknown activation {ld.get('activation')!r}", i) from None
        else:
            if "activation" in ld and str(ld["activation"]).lower() != "tanh":
                raise ManifestError("UNKNOWN_ACTIVATION",
                                    "recurrent layers do not take an activation", i)
            act = ActivationKind.TANH
        layers.append(LayerSpec(ltype, _int_field(ld, "input_dim", i),
                                _int_field(ld, "output_dim", i), act,
                                _as_list(ld.get("weights")), _as_list(ld.get("bias"))))
    mode = str(d.get("exec_mode", "batch")).lower()
    if mode not in ("batch", "streaming"):
        raise ManifestError("BAD_FIELD", f"exec_mode must be batch or streaming, got {mode!r}")
    try:
        comp = codec.parse_mode(d.get("compression", "none"))
    except ValueError as exc:
        raise ManifestError("BAD_FIELD", str(exc)) from None
    m = Manifest(
        network=str(d.get("network", "unnamed")),
        layers=tuple(layers),
        seq_len=_int_field(d, "seq_len", None, 1),
        exec_mode=ExecMode.STREAMING if mode == "streaming" else ExecMode.BATCH,
        weight_bits=_int_field(d, "weight_bits", None, 8),
        compression=comp,
    )
    validate_manifest(m)
    return m


def parse_manifest(text: str, base_dir: str | Path | None = None) -> Manifest:
    """Parse JSON manifest text; with ``base_dir`` also check every weight file."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError("SYNTAX", f"invalid JSON: {exc}") from None
    m = manifest_from_dict(d)
    if base_dir is not None:
        check_weight_files(m, base_dir)
    return m


def _file_specs(m: Manifest):
    for i, layer in enumerate(m.layers):
        if not layer.weights or not layer.bias:
            raise ManifestError("WEIGHT_REFS", "weights and bias file lists are required", i)
        rows, cols = weight_shape(layer.type, layer.input_dim, layer.output_dim)
        for ref in layer.weights:
            yield i, ref, rows, cols
        for ref in layer.bias:
            yield i, ref, layer.output_dim, 1


def check_weight_files(m: Manifest, base_dir: str | Path) -> None:
    base = Path(base_dir)
    for i, ref, rows, cols in _file_specs(m):
        path = base / ref
        if not path.is_file():
            raise ManifestError("MISSING_FILE", f"missing weight file {ref}", i)
        size = path.stat().st_size
        if size != 4 * rows * cols:
            raise ManifestError("FILE_SIZE", f"{ref} has {size} bytes, expected "
                                             f"{4 * rows * cols} ({rows}x{cols} float32)", i)


def read_weights(m: Manifest, base_dir: str | Path) -> list[LayerWeights]:
    check_weight_files(m, base_dir)
    base = Path(base_dir)
    out = []
    for layer in m.layers:
        rows, cols = weight_shape(layer.type, layer.input_dim, layer.output_dim)
        gates = [np.fromfile(base / r, dtype="<f4").astype(np.float64).reshape(rows, cols)
                 for r in layer.weights]
        biases = [np.fromfile(base / r, dtype="<f4").astype(np.float64) for r in layer.bias]
        out.append(LayerWeights(gates, biases))
    return out


def write_model(m: Manifest, weights: list[LayerWeights], directory: str | Path) -> Path:
    """Write a manifest plus float32 weight files; file names are derived from layer indices."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layers = []
    for i, (layer, lw) in enumerate(zip(m.layers, weights)):
        wrefs, brefs = [], []
        for g, (w, b) in enumerate(zip(lw.gates, lw.biases)):
            wref, bref = f"l{i}_g{g}_w.f32", f"l{i}_g{g}_b.f32"
            np.asarray(w, dtype="<f4").tofile(directory / wref)
            np.asarray(b, dtype="<f4").tofile(directory / bref)
            wrefs.append(wref)
            brefs.append(bref)
        layers.append(LayerSpec(layer.type, layer.input_dim, layer.output_dim,
                                layer.activation, tuple(wrefs), tuple(brefs)))
    m = m.with_options(layers=tuple(layers))
    path = directory / "manifest.json"
    path.write_text(json.dumps(m.to_dict(), indent=2) + "\n")
    return path


# --- compiled model -------------------------------------------------------


@dataclass(frozen=True)
class GateTensor:
    weights: QTensor  # rows x cols
    bias: QTensor  # 32-bit at the accumulator exponent
    blob: codec.CompressedBlob | None = None

    @property
    def e_w(self) -> int:
        return self.weights.fmt.exponent

    @property
    def e_acc(self) -> int:
        return self.bias.fmt.exponent


@dataclass(frozen=True)
class CompiledLayer:
    type: LayerType
    input_dim: int
    output_dim: int
    activation: ActivationKind
    gates: tuple[GateTensor, ...]

    @property
    def gate_activations(self) -> tuple[ActivationKind, ...]:
        if self.type is LayerType.FC:
            return (self.activation,)
        return GATE_ACTIVATIONS[self.type]

    @property
    def n_params(self) -> int:
        return param_count(self.type, self.input_dim, self.output_dim)

    @property
    def state_words(self) -> int:
        """int16 words of persistent state (h, plus c for LSTM)."""
        if self.type is LayerType.GRU:
            return self.output_dim
        if self.type is LayerType.LSTM:
            return 2 * self.output_dim
        return 0


@dataclass(frozen=True)
class CompiledModel:
    layers: tuple[CompiledLayer, ...]
    seq_len: int
    exec_mode: ExecMode
    weight_bits: int
    compression: int | None
    network: str = field(default="", compare=False)

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    @property
    def state_bytes(self) -> int:
        return 2 * sum(layer.state_words for layer in self.layers)

    def topology(self) -> list[tuple[str, int, int]]:
        return [(layer.type.name, layer.input_dim, layer.output_dim) for layer in self.layers]

    def exponents(self) -> list[list[int]]:
        return [[g.e_w for g in layer.gates] for layer in self.layers]

    def blobs(self) -> list[codec.CompressedBlob]:
        return [g.blob for layer in self.layers for g in layer.gates if g.blob is not None]


def _quantize_gate(w: np.ndarray, b: np.ndarray, bits: int, comp: int | None,
                   where: str) -> GateTensor:
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
        raise CompileError("NON_FINITE", f"{where}: non-finite weights")
    blob = None
    if comp is None:
        e_w = choose_exponent(w, bits)
        ints = quantize(w, e_w, bits)
    else:
        try:
            blob = codec.compress(w, comp, bits)
        except ValueError as exc:
            raise CompileError("EXPONENT_RANGE", f"{where}: {exc}") from None
        e_w = blob.e_w
        ints = codec.decompress(blob)[0].reshape(w.shape)
    if not -128 <= e_w <= 127 or not -128 <= e_w + Q14 <= 127:
        raise CompileError("EXPONENT_RANGE", f"{where}: weight exponent {e_w} outside int8")
    e_acc = Q14 + e_w
    scaled = np.rint(np.ldexp(b, -e_acc))
    if np.any(np.abs(scaled) > lane_max(32)):
        raise CompileError("BIAS_ALIGNMENT", f"{where}: bias does not fit int32 at "
                                             f"accumulator exponent {e_acc}")
    return GateTensor(QTensor(ints, QFormat(bits, e_w)),
                      QTensor(scaled.astype(np.int64), QFormat(32, e_acc)), blob)


def build(m: Manifest, weights: list[LayerWeights]) -> CompiledModel:
    """Quantize (or compress) float weights into a :class:`CompiledModel`."""
    validate_manifest(m)
    if len(weights) != len(m.layers):
        raise CompileError("WEIGHTS", f"{len(weights)} weight sets for {len(m.layers)} layers")
    layers = []
    for i, (spec, lw) in enumerate(zip(m.layers, weights)):
        shape = weight_shape(spec.type, spec.input_dim, spec.output_dim)
        if len(lw.gates) != spec.type.n_gates or len(lw.biases) != spec.type.n_gates:
            raise CompileError("WEIGHTS", f"layer {i}: expected {spec.type.n_gates} gates")
        gates = []
        for g, (w, b) in enumerate(zip(lw.gates, lw.biases)):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64).ravel()
            if w.shape != shape or b.shape != (spec.output_dim,):
                raise CompileError("WEIGHTS", f"layer {i} gate {g}: shape {w.shape}/{b.shape}, "
                                              f"expected {shape}/({spec.output_dim},)")
            gates.append(_quantize_gate(w, b, m.weight_bits, m.compression,
                                        f"layer {i} gate {g}"))
        layers.append(CompiledLayer(spec.type, spec.input_dim, spec.output_dim,
                                    spec.activation, tuple(gates)))
    return CompiledModel(tuple(layers), m.seq_len, m.exec_mode, m.weight_bits,
                         m.compression, m.network)


def emit(model: CompiledModel) -> bytes:
    """Serialize a compiled model; the output is a pure function of the model."""
    wdtype = "<i1" if model.weight_bits == 8 else "<i2"
    records: list[tuple[bytes, int, int, int, int, int]] = []  # data, rows, cols, kind, e, enc
    layer_recs = []
    for layer in model.layers:
        slots = [NO_TENSOR] * 6
        for g, gate in enumerate(layer.gates):
            slots[g] = len(records)
            rows, cols = gate.weights.shape
            if gate.blob is not None:
                records.append((gate.blob.to_bytes(), rows, cols, 0, gate.e_w, 1))
            else:
                records.append((gate.weights.data.astype(wdtype).tobytes(), rows, cols, 0,
                                gate.e_w, 0))
        slots[4] = len(records)
        for gate in layer.gates:
            records.append((gate.bias.data.astype("<i4").tobytes(), layer.output_dim, 1, 1,
                            gate.e_acc, 0))
        layer_recs.append(LAYER.pack(layer.type, layer.activation, layer.input_dim,
                                     layer.output_dim, *slots))
    n_layers, n_tensors = len(layer_recs), len(records)
    offset = HEADER.size + LAYER.size * n_layers + TENSOR.size * n_tensors
    header = HEADER.pack(MAGIC, VERSION, model.weight_bits, model.compression or 0,
                         n_layers, model.seq_len, model.exec_mode, 0, n_tensors)
    table, blobs = [], []
    for data, rows, cols, kind, e, enc in records:
        table.append(TENSOR.pack(offset, len(data), rows, cols, kind, e, enc, 0))
        blobs.append(data)
        offset += len(data)
    return header + b"".join(layer_recs) + b"".join(table) + b"".join(blobs)


def compile(m: Manifest, weights: list[LayerWeights]) -> bytes:  # noqa: A001
    return emit(build(m, weights))


def compile_file(manifest_path: str | Path) -> tuple[Manifest, list[LayerWeights], bytes]:
    path = Path(manifest_path)
    m = parse_manifest(path.read_text(), path.parent)
    weights = read_weights(m, path.parent)
    return m, weights, compile(m, weights)


# --- loader -----------------------------------------------------------------


def _decode_tensor(data: bytes, idx: int, rec, model_bits: int, comp: int) -> tuple[QTensor, codec.CompressedBlob | None]:
    offset, length, rows, cols, kind, e, enc, _ = rec
    if rows == 0 or cols == 0:
        raise InvalidLayout(f"tensor {idx}: empty shape {rows}x{cols}")
    n = rows * cols
    chunk = data[offset:offset + length]
    if kind == 1:
        if enc != 0 or length != 4 * n:
            raise InvalidLayout(f"tensor {idx}: bias must be raw int32, {4 * n} bytes")
        return QTensor(np.frombuffer(chunk, dtype="<i4").astype(np.int64), QFormat(32, e)), None
    if enc == 0:
        if comp:
            raise InvalidLayout(f"tensor {idx}: raw weights in a compressed loadable")
        if length != n * model_bits // 8:
            raise InvalidLayout(f"tensor {idx}: raw length {length} != {n * model_bits // 8}")
        dtype = "<i1" if model_bits == 8 else "<i2"
        ints = np.frombuffer(chunk, dtype=dtype).astype(np.int64).reshape(rows, cols)
        return QTensor(ints, QFormat(model_bits, e)), None
    if enc != 1 or not comp:
        raise InvalidLayout(f"tensor {idx}: unknown encoding {enc} for this loadable")
    try:
        blob = codec.CompressedBlob.from_bytes(chunk)
        ints, e_w = codec.decompress(blob)
    except codec.BlobError as exc:
        raise CorruptBlob(f"tensor {idx}: {exc}") from None
    if blob.n != n or blob.b != comp or blob.entry_width != model_bits or e_w != e:
        raise CorruptBlob(f"tensor {idx}: blob header disagrees with tensor table")
    return QTensor(ints.reshape(rows, cols), QFormat(model_bits, e)), blob


def load(data: bytes) -> CompiledModel:
    """Validate and decode a loadable. Raises a :class:`LoadableError` subclass on any defect."""
    data = bytes(data)
    if len(data) < 4 or struct.unpack_from("<I", data)[0] != MAGIC:
        raise BadMagic("not an RNNA loadable")
    if len(data) < HEADER.size:
        raise OutOfBounds("header truncated")
    (_, version, bits, comp, n_layers, seq_len, mode, _, n_tensors) = HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersion(f"loadable version {version}, expected {VERSION}")
    if bits not in (8, 16):
        raise InvalidLayout(f"weight_bits {bits}")
    if comp not in (0, *codec.INDEX_BITS):
        raise InvalidLayout(f"compression_b {comp}")
    if mode not in (0, 1):
        raise InvalidLayout(f"exec_mode {mode}")
    if not 1 <= seq_len <= MAX_SEQ:
        raise InvalidLayout(f"seq_len {seq_len}")
    if n_layers == 0:
        raise InvalidLayout("no layers")
    tables_end = HEADER.size + LAYER.size * n_layers + TENSOR.size * n_tensors
    if tables_end > len(data):
        raise OutOfBounds("layer/tensor tables extend past end of file")
    trecs = [TENSOR.unpack_from(data, HEADER.size + LAYER.size * n_layers + TENSOR.size * t)
             for t in range(n_tensors)]
    for t, rec in enumerate(trecs):
        offset, length = rec[0], rec[1]
        if offset < tables_end or offset + length > len(data):
            raise OutOfBounds(f"tensor {t}: bytes [{offset}, {offset + length}) out of bounds")
        if rec[4] not in (0, 1):
            raise InvalidLayout(f"tensor {t}: unknown kind {rec[4]}")
    cache: dict[int, tuple[QTensor, codec.CompressedBlob | None]] = {}

    def tensor(t: int):
        if t >= n_tensors:
            raise OutOfBounds(f"tensor index {t} >= {n_tensors}")
        if t not in cache:
            cache[t] = _decode_tensor(data, t, trecs[t], bits, comp)
        return cache[t]

    layers = []
    seen_fc = False
    for i in range(n_layers):
        ltype, act, in_dim, out_dim, *slots = LAYER.unpack_from(data, HEADER.size + LAYER.size * i)
        if ltype not in LayerType._value2member_map_:
            raise InvalidLayout(f"layer {i}: unknown type {ltype}")
        if act not in ActivationKind._value2member_map_:
            raise InvalidLayout(f"layer {i}: unknown activation {act}")
        ltype, act = LayerType(ltype), ActivationKind(act)
        if not (1 <= in_dim <= MAX_DIM and 1 <= out_dim <= MAX_DIM):
            raise InvalidLayout(f"layer {i}: dims out of range")
        if layers and layers[-1].output_dim != in_dim:
            raise InvalidLayout(f"layer {i}: input_dim {in_dim} breaks the layer chain")
        if ltype.recurrent and (seen_fc or act is not ActivationKind.TANH):
            raise InvalidLayout(f"layer {i}: invalid recurrent layer placement/activation")
        seen_fc |= ltype is LayerType.FC
        ng = ltype.n_gates
        if any(s != NO_TENSOR for s in slots[ng:4]) or slots[5] != NO_TENSOR:
            raise InvalidLayout(f"layer {i}: unexpected tensor slots")
        shape = weight_shape(ltype, in_dim, out_dim)
        gates = []
        for g in range(ng):
            w, blob = tensor(slots[g])
            b, _ = tensor(slots[4] + g)
            if trecs[slots[g]][4] != 0 or trecs[slots[4] + g][4] != 1:
                raise InvalidLayout(f"layer {i} gate {g}: tensor kinds swapped")
            if w.shape != shape or b.shape != (out_dim,):
                raise InvalidLayout(f"layer {i} gate {g}: tensor shape {w.shape}, expected {shape}")
            if b.fmt.exponent != w.fmt.exponent + Q14:
                raise InvalidLayout(f"layer {i} gate {g}: bias exponent not aligned")
            gates.append(GateTensor(w, b, blob))
        layers.append(CompiledLayer(ltype, in_dim, out_dim, act, tuple(gates)))
    return CompiledModel(tuple(layers), seq_len, ExecMode(mode), bits, comp or None)


def dequantize_layers(model: CompiledModel) -> list[LayerWeights]:
    """Float weights exactly representing the compiled integers."""
    return [LayerWeights([g.weights.dequantize() for g in layer.gates],
                         [g.bias.dequantize() for g in layer.gates])
            for layer in model.layers]


def manifest_of(model: CompiledModel) -> Manifest:
    layers = tuple(LayerSpec(layer.type, layer.input_dim, layer.output_dim, layer.activation)
                   for layer in model.layers)
    return Manifest(model.network or "loaded", layers, model.seq_len, model.exec_mode,
                    model.weight_bits, model.compression)
