import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rnnaccel import loadable, profiles
from rnnaccel.activation import ActivationKind
from rnnaccel.loadable import (
    BadMagic, CompileError, CorruptBlob, ExecMode, InvalidLayout, LayerSpec, LayerType,
    LoadableError, Manifest, ManifestError, OutOfBounds, UnsupportedVersion, build, emit, load,
    manifest_from_dict, param_count, parse_manifest, read_weights, write_model,
)


def closed_form(ltype, i, o):
    if ltype == "FC":
        return o * i + o
    gates = 3 if ltype == "GRU" else 4
    return gates * (o * (o + i) + o)


@pytest.fixture(scope="module")
def kws():
    m = profiles.kws_gru()
    return m, profiles.random_weights(m, 0)


def small(seed=0, **kw):
    m, w, _ = profiles.random_small_net(seed, **kw)
    return m, w


class TestManifest:
    def test_kws_parameter_count(self, kws):
        assert kws[0].n_params == 3 * (154 * 164 + 154) + 154 * 12 + 12 == 78090

    @given(st.sampled_from(["FC", "GRU", "LSTM"]), st.integers(1, 300), st.integers(1, 300))
    def test_param_closed_form(self, t, i, o):
        assert param_count(LayerType[t], i, o) == closed_form(t, i, o)

    def test_file_roundtrip(self, kws, tmp_path):
        path = write_model(*kws, tmp_path)
        m = parse_manifest(path.read_text(), tmp_path)
        assert [(l.type, l.input_dim, l.output_dim) for l in m.layers] == \
               [(LayerType.GRU, 10, 154), (LayerType.FC, 154, 12)]
        assert m.exec_mode is ExecMode.STREAMING and m.seq_len == 10
        w = read_weights(m, tmp_path)
        np.testing.assert_allclose(w[0].gates[1], kws[1][0].gates[1].astype(np.float32))

    def base(self):
        return {"network": "t", "seq_len": 2, "layers": [
            {"type": "GRU", "input_dim": 4, "output_dim": 6},
            {"type": "FC", "input_dim": 6, "output_dim": 3, "activation": "relu"}]}

    @pytest.mark.parametrize("mutate, code, layer", [
        (lambda d: d["layers"][1].update(input_dim=0), "DIMS", 1),
        (lambda d: d["layers"][1].update(input_dim=5), "CHAIN", 1),
        (lambda d: d["layers"][0].update(type="RNN"), "UNKNOWN_TYPE", 0),
        (lambda d: d["layers"][1].update(activation="gelu"), "UNKNOWN_ACTIVATION", 1),
        (lambda d: d["layers"][0].update(output_dim=5000), "DIMS", 0),
        (lambda d: d.update(seq_len=0), "BAD_FIELD", None),
        (lambda d: d.update(weight_bits=4), "BAD_FIELD", None),
        (lambda d: d.update(compression="3x"), "BAD_FIELD", None),
        (lambda d: d["layers"].append({"type": "LSTM", "input_dim": 3, "output_dim": 3}),
         "ORDER", 2),
    ])
    def test_diagnostics(self, mutate, code, layer):
        d = self.base()
        mutate(d)
        with pytest.raises(ManifestError) as info:
            manifest_from_dict(d)
        assert info.value.code == code and info.value.layer == layer
        if layer is not None:
            assert f"layer {layer}" in str(info.value)

    def test_kws_chain_mismatch(self):
        d = {"layers": [{"type": "GRU", "input_dim": 10, "output_dim": 154},
                        {"type": "FC", "input_dim": 150, "output_dim": 12}]}
        with pytest.raises(ManifestError, match="154"):
            manifest_from_dict(d)

    def test_syntax_error(self):
        with pytest.raises(ManifestError) as info:
            parse_manifest("{not json")
        assert info.value.code == "SYNTAX"

    def test_missing_and_wrong_size_files(self, kws, tmp_path):
        path = write_model(*kws, tmp_path)
        (tmp_path / "l1_g0_b.f32").write_bytes(b"\x00" * 8)
        with pytest.raises(ManifestError) as info:
            parse_manifest(path.read_text(), tmp_path)
        assert info.value.code == "FILE_SIZE" and "l1_g0_b.f32" in str(info.value)
        (tmp_path / "l0_g2_w.f32").unlink()
        with pytest.raises(ManifestError) as info:
            parse_manifest(path.read_text(), tmp_path)
        assert info.value.code == "MISSING_FILE" and "l0_g2_w.f32" in str(info.value)

    def test_to_dict_roundtrip(self, kws, tmp_path):
        path = write_model(*kws, tmp_path)
        m = parse_manifest(path.read_text())
        assert manifest_from_dict(json.loads(json.dumps(m.to_dict()))) == m


class TestCompile:
    def test_deterministic(self, kws):
        assert loadable.compile(*kws) == loadable.compile(*kws)

    @pytest.mark.parametrize("comp", [None, 2, 4, 6])
    @pytest.mark.parametrize("bits", [8, 16])
    def test_idempotent(self, comp, bits):
        m, w = small(3, weight_bits=bits, compression=comp)
        data = loadable.compile(m, w)
        assert emit(load(data)) == data

    @pytest.mark.parametrize("seed", range(10))
    def test_rounding_bound(self, seed):
        m, w = small(seed)
        model = load(loadable.compile(m, w))
        for layer, lw in zip(model.layers, w):
            for gate, ref in zip(layer.gates, lw.gates):
                err = np.abs(gate.weights.dequantize() - ref)
                assert err.max() <= 2.0 ** (gate.e_w - 1)

    def test_bias_at_accumulator_scale(self):
        m, w = small(1)
        model = build(m, w)
        for layer, lw in zip(model.layers, w):
            for gate, b in zip(layer.gates, lw.biases):
                assert gate.bias.fmt.exponent == gate.e_w - 14
                assert np.abs(gate.bias.dequantize() - b).max() <= 2.0 ** (gate.e_acc - 1)

    def test_kws_roundtrip_dims(self, kws):
        model = load(loadable.compile(*kws))
        assert [(l.input_dim, l.output_dim) for l in model.layers] == [(10, 154), (154, 12)]
        assert model.n_params == 78090

    def test_kws_compressed_size(self, kws):
        m, w = kws
        data = loadable.compile(m.with_options(compression=4), w)
        assert len(data) < 45 * 1024
        assert m.n_params * 4 > 300_000

    def test_exponent_range(self):
        m = Manifest("tiny", (LayerSpec(LayerType.FC, 1, 1, ActivationKind.IDENTITY),))
        w = [loadable.LayerWeights([np.array([[1e-60]])], [np.zeros(1)])]
        with pytest.raises(CompileError) as info:
            loadable.compile(m, w)
        assert info.value.code == "EXPONENT_RANGE"

    def test_bias_alignment(self):
        m = Manifest("tiny", (LayerSpec(LayerType.FC, 1, 1, ActivationKind.IDENTITY),))
        w = [loadable.LayerWeights([np.array([[1e-6]])], [np.array([1e6])])]
        with pytest.raises(CompileError) as info:
            loadable.compile(m, w)
        assert info.value.code == "BIAS_ALIGNMENT"

    def test_fused_gate_layout(self):
        m, w = small(2)
        model = build(m, w)
        rec = model.layers[0]
        assert rec.gates[0].weights.shape == (rec.output_dim, rec.input_dim + rec.output_dim)


@pytest.fixture(scope="module")
def data():
    return loadable.compile(*small(4, compression=4))


class TestLoad:
    def test_header_fields(self, data):
        magic, version, bits, comp, n_layers, seq_len, mode, _, _ = \
            struct.unpack_from("<IHBBHHBBH", data)
        assert data[:4] == b"RNNA" and magic == 0x414E4E52
        assert (version, bits, comp, mode) == (1, 8, 4, 0)

    def test_bad_magic(self, data):
        with pytest.raises(BadMagic):
            load(b"XNNA" + data[4:])

    def test_bad_version(self, data):
        with pytest.raises(UnsupportedVersion):
            load(data[:4] + struct.pack("<H", 2) + data[6:])

    def test_truncated_names_tensor(self, data):
        with pytest.raises(OutOfBounds, match=r"tensor \d+"):
            load(data[:-3])

    def test_corrupt_blob(self, data):
        model = load(data)
        n_tensors = struct.unpack_from("<H", data, 14)[0]
        table = 16 + 32 * len(model.layers)
        offset = struct.unpack_from("<I", data, table)[0]
        bad = bytearray(data)
        bad[offset] ^= 0xFF  # first tensor is a compressed blob: break its magic
        with pytest.raises(CorruptBlob):
            load(bytes(bad))
        assert n_tensors >= 2

    def test_errors_have_distinct_codes(self):
        codes = {c.code for c in (BadMagic, UnsupportedVersion, OutOfBounds, CorruptBlob,
                                  InvalidLayout)}
        assert len(codes) == 5

    @settings(max_examples=300)
    @given(st.binary(max_size=400))
    def test_random_bytes(self, raw):
        with pytest.raises(LoadableError):
            load(raw)

    @settings(max_examples=300)
    @given(st.data())
    def test_mutated_loadables(self, data):
        m, w = small(data.draw(st.integers(0, 5)),
                     compression=data.draw(st.sampled_from([None, 2, 4, 6])))
        good = bytearray(loadable.compile(m, w))
        for _ in range(data.draw(st.integers(1, 4))):
            pos = data.draw(st.integers(0, len(good) - 1))
            good[pos] = data.draw(st.integers(0, 255))
        cut = data.draw(st.integers(0, len(good)))
        try:
            model = load(bytes(good[:cut]))
        except LoadableError:
            return
        # anything accepted re-serializes to a loadable that loads identically
        assert emit(load(emit(model))) == emit(model)
