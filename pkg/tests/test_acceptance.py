"""Acceptance criteria, one test each, run at the stated tolerances.

Each test prints a single ``[PASS]``/``[FAIL]`` line (repeated in the
terminal summary). Wall-clock budgets are part of the criteria.
Criterion 8 (silicon power/area and dataset accuracy) is excluded as
non-reproducible; traffic counters and criteria 3-5 stand in for it.
"""

import json
import math
import time

import numpy as np

from rnnaccel import codec, loadable, profiles
from rnnaccel.activation import FIXED_BUDGET, PWL_BUDGET, ActivationKind, dense_pwl_error, sweep
from rnnaccel.cli import main
from rnnaccel.engine import Engine, EngineConfig, run_inference
from rnnaccel.loadable import (
    ExecMode, LayerSpec, LayerType, LayerWeights, LoadableError, Manifest, emit, load,
)
from rnnaccel.reference import FloatModel, forward, quantize_inputs, validate


def test_c1_activation_error(acceptance):
    t0 = time.perf_counter()
    parts, ok = [], True
    for kind in (ActivationKind.TANH, ActivationKind.SIGMOID, ActivationKind.SOFTSIGN):
        res = sweep(kind)
        pwl = res["max_pwl_error"]
        if kind is not ActivationKind.SIGMOID:
            pwl = max(pwl, dense_pwl_error(kind))
        ok &= pwl <= PWL_BUDGET and res["max_fixed_error"] <= FIXED_BUDGET
        parts.append(f"{kind.name.lower()} pwl={pwl:.2e} fixed={res['max_fixed_error']:.2e}")
    dt = time.perf_counter() - t0
    ok &= dt < 5
    acceptance("C1 activation error bound", ok, "; ".join(parts), dt)
    assert ok


def test_c2_kws_performance(acceptance, tmp_path):
    t0 = time.perf_counter()
    report = tmp_path / "bench.json"
    code = main(["bench", "kws-gru", "--macs", "32", "--clock", "250", "--report", str(report)])
    rows = json.loads(report.read_text())["extra"]["rows"]
    dt = time.perf_counter() - t0
    ok = code == 0 and dt < 10 and len(rows) == 4
    for row in rows:
        ok &= 0.85 <= row["utilization"] <= 0.95
        ok &= 85e3 <= row["inferences_per_second"] <= 100e3
        ok &= f"{row['peak_gops']:.3f}" == "16.000"
    r = rows[0]
    acceptance("C2 KWS performance", ok,
               f"util={r['utilization']:.4f} inf/s={r['inferences_per_second']:.0f} "
               f"peak={r['peak_gops']:.3f} GOPS over {len(rows)} modes", dt)
    assert ok


def test_c3_compression_ratios(acceptance):
    t0 = time.perf_counter()
    ok = (codec.nominal_ratio(6) == 32 / 6 and codec.nominal_ratio(4) == 8
          and codec.nominal_ratio(2) == 16)
    parts = []
    rng = np.random.default_rng(0)
    for b in (6, 4, 2):
        actual = []
        for n in (16384, 24576):
            rep = codec.ratio_report(codec.compress(rng.standard_normal(n), b))
            actual.append(rep.actual_ratio)
        ok &= min(actual) >= 0.95 * rep.nominal_ratio
        parts.append(f"b={b} nominal={rep.nominal_ratio:.4f} actual>={min(actual):.3f}")
    dt = time.perf_counter() - t0
    ok &= dt < 5
    acceptance("C3 compression ratios", ok, "; ".join(parts), dt)
    assert ok


def _dominance_tensor(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(256, 4097))
    shape = seed % 4
    if shape == 0:
        return rng.standard_normal(n)
    if shape == 1:
        return rng.uniform(-1, 1, n)
    if shape == 2:
        return rng.laplace(0, 0.1, n)
    return rng.standard_t(3, n) * 0.05


def test_c4_codec_dominance(acceptance):
    t0 = time.perf_counter()
    wins = {b: 0 for b in (2, 4, 6)}
    int8_wins = {b: 0 for b in (2, 4, 6)}
    for b in (2, 4, 6):
        for seed in range(100):
            w = _dominance_tensor(1000 * b + seed)
            uni = np.mean((codec.quantize_uniform(w, b) - w) ** 2)
            km = codec.kmeans_1d(w, 1 << b)
            float_mse = np.mean((km.centroids[km.assignment] - w) ** 2)
            blob_mse = np.mean((codec.reconstruct(codec.compress(w, b, 16)) - w) ** 2)
            wins[b] += float_mse <= uni and blob_mse <= uni
            int8_mse = np.mean((codec.reconstruct(codec.compress(w, b, 8)) - w) ** 2)
            int8_wins[b] += int8_mse <= uni
    dt = time.perf_counter() - t0
    ok = all(v == 100 for v in wins.values()) and dt < 30
    detail = " ".join(f"b={b}:{wins[b]}/100" for b in wins)
    detail += " (int8 codebook, informational: " + \
              " ".join(f"b={b}:{int8_wins[b]}/100" for b in int8_wins) + ")"
    acceptance("C4 codec dominance", ok, detail, dt)
    assert ok


def _zero_rounding_fc(seed: int, bits: int):
    """FC net whose every product and sum is exact at the chosen exponents."""
    rng = np.random.default_rng(seed)
    i, o = (int(v) for v in rng.integers(1, 9, 2))
    top = (1 << (bits - 1)) - 1
    w = rng.integers(-top, top + 1, (o, i)).astype(float)
    w[rng.integers(o), rng.integers(i)] = top  # pins e_w = 0
    bias = rng.integers(-2**12, 2**12, o) * 2.0**-14
    k = rng.integers(-32, 33, (1, i))
    m = Manifest(f"exact-{seed}", (LayerSpec(LayerType.FC, i, o, ActivationKind.IDENTITY),),
                 1, ExecMode.BATCH, bits)
    return m, [LayerWeights([w], [bias])], k


def test_c5_oracle_equivalence(acceptance):
    t0 = time.perf_counter()
    # (a) zero-rounding construction, both MAC modes
    exact = 0
    for seed in range(100):
        ok_seed = True
        for bits in (16, 8):
            m, w, k = _zero_rounding_fc(seed, bits)
            model = load(loadable.compile(m, w))
            assert model.layers[0].gates[0].e_w == 0
            res = run_inference(model, k, EngineConfig(weight_mode=f"w{bits}"))
            want = forward(FloatModel(m, w), k * 2.0**-14).outputs
            ok_seed &= np.array_equal(res.final_real(), want)
            ok_seed &= np.array_equal(res.outputs, np.clip(want * 2**14, -32768, 32767))
        exact += ok_seed
    # (b) random small nets, w8 uncompressed
    errs = []
    for seed in range(1000):
        m, w, x = profiles.random_small_net(seed)
        errs.append(validate(load(loadable.compile(m, w)), FloatModel(m, w), x).max_abs_error)
    errs = np.array(errs)
    within = int(np.sum(errs <= 0.01))
    # (c) degradation with compression, same nets
    means = {}
    for comp in (None, 4, 2):
        e = []
        for seed in range(50):
            m, w, x = profiles.random_small_net(seed, compression=comp)
            e.append(validate(load(loadable.compile(m, w)), FloatModel(m, w), x).max_abs_error)
        means[comp] = float(np.mean(e))
    monotone = means[2] >= means[4] >= means[None]
    dt = time.perf_counter() - t0
    ok = exact == 100 and within >= 999 and monotone and dt < 120
    acceptance("C5 oracle equivalence", ok,
               f"(a) bit-exact {exact}/100; (b) {within}/1000 within 0.01, "
               f"p99.9={np.quantile(errs, 0.999):.4f} max={errs.max():.4f}; "
               f"(c) mean err b2={means[2]:.4f} >= b4={means[4]:.4f} >= none={means[None]:.4f}",
               dt)
    assert ok


def test_c6_determinism_and_format(acceptance):
    t0 = time.perf_counter()
    kws = profiles.kws_gru()
    kw = profiles.random_weights(kws, 0)
    ok = True
    for comp in (None, 6, 4, 2):
        m = kws.with_options(compression=comp)
        a = loadable.compile(m, kw)
        b = loadable.compile(m, profiles.random_weights(kws, 0))
        model = load(a)
        ok &= a == b and emit(model) == a
        ok &= model.topology() == [("GRU", 10, 154), ("FC", 154, 12)]

    rng = np.random.default_rng(6)
    goods = []
    for s in range(8):
        for comp in (None, 2, 4, 6):
            m, w, _ = profiles.random_small_net(s, weight_bits=16 if s % 2 else 8,
                                                compression=comp)
            goods.append(loadable.compile(m, w))
    crashes = rejected = accepted = 0
    n_fuzz = 100_000
    for k in range(2 * n_fuzz):
        if k < n_fuzz:
            raw = rng.bytes(int(rng.integers(0, 300)))
            if k % 2:  # get past the magic/version check half of the time
                raw = b"RNNA\x01\x00" + raw
        else:
            g = bytearray(goods[int(rng.integers(len(goods)))])
            for _ in range(int(rng.integers(1, 5))):
                g[int(rng.integers(len(g)))] = int(rng.integers(256))
            if k % 3 == 0:
                g = g[:int(rng.integers(len(g) + 1))]
            raw = bytes(g)
        try:
            load(raw)
            accepted += 1
            ok &= k >= n_fuzz  # pure random bytes must never be accepted
        except LoadableError:
            rejected += 1
        except Exception:  # noqa: BLE001 - any other exception is a crash
            crashes += 1
    dt = time.perf_counter() - t0
    ok &= crashes == 0 and dt < 60
    acceptance("C6 determinism & format", ok,
               f"compile byte-identical, emit(load(x))==x for 4 modes; "
               f"{n_fuzz} random + {n_fuzz} mutated inputs: {rejected} rejected, "
               f"{accepted} valid mutants, {crashes} crashes", dt)
    assert ok


def _closed_form(m: Manifest, n_macs: int, p_drain: int = 4, d_dep: int = 12) -> int:
    lanes = n_macs if m.weight_bits == 8 else n_macs // 2
    step = tail = 0
    for layer in m.layers:
        i, o = layer.input_dim, layer.output_dim
        if layer.type is LayerType.FC:
            tail += math.ceil(o / lanes) * (i + p_drain) + d_dep
        else:
            gates = 3 if layer.type is LayerType.GRU else 4
            step += gates * math.ceil(o / lanes) * (i + o + p_drain) + 2 * d_dep
    return (m.seq_len if m.exec_mode is ExecMode.BATCH else 1) * step + tail


def test_c7_cycle_model(acceptance):
    t0 = time.perf_counter()
    matches = monotone = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        bits = int(rng.choice([8, 16]))
        mode = ExecMode(int(rng.integers(2)))
        m, w, x = profiles.random_small_net(seed, weight_bits=bits, max_dim=200, max_seq=4)
        m = m.with_options(exec_mode=mode)
        model = load(loadable.compile(m, w))
        frames = quantize_inputs(x if mode is ExecMode.BATCH else x[:1])
        cycles = []
        for n in (8, 16, 32, 64, 128, 256):
            rep = Engine(EngineConfig(n_macs=n)).open_session(model).run(frames).report
            matches += rep.total_cycles == _closed_form(m, n)
            cycles.append(rep.total_cycles)
        monotone += all(b <= a for a, b in zip(cycles, cycles[1:]))
    dt = time.perf_counter() - t0
    ok = matches == 300 and monotone == 50 and dt < 10
    acceptance("C7 cycle-model closed form", ok,
               f"{matches}/300 (topology, n_macs) pairs match; doubling monotone {monotone}/50",
               dt)
    assert ok
