"""Benchmark harness: compile a profile under each compression mode, simulate, validate."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import codec, loadable, profiles, reference
from .engine import Engine, EngineConfig, SimReport
from .loadable import ExecMode, LayerWeights, Manifest

MODES = {"none": None, "5.3x": 6, "8x": 4, "16x": 2}
PROFILES = ("kws-gru", "afib-bilstm")


@dataclass
class BenchRow:
    mode: str
    n_params: int
    loadable_bytes: int
    sim: SimReport
    max_abs_error: float

    def to_dict(self) -> dict:
        s = self.sim
        return {
            "mode": self.mode,
            "n_params": self.n_params,
            "loadable_bytes": self.loadable_bytes,
            "total_cycles": s.total_cycles,
            "cycles_per_inference": s.cycles_per_inference,
            "utilization": s.utilization,
            "inferences_per_second": s.inferences_per_second,
            "peak_gops": s.peak_gops,
            "weight_bytes_read": s.weight_bytes_read,
            "max_abs_error": self.max_abs_error,
        }


def _single(m: Manifest, weights: list[LayerWeights], cfg: EngineConfig, seeds: int,
            mode: str) -> BenchRow:
    blob = loadable.compile(m, weights)
    model = loadable.load(blob)
    float_model = reference.FloatModel(m, weights)
    engine = Engine(cfg)
    session = engine.open_session(model)
    # one inference for the performance figures
    frames = model.seq_len if model.exec_mode is ExecMode.BATCH else 1
    x0 = np.random.default_rng(0).uniform(-1, 1, (frames, model.input_dim))
    sim = session.run(reference.quantize_inputs(x0)).report
    worst = 0.0
    for seed in range(seeds):
        x = np.random.default_rng(seed).uniform(-1, 1, (model.seq_len, model.input_dim))
        rep = reference.validate(model, float_model, x, cfg)
        worst = max(worst, rep.max_abs_error)
    return BenchRow(mode, m.n_params, len(blob), sim, worst)


def _bilstm(weight_bits: int, comp: int | None, cfg: EngineConfig, seeds: int,
            mode: str, weight_seed: int) -> BenchRow:
    manifests = profiles.afib_bilstm(weight_bits, comp)
    weights = [profiles.random_weights(m, weight_seed + k) for k, m in enumerate(manifests)]
    blobs = [loadable.compile(m, w) for m, w in zip(manifests, weights)]
    models = [loadable.load(b) for b in blobs]
    floats = [reference.FloatModel(m, w) for m, w in zip(manifests, weights)]
    fwd_m = models[0]
    sim = None
    worst = 0.0
    for seed in range(max(seeds, 1)):
        engine = Engine(cfg)
        fwd, bwd, head = (engine.open_session(m) for m in models)
        x = np.random.default_rng(seed).uniform(-1, 1, (fwd_m.seq_len, fwd_m.input_dim))
        xq = reference.quantize_inputs(x)
        rf = fwd.run(xq)
        rb = bwd.run(xq[::-1])
        hq = np.concatenate([rf.outputs, rb.outputs])
        rh = head.run(hq)
        report = SimReport(cfg.n_macs, cfg.clock_mhz, cfg.lanes(weight_bits))
        for r in (rf, rb, rh):
            part = r.report
            part.inferences = 0
            part.layers = []
            report.merge(part)
        report.inferences = 1
        if sim is None:
            sim = report
        if seeds:
            of = reference.forward(floats[0], x).outputs
            ob = reference.forward(floats[1], x[::-1]).outputs
            oh = reference.forward(floats[2], np.concatenate([of, ob])).outputs
            worst = max(worst, float(np.max(np.abs(rh.final_real() - oh))))
    n_params = sum(m.n_params for m in manifests)
    return BenchRow(mode, n_params, sum(len(b) for b in blobs), sim, worst)


def run_bench(profile: str, cfg: EngineConfig, modes=None, seeds: int = 2,
              weight_bits: int = 8, weight_seed: int = 0) -> list[BenchRow]:
    modes = list(MODES) if modes is None else list(modes)
    rows = []
    if profile == "afib-bilstm":
        for mode in modes:
            rows.append(_bilstm(weight_bits, MODES[mode], cfg, seeds, mode, weight_seed))
        return rows
    if profile == "kws-gru":
        base = profiles.kws_gru(weight_bits=weight_bits)
        weights = profiles.random_weights(base, weight_seed)
    else:
        path = Path(profile)
        base = loadable.parse_manifest(path.read_text(), path.parent)
        weights = loadable.read_weights(base, path.parent)
        base = base.with_options(weight_bits=weight_bits)
    for mode in modes:
        rows.append(_single(base.with_options(compression=MODES[mode]), weights, cfg, seeds, mode))
    return rows


def format_table(rows: list[BenchRow]) -> str:
    head = (f"{'mode':>6} {'params':>7} {'bytes':>7} {'cycles':>8} {'util':>6} "
            f"{'inf/s':>9} {'GOPS':>7} {'wbytes':>7} {'max_err':>9}")
    lines = [head]
    for r in rows:
        d = r.to_dict()
        lines.append(
            f"{d['mode']:>6} {d['n_params']:>7} {d['loadable_bytes']:>7} "
            f"{d['cycles_per_inference']:>8.0f} {d['utilization']:>6.3f} "
            f"{d['inferences_per_second']:>9.0f} {d['peak_gops']:>7.3f} "
            f"{d['weight_bytes_read']:>7} {d['max_abs_error']:>9.5f}")
    return "\n".join(lines)


def ratio_of(model: loadable.CompiledModel) -> codec.RatioReport | None:
    blobs = model.blobs()
    return codec.ratio_report(blobs) if blobs else None

