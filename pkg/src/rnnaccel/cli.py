"""``rnnaccel`` command line: compile, compress, simulate, validate, bench, acttable.

Errors print one line ``rnnaccel: error[CODE]: message`` on stderr and exit 1.
Reports are JSON documents with a fixed key order (see README).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, activation, bench, codec, loadable, reference
from .engine import Engine, EngineConfig, EngineError, SimReport
from .fxp import Q14, quantize

TOOL = "rnnaccel"


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunReport:
    command: str
    config: dict = field(default_factory=dict)
    sim: SimReport | None = None
    validation: list[reference.ValidationReport] | None = None
    ratio: codec.RatioReport | None = None
    extra: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "tool": TOOL,
            "version": self.version,
            "command": self.command,
            "config": self.config,
            "sim": self.sim.to_dict() if self.sim else None,
            "validation": [v.to_dict() for v in self.validation] if self.validation else None,
            "ratio": self.ratio.to_dict() if self.ratio else None,
            "extra": self.extra,
            "wall_clock_s": self.wall_clock_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        d = json.loads(text)
        return cls(
            command=d["command"],
            config=d["config"],
            sim=SimReport.from_dict(d["sim"]) if d["sim"] else None,
            validation=([reference.ValidationReport.from_dict(v) for v in d["validation"]]
                        if d["validation"] else None),
            ratio=codec.RatioReport(**d["ratio"]) if d["ratio"] else None,
            extra=d["extra"],
            wall_clock_s=d["wall_clock_s"],
            version=d["version"],
        )


# --- tensor files -------------------------------------------------------------


def write_tensor(path: Path, values, exponent: int) -> None:
    arr = np.asarray(values, dtype="<i2").ravel()
    arr.tofile(path)
    Path(f"{path}.meta").write_text(f"length={arr.size} exponent={exponent}\n")


def read_tensor(path: Path) -> tuple[np.ndarray, int]:
    meta_path = Path(f"{path}.meta")
    if not path.is_file():
        raise CliError("MISSING_FILE", f"input file {path} not found")
    if not meta_path.is_file():
        raise CliError("MISSING_FILE", f"sidecar {meta_path} not found")
    meta = dict(tok.split("=", 1) for tok in meta_path.read_text().split() if "=" in tok)
    try:
        length, exponent = int(meta["length"]), int(meta["exponent"])
    except (KeyError, ValueError):
        raise CliError("BAD_SIDECAR", f"{meta_path} must declare length=<n> exponent=<e>") from None
    data = np.fromfile(path, dtype="<i2").astype(np.int64)
    if data.size != length:
        raise CliError("BAD_INPUT", f"{path} holds {data.size} values, sidecar says {length}")
    return data, exponent


def _emit_report(report: RunReport, path: str | None, t0: float) -> None:
    report.wall_clock_s = round(time.perf_counter() - t0, 6)
    if path:
        Path(path).write_text(report.to_json())


def _config(args) -> EngineConfig:
    return EngineConfig(n_macs=args.macs, clock_mhz=args.clock,
                        pool_bytes=getattr(args, "pool", 12288))


# --- commands -------------------------------------------------------------------


def cmd_compile(args) -> int:
    t0 = time.perf_counter()
    path = Path(args.manifest)
    if not path.is_file():
        raise CliError("MISSING_FILE", f"manifest {path} not found")
    m = loadable.parse_manifest(path.read_text(), path.parent)
    if args.compress is not None:
        m = m.with_options(compression=codec.parse_mode(args.compress))
    if args.wbits is not None:
        m = m.with_options(weight_bits=args.wbits)
    weights = loadable.read_weights(m, path.parent)
    model = loadable.build(m, weights)
    data = loadable.emit(model)
    Path(args.output).write_bytes(data)
    ratio = bench.ratio_of(model)
    print(f"network {m.network}: {m.n_params} parameters, {len(data)} bytes -> {args.output}")
    for i, exps in enumerate(model.exponents()):
        print(f"  layer {i} {model.layers[i].type.name}: weight exponents {exps}")
    if ratio:
        print(f"  compression nominal {ratio.nominal_ratio:.2f}x actual {ratio.actual_ratio:.3f}x")
    report = RunReport("compile", {"manifest": str(path), "weight_bits": m.weight_bits,
                                   "compression": m.compression},
                       ratio=ratio, extra={"n_params": m.n_params, "loadable_bytes": len(data),
                                           "exponents": model.exponents()})
    _emit_report(report, args.report, t0)
    return 0


def cmd_compress(args) -> int:
    t0 = time.perf_counter()
    src = Path(args.weights)
    if not src.is_file():
        raise CliError("MISSING_FILE", f"weight file {src} not found")
    w = np.fromfile(src, dtype="<f4").astype(np.float64)
    b = codec.parse_mode(args.compress)
    if b is None:
        raise CliError("BAD_MODE", "compress needs a ratio (5.3x, 8x or 16x)")
    blob = codec.compress(w, b, args.wbits)
    Path(args.output).write_bytes(blob.to_bytes())
    ratio = codec.ratio_report(blob)
    mse = float(np.mean((codec.reconstruct(blob) - w) ** 2))
    uni = float(np.mean((codec.quantize_uniform(w, b) - w) ** 2))
    print(f"{w.size} weights -> {blob.nbytes} bytes, nominal {ratio.nominal_ratio:.2f}x "
          f"actual {ratio.actual_ratio:.3f}x, mse {mse:.3e} (uniform {uni:.3e})")
    _emit_report(RunReport("compress", {"b": b, "entry_width": args.wbits}, ratio=ratio,
                           extra={"mse": mse, "uniform_mse": uni}), args.report, t0)
    return 0


def _load_file(path: str) -> loadable.CompiledModel:
    p = Path(path)
    if not p.is_file():
        raise CliError("MISSING_FILE", f"loadable {p} not found")
    return loadable.load(p.read_bytes())


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    model = _load_file(args.loadable)
    if args.input:
        data, e_in = read_tensor(Path(args.input))
        if data.size % model.input_dim:
            raise CliError("DIM_MISMATCH", f"input length {data.size} is not a multiple of "
                                           f"input_dim {model.input_dim}")
        frames = data.reshape(-1, model.input_dim)
    else:
        rng = np.random.default_rng(args.random)
        frames = quantize(rng.uniform(-1, 1, (model.seq_len, model.input_dim)), Q14, 16)
        e_in = Q14
    cfg = _config(args)
    result = Engine(cfg).open_session(model).run(frames, e_in)
    out = Path(args.output or f"{args.loadable}.out.i16")
    write_tensor(out, result.layer_outputs[-1], Q14)
    rep = result.report
    print(f"cycles {rep.total_cycles}  utilization {rep.utilization:.4f}  "
          f"inf/s {rep.inferences_per_second:.1f}  peak GOPS {rep.peak_gops:.3f}  "
          f"weight bytes {rep.weight_bytes_read}  saturations {rep.saturation_events}")
    extra = {"outputs": str(out)}
    if result.logits is not None:
        extra["logit_exponent"] = result.logit_exponent
        extra["logits"] = result.logits[-1].tolist()
    _emit_report(RunReport("simulate", cfg.to_dict(), sim=rep, extra=extra), args.report, t0)
    return 0


def cmd_validate(args) -> int:
    t0 = time.perf_counter()
    mpath = Path(args.manifest)
    if not mpath.is_file():
        raise CliError("MISSING_FILE", f"manifest {mpath} not found")
    m = loadable.parse_manifest(mpath.read_text(), mpath.parent)
    weights = loadable.read_weights(m, mpath.parent)
    model = _load_file(args.loadable)
    float_model = reference.FloatModel(m, weights)
    cfg = _config(args)
    reports = []
    for seed in range(args.seeds):
        x = np.random.default_rng(seed).uniform(-1, 1, (model.seq_len, model.input_dim))
        reports.append(reference.validate(model, float_model, x, cfg, args.tolerance))
    worst_seed = int(np.argmax([r.max_abs_error for r in reports]))
    worst = reports[worst_seed]
    print(f"{sum(r.passed for r in reports)}/{len(reports)} seeds within {args.tolerance}; "
          f"worst {worst.max_abs_error:.6f} at seed {worst_seed}")
    for e in worst.layers:
        print(f"  layer {e.index} {e.type}: max {e.max_abs_error:.6f} rms {e.rms_error:.6f}")
    _emit_report(RunReport("validate", {**cfg.to_dict(), "tolerance": args.tolerance,
                                        "seeds": args.seeds}, validation=reports),
                 args.report, t0)
    if not all(r.passed for r in reports):
        bad = worst.layers[worst.worst_layer]
        raise CliError("TOLERANCE_EXCEEDED",
                       f"seed {worst_seed}: final max error {worst.max_abs_error:.6g} > "
                       f"{args.tolerance}; worst layer {bad.index}: {bad.type} "
                       f"max {bad.max_abs_error:.6g}")
    return 0


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    if args.profile not in bench.PROFILES and not Path(args.profile).is_file():
        raise CliError("UNKNOWN_PROFILE", f"{args.profile} is neither a profile nor a manifest")
    modes = list(bench.MODES) if args.compress == "all" else [args.compress]
    cfg = _config(args)
    rows = bench.run_bench(args.profile, cfg, modes, args.seeds, args.wbits)
    label = " (synthetic stand-in topology)" if args.profile == "afib-bilstm" else ""
    print(f"profile {args.profile}{label}, {cfg.n_macs} MACs @ {cfg.clock_mhz:g} MHz")
    print(bench.format_table(rows))
    _emit_report(RunReport("bench", {**cfg.to_dict(), "profile": args.profile,
                                     "weight_bits": args.wbits},
                           extra={"rows": [r.to_dict() for r in rows]}), args.report, t0)
    return 0


def cmd_acttable(args) -> int:
    try:
        kind = activation.ActivationKind.parse(args.fn)
    except ValueError:
        raise CliError("NO_TABLE", f"unknown function {args.fn}") from None
    if not kind.has_table:
        raise CliError("NO_TABLE", f"{args.fn} has no PWL table")
    table = activation.get_table(kind)
    if args.emit:
        Path(args.emit).write_text(table.to_text())
        print(f"wrote {args.emit}")
    if args.verify:
        kinds = [kind] + ([activation.ActivationKind.SIGMOID]
                          if kind is activation.ActivationKind.TANH else [])
        bad = None
        for k in kinds:
            res = activation.sweep(k)
            dense = activation.dense_pwl_error(kind)
            pwl = max(res["max_pwl_error"], dense if k is kind else 0.0)
            ok = pwl <= activation.PWL_BUDGET and res["max_fixed_error"] <= activation.FIXED_BUDGET
            print(f"{k.name.lower():8s} pwl {pwl:.3e}  fixed {res['max_fixed_error']:.3e}  "
                  f"worst input {res['worst_input']}  {'ok' if ok else 'FAIL'}")
            if not ok and bad is None:
                bad = (k, res)
        if bad:
            raise CliError("SWEEP_FAILED", f"{bad[0].name.lower()} worst input {bad[1]['worst_input']}")
    if not args.emit and not args.verify:
        sys.stdout.write(table.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog=TOOL, description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def engine_flags(p):
        p.add_argument("--macs", type=int, default=32)
        p.add_argument("--clock", type=float, default=250.0, help="MHz")
        p.add_argument("--pool", type=int, default=12288, help="local memory pool bytes")
        p.add_argument("--report", help="write a JSON run report here")

    p = sub.add_parser("compile", help="manifest + weights -> loadable")
    p.add_argument("manifest")
    p.add_argument("--compress", choices=["none", "5.3x", "8x", "16x"])
    p.add_argument("--wbits", type=int, choices=[8, 16])
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("compress", help="compress one float32 weight file")
    p.add_argument("weights")
    p.add_argument("--compress", choices=["5.3x", "8x", "16x"], default="8x")
    p.add_argument("--wbits", type=int, choices=[8, 16], default=8)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("simulate", help="run a loadable on the behaviour simulator")
    p.add_argument("loadable")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="raw int16 frames with a .meta sidecar")
    src.add_argument("--random", type=int, metavar="SEED")
    p.add_argument("-o", "--output", help="output int16 file (default <loadable>.out.i16)")
    engine_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="compare simulator against the float oracle")
    p.add_argument("manifest")
    p.add_argument("loadable")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=reference.DEFAULT_TOLERANCE)
    engine_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="benchmark a profile across compression modes")
    p.add_argument("profile", help="kws-gru, afib-bilstm or a manifest path")
    p.add_argument("--compress", choices=["all", *bench.MODES], default="all")
    p.add_argument("--wbits", type=int, choices=[8, 16], default=8)
    p.add_argument("--seeds", type=int, default=2, help="validation seeds per mode")
    engine_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("acttable", help="dump or verify the activation tables")
    p.add_argument("--fn", required=True)
    p.add_argument("--emit", metavar="PATH")
    p.add_argument("--verify", action="store_true")
    p.set_defaults(func=cmd_acttable)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, loadable.ManifestError, loadable.CompileError, loadable.LoadableError,
            EngineError, reference.TopologyMismatch, codec.BlobError,
            OSError, ValueError) as exc:
        code = getattr(exc, "code", None) or "ERROR"
        msg = " ".join(str(exc).split())
        print(f"{TOOL}: error[{code}]: {msg}", file=sys.stderr)
        return 1

if __name__ == "__main__":
    sys.exit(main())
