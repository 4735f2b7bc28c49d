"""Multi-mode activation unit: piecewise-linear Tanh/Softsign, Sigmoid via Tanh.

Tables cover ``x in [0, 8)`` with 256 uniform segments of width 1/32.
Negative inputs use odd symmetry; Sigmoid reuses the Tanh table through
``sigmoid(x) = (1 + tanh(x / 2)) / 2``.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .fxp import ONE_Q14, Q12, Q14, requantize_array, shift_round_array

N_SEGMENTS = 256
SEG_SHIFT = 7  # Q4.12 input: segment = q >> 7, fraction = low 7 bits
FRAC_MASK = (1 << SEG_SHIFT) - 1
X_LIMIT_Q12 = 1 << 15  # 8.0 in Q4.12
TABLE_VERSION = 1

PWL_BUDGET = 2.0e-4
FIXED_BUDGET = 2.5e-4


class ActivationKind(enum.IntEnum):
    IDENTITY = 0
    RELU = 1
    TANH = 2
    SIGMOID = 3
    SOFTSIGN = 4

    @classmethod
    def parse(cls, name: str) -> "ActivationKind":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown activation {name!r}") from None

    @property
    def has_table(self) -> bool:
        return self in (ActivationKind.TANH, ActivationKind.SOFTSIGN)


SAT_VALUES = {
    ActivationKind.TANH: ONE_Q14,
    ActivationKind.SOFTSIGN: round(8 / 9 * ONE_Q14),
}


@dataclass(frozen=True)
class PWLTable:
    fn: ActivationKind
    c0: tuple[int, ...]
    c1: tuple[int, ...]
    sat_value: int

    def __post_init__(self):
        if len(self.c0) != N_SEGMENTS or len(self.c1) != N_SEGMENTS:
            raise ValueError(f"PWL table needs {N_SEGMENTS} segments")

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.c0, dtype=np.int64), np.asarray(self.c1, dtype=np.int64)

    def eval_real(self, x) -> np.ndarray:
        """Real-valued PWL for ``x`` in ``[0, 8)`` (integer coefficients, continuous input)."""
        x = np.asarray(x, dtype=np.float64)
        c0, c1 = self.arrays()
        seg = np.minimum((x * 32).astype(np.int64), N_SEGMENTS - 1)
        u = x * 32 - seg
        return (c0[seg] + c1[seg] * u) / ONE_Q14

    def to_text(self) -> str:
        lines = [
            f"# rnnaccel pwl table v{TABLE_VERSION}",
            f"# fn={self.fn.name.lower()} segments={N_SEGMENTS} domain=[0,8) step=1/32 "
            f"sat_value={self.sat_value}",
            "# columns: segment c0 c1 (Q1.14 decimal integers)",
        ]
        lines += [f"{s} {a} {b}" for s, (a, b) in enumerate(zip(self.c0, self.c1))]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PWLTable":
        meta: dict[str, str] = {}
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                continue
            s, a, b = (int(t) for t in line.split())
            if s != len(rows):
                raise ValueError(f"segment {s} out of order")
            rows.append((a, b))
        fn = ActivationKind.parse(meta["fn"])
        return cls(fn, tuple(r[0] for r in rows), tuple(r[1] for r in rows),
                   int(meta["sat_value"]))


def eval_real(kind: ActivationKind, x):
    """Double-precision reference value of the activation."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("eval_real: non-finite input")
    if kind is ActivationKind.TANH:
        out = np.tanh(arr)
    elif kind is ActivationKind.SIGMOID:
        # tanh form avoids exp overflow for large |x|
        out = 0.5 * (1.0 + np.tanh(0.5 * arr))
    elif kind is ActivationKind.SOFTSIGN:
        out = arr / (1.0 + np.abs(arr))
    elif kind is ActivationKind.RELU:
        out = np.maximum(arr, 0.0)
    else:
        out = arr.copy()
    return float(out) if np.ndim(x) == 0 else out


# --- offline fit -------------------------------------------------------------

_DENSE = 2048  # 2**-16 input step inside a 1/32 segment
_SEARCH = 4


def _fixed_segment(c0: int, c1: int) -> np.ndarray:
    frac = np.arange(1 << SEG_SHIFT, dtype=np.int64)
    return c0 + ((c1 * frac + 64) >> SEG_SHIFT)


def _segment_error(f, s: int, c0: int, c1: int) -> tuple[float, float]:
    u = np.arange(_DENSE + 1) / _DENSE
    x = (s + u) / 32
    real = np.max(np.abs((c0 + c1 * u) / ONE_Q14 - f(x)))
    xq = (s * 128 + np.arange(128)) / 4096
    fixed = np.max(np.abs(_fixed_segment(c0, c1) / ONE_Q14 - f(xq)))
    return float(real), float(fixed)


def build_table(fn: ActivationKind) -> PWLTable:
    """Fit the 256-segment table for Tanh or Softsign.

    Each segment starts from the chord shifted by half its peak deviation,
    then an integer neighbourhood search picks the (c0, c1) pair minimising
    the worse of the continuous and the 7-bit-interpolated error. The
    search is constrained so the fixed-point curve stays monotone and
    ``c0[0] == 0``.
    """
    if not fn.has_table:
        raise ValueError(f"{fn.name} has no PWL table")
    f = functools.partial(eval_real, fn)
    sat = SAT_VALUES[fn]
    c0s: list[int] = []
    c1s: list[int] = []
    prev_end = 0
    u = np.arange(_DENSE + 1) / _DENSE
    for s in range(N_SEGMENTS):
        x0, x1 = s / 32, (s + 1) / 32
        y0, y1 = f(x0), f(x1)
        dev = f(x0 + u / 32) - (y0 + (y1 - y0) * u)
        c0f = (y0 + 0.5 * (dev.max() + dev.min())) * ONE_Q14
        c1f = (y1 - y0) * ONE_Q14
        best = None
        c0_range = [0] if s == 0 else range(round(c0f) - _SEARCH, round(c0f) + _SEARCH + 1)
        for c0 in c0_range:
            if c0 < prev_end:
                continue
            for c1 in range(max(0, round(c1f) - _SEARCH), round(c1f) + _SEARCH + 1):
                end = int(_fixed_segment(c0, c1)[-1])
                if s == N_SEGMENTS - 1 and end > sat:
                    continue
                key = (max(_segment_error(f, s, c0, c1)), c0, c1)
                if best is None or key < best:
                    best = key
        if best is None:
            raise RuntimeError(f"no feasible coefficients for segment {s}")
        _, c0, c1 = best
        c0s.append(c0)
        c1s.append(c1)
        prev_end = int(_fixed_segment(c0, c1)[-1])
    return PWLTable(fn, tuple(c0s), tuple(c1s), sat)


def _table_resource(fn: ActivationKind) -> str:
    return f"pwl_{fn.name.lower()}_v{TABLE_VERSION}.txt"


@functools.lru_cache(maxsize=None)
def get_table(fn: ActivationKind) -> PWLTable:
    """Golden table shipped with the package."""
    if not fn.has_table:
        raise ValueError(f"{fn.name} has no PWL table")
    text = resources.files("rnnaccel.data").joinpath(_table_resource(fn)).read_text()
    return PWLTable.from_text(text)


# --- fixed-point evaluation --------------------------------------------------


def _to_q412(mag: np.ndarray, e_x: int) -> np.ndarray:
    """Map non-negative magnitudes at exponent ``e_x`` onto Q4.12 (unsaturated)."""
    shift = Q12 - e_x
    if shift < -16:
        # any non-zero magnitude is already past 8.0
        return np.where(mag > 0, X_LIMIT_Q12, 0)
    return shift_round_array(mag, shift)


def _pwl_fixed(table: PWLTable, q: np.ndarray) -> np.ndarray:
    c0, c1 = table.arrays()
    over = q >= X_LIMIT_Q12
    qc = np.where(over, 0, q)
    seg = qc >> SEG_SHIFT
    frac = qc & FRAC_MASK
    y = c0[seg] + ((c1[seg] * frac + 64) >> SEG_SHIFT)
    return np.where(over, table.sat_value, y)


def eval_fixed(kind: ActivationKind, x, e_x: int) -> np.ndarray | int:
    """Q1.14 activation output for int16 input ``x`` with exponent ``e_x``."""
    scalar = np.ndim(x) == 0
    xi = np.asarray(x, dtype=np.int64)
    if kind is ActivationKind.IDENTITY:
        out = requantize_array(xi, Q14 - e_x)
    elif kind is ActivationKind.RELU:
        out = np.maximum(requantize_array(xi, Q14 - e_x), 0)
    else:
        neg = xi < 0
        mag = np.abs(xi)
        if kind is ActivationKind.SIGMOID:
            q = _to_q412(mag, e_x - 1)  # half argument
            table = get_table(ActivationKind.TANH)
        else:
            q = _to_q412(mag, e_x)
            table = get_table(kind)
        y = _pwl_fixed(table, q)
        y = np.where(neg, -y, y)
        out = (y + ONE_Q14) >> 1 if kind is ActivationKind.SIGMOID else y
    return int(out) if scalar else out


def preactivation_exponent(kind: ActivationKind) -> int:
    """Exponent the engine requantizes accumulators to before this activation.

    Sigmoid gets one extra integer bit so its half-argument path spans [-16, 16).
    """
    if kind is ActivationKind.SIGMOID:
        return Q12 + 1
    if kind.has_table:
        return Q12
    return Q14


def sweep(kind: ActivationKind) -> dict[str, float]:
    """Exhaustive int16 sweep at the canonical Q4.12 exponent.

    Returns the worst fixed-point error, the worst real-valued PWL error on
    the same grid, and the input where the fixed-point worst case occurs.
    """
    x = np.arange(-32768, 32768, dtype=np.int64)
    xr = x / 4096.0
    ref = eval_real(kind, xr)
    got = eval_fixed(kind, x, Q12) / ONE_Q14
    err = np.abs(got - ref)
    worst = int(np.argmax(err))
    if kind is ActivationKind.SIGMOID:
        t = get_table(ActivationKind.TANH)
        half = np.abs(xr) / 2
        pwl = np.where(half >= 8, 1.0, t.eval_real(np.minimum(half, 8 - 2 ** -20)))
        pwl = 0.5 * (1 + np.sign(xr) * pwl)
    elif kind.has_table:
        t = get_table(kind)
        mag = np.abs(xr)
        pwl = np.where(mag >= 8, t.sat_value / ONE_Q14,
                       t.eval_real(np.minimum(mag, 8 - 2 ** -20)))
        pwl = np.sign(xr) * pwl
    else:
        pwl = ref
    return {
        "max_fixed_error": float(err[worst]),
        "max_pwl_error": float(np.max(np.abs(pwl - ref))),
        "worst_input": int(x[worst]),
    }


def dense_pwl_error(fn: ActivationKind, step: float = 2.0 ** -16) -> float:
    """Max |pwl(x) - f(x)| over ``[0, 8)`` on a uniform grid."""
    table = get_table(fn)
    x = np.arange(0, 8, step)
    return float(np.max(np.abs(table.eval_real(x) - eval_real(fn, x))))
