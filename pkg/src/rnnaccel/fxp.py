"""Bit-exact fixed-point primitives shared by the whole datapath.

Every stored value is an integer with a power-of-two exponent:
``real = stored * 2**exponent``. Rounding is round-half-to-even and
overflow always saturates; saturation is reported through an optional
:class:`SatCounter` owned by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LANE_BITS = (8, 16, 32)

Q14 = -14  # hidden / gate / activation outputs (Q1.14)
Q13 = -13  # LSTM cell state (Q2.13)
Q12 = -12  # canonical activation-unit input (Q4.12)
ONE_Q14 = 1 << 14

ACC_BITS = {8: 32, 16: 40}


def lane_min(bits: int) -> int:
    return -(1 << (bits - 1))


def lane_max(bits: int) -> int:
    return (1 << (bits - 1)) - 1


@dataclass
class SatCounter:
    """Running count of saturation events for one report context."""

    count: int = 0

    def add(self, n: int) -> None:
        self.count += int(n)


@dataclass(frozen=True)
class QFormat:
    bits: int
    exponent: int

    def __post_init__(self):
        if self.bits not in LANE_BITS:
            raise ValueError(f"lane width must be one of {LANE_BITS}, got {self.bits}")

    @property
    def min_int(self) -> int:
        return lane_min(self.bits)

    @property
    def max_int(self) -> int:
        return lane_max(self.bits)

    @property
    def range(self) -> tuple[float, float]:
        scale = 2.0 ** self.exponent
        return self.min_int * scale, self.max_int * scale


@dataclass(frozen=True)
class QTensor:
    """Integer tensor with a per-tensor power-of-two scale."""

    data: np.ndarray
    fmt: QFormat

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim not in (1, 2):
            raise ValueError("QTensor must be 1-D or 2-D")
        if not np.issubdtype(data.dtype, np.integer):
            raise TypeError("QTensor data must be integer")
        if data.size and (data.min() < self.fmt.min_int or data.max() > self.fmt.max_int):
            raise ValueError(f"QTensor element outside {self.fmt.bits}-bit lane")
        data = data.astype(np.int64)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def dequantize(self) -> np.ndarray:
        return self.data.astype(np.float64) * 2.0 ** self.fmt.exponent


@dataclass(frozen=True)
class Accumulator:
    value: int = 0
    bound_bits: int = 32
    saturated: bool = field(default=False)

    @property
    def bound(self) -> int:
        return lane_max(self.bound_bits)


def saturate(value: int, bits: int, counter: SatCounter | None = None) -> int:
    lo, hi = lane_min(bits), lane_max(bits)
    if value > hi or value < lo:
        if counter is not None:
            counter.add(1)
        return hi if value > hi else lo
    return value


def mac(acc: Accumulator, a: int, w: int, weight_bits: int = 8) -> Accumulator:
    """One multiply-accumulate step with a saturating add."""
    if not lane_min(16) <= a <= lane_max(16):
        raise ValueError(f"activation {a} outside int16 lane")
    if not lane_min(weight_bits) <= w <= lane_max(weight_bits):
        raise ValueError(f"weight {w} outside int{weight_bits} lane")
    bound = acc.bound
    total = acc.value + a * w
    if total > bound:
        return Accumulator(bound, acc.bound_bits, True)
    if total < -bound:
        return Accumulator(-bound, acc.bound_bits, True)
    return Accumulator(total, acc.bound_bits, acc.saturated)


def shift_round(value: int, shift: int) -> int:
    """``value / 2**shift`` with round-half-to-even; negative shift is an exact left shift."""
    if shift <= 0:
        return value << -shift
    q = value >> shift
    r = value - (q << shift)
    half = 1 << (shift - 1)
    if r > half or (r == half and q & 1):
        q += 1
    return q


def requantize(acc, shift: int, out_bits: int = 16, counter: SatCounter | None = None) -> int:
    """Move an accumulator value into a narrower lane.

    ``shift`` is ``e_out - e_acc``. Negative shifts (the output exponent is
    finer than the accumulator's) are exact left shifts before saturation.
    """
    value = acc.value if isinstance(acc, Accumulator) else int(acc)
    return saturate(shift_round(value, shift), out_bits, counter)


def emul(a: int, b: int, shift: int = 14, counter: SatCounter | None = None) -> int:
    return saturate(shift_round(a * b, shift), 16, counter)


def emul_q14(a: int, b: int, counter: SatCounter | None = None) -> int:
    """Element-wise Q1.14 product."""
    return emul(a, b, 14, counter)


def choose_exponent(values, bits: int) -> int:
    """Smallest exponent ``e`` with ``round(max|v| / 2**e) <= 2**(bits-1) - 1``."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("choose_exponent needs at least one value")
    if not np.all(np.isfinite(arr)):
        raise ValueError("choose_exponent: non-finite input")
    peak = float(np.max(np.abs(arr)))
    limit = lane_max(bits)
    if peak == 0.0:
        return -(bits - 1)
    # frexp gives peak = m * 2**k with 0.5 <= m < 1; start one below the answer
    _, k = math.frexp(peak)
    e = k - (bits - 1) - 1
    while round(math.ldexp(peak, -e)) > limit:
        e += 1
    return e


def quantize(values, exponent: int, bits: int, counter: SatCounter | None = None) -> np.ndarray:
    """Round-half-to-even quantization of reals to ``bits``-wide integers."""
    arr = np.asarray(values, dtype=np.float64)
    scaled = np.rint(np.ldexp(arr, -exponent))  # rint rounds half to even
    lo, hi = lane_min(bits), lane_max(bits)
    if counter is not None:
        counter.add(np.count_nonzero((scaled < lo) | (scaled > hi)))
    return np.clip(scaled, lo, hi).astype(np.int64)


# --- vectorized forms used by the engine ------------------------------------


def saturate_array(values: np.ndarray, bits: int, counter: SatCounter | None = None) -> np.ndarray:
    lo, hi = lane_min(bits), lane_max(bits)
    if counter is not None:
        counter.add(np.count_nonzero((values < lo) | (values > hi)))
    return np.clip(values, lo, hi)


def shift_round_array(values: np.ndarray, shift: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    if shift <= 0:
        return values << -shift
    q = values >> shift
    r = values - (q << shift)
    half = 1 << (shift - 1)
    bump = (r > half) | ((r == half) & ((q & 1) == 1))
    return q + bump


def requantize_array(values, shift: int, out_bits: int = 16,
                     counter: SatCounter | None = None) -> np.ndarray:
    return saturate_array(shift_round_array(values, shift), out_bits, counter)


def emul_array(a, b, shift: int = 14, counter: SatCounter | None = None) -> np.ndarray:
    prod = np.asarray(a, dtype=np.int64) * np.asarray(b, dtype=np.int64)
    return saturate_array(shift_round_array(prod, shift), 16, counter)


def add_sat_array(a, b, bits: int = 16, counter: SatCounter | None = None) -> np.ndarray:
    return saturate_array(np.asarray(a, dtype=np.int64) + np.asarray(b, dtype=np.int64),
                          bits, counter)


def dot_saturating(weights: np.ndarray, invec: np.ndarray, bias: np.ndarray,
                   acc_bits: int, counter: SatCounter | None = None) -> np.ndarray:
    """Row-wise ``bias + sum(w * x)`` with per-step saturating accumulation.

    Products are streamed in column order after the bias. Rows whose running
    sum never leaves the accumulator range take the vectorized path; the
    rest are replayed one MAC at a time so saturation is sticky exactly as in
    :func:`mac`.
    """
    weights = np.asarray(weights, dtype=np.int64)
    invec = np.asarray(invec, dtype=np.int64)
    bias = np.asarray(bias, dtype=np.int64)
    bound = lane_max(acc_bits)
    prefix = np.cumsum(weights * invec[None, :], axis=1) + bias[:, None]
    if prefix.shape[1]:
        out = prefix[:, -1].copy()
        bad = np.any(np.abs(prefix) > bound, axis=1) | (np.abs(bias) > bound)
    else:
        out = bias.copy()
        bad = np.abs(bias) > bound
    for row in np.flatnonzero(bad):
        acc = int(bias[row])
        hit = False
        if acc > bound or acc < -bound:
            acc, hit = (bound if acc > 0 else -bound), True
        for w, a in zip(weights[row].tolist(), invec.tolist()):
            acc += w * a
            if acc > bound:
                acc, hit = bound, True
            elif acc < -bound:
                acc, hit = -bound, True
        out[row] = acc
        if hit and counter is not None:
            counter.add(1)
    return out
