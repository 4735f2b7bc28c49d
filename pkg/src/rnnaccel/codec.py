"""Fixed-ratio codebook weight compression.

Offline side: per-tensor 1-D k-means with ``2**b`` centroids, centroids
stored at MAC weight precision, indices bit-packed LSB-first in row-major
weight order. Online side: a table lookup per index, which is all the
hardware decompressor has to do.

Blob wire layout (little-endian)::

    0   2  magic  b"NC"
    2   1  version (1)
    3   1  b, bits per index (2, 4 or 6)
    4   4  n, number of weights
    8   1  entry_width (8 or 16)
    9   1  e_w, codebook exponent (two's complement)
    10  1  reserved (0)
    11     codebook: 2**b signed entries of entry_width bits
    ..     payload: ceil(n*b/8) bytes of packed indices
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .fxp import choose_exponent, quantize

BLOB_MAGIC = b"NC"
BLOB_VERSION = 1
HEADER = struct.Struct("<2sBBIBbB")
HEADER_BYTES = HEADER.size  # 11

INDEX_BITS = (2, 4, 6)
ENTRY_WIDTHS = (8, 16)
RATIO_NAMES = {"16x": 2, "8x": 4, "5.3x": 6}
MAX_ITER = 100


class BlobError(ValueError):
    code = "CORRUPT_BLOB"


class TruncatedPayload(BlobError):
    code = "TRUNCATED_PAYLOAD"


class WidthMismatch(BlobError):
    code = "WIDTH_MISMATCH"


def parse_mode(text) -> int | None:
    """``'8x'``/``'4'``/``'none'`` style names to bits per index."""
    if text is None:
        return None
    t = str(text).strip().lower()
    if t in ("none", "0", ""):
        return None
    if t in RATIO_NAMES:
        return RATIO_NAMES[t]
    if t.isdigit() and int(t) in INDEX_BITS:
        return int(t)
    raise ValueError(f"unknown compression mode {text!r}; use none, 5.3x, 8x or 16x")


def nominal_ratio(b: int) -> float:
    return 32 / b


def payload_bytes(n: int, b: int) -> int:
    return (n * b + 7) // 8


# --- bit packing -------------------------------------------------------------


def pack_indices(indices, b: int) -> bytes:
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= 1 << b):
        raise ValueError(f"index outside [0, {1 << b})")
    bits = ((idx[:, None] >> np.arange(b)) & 1).astype(np.uint8).ravel()
    return np.packbits(bits, bitorder="little").tobytes()


def unpack_indices(payload: bytes, b: int, n: int) -> np.ndarray:
    need = payload_bytes(n, b)
    if len(payload) < need:
        raise TruncatedPayload(f"payload has {len(payload)} bytes, need {need}")
    raw = np.frombuffer(payload, dtype=np.uint8, count=need)
    bits = np.unpackbits(raw, bitorder="little")[: n * b].reshape(n, b).astype(np.int64)
    return (bits << np.arange(b)).sum(axis=1)


def iter_indices(payload: bytes, b: int, n: int) -> Iterator[int]:
    """Streaming unpack: one byte of look-ahead, no buffering of the stream."""
    need = payload_bytes(n, b)
    if len(payload) < need:
        raise TruncatedPayload(f"payload has {len(payload)} bytes, need {need}")
    mask = (1 << b) - 1
    buf = nbits = pos = 0
    for _ in range(n):
        while nbits < b:
            buf |= payload[pos] << nbits
            pos += 1
            nbits += 8
        yield buf & mask
        buf >>= b
        nbits -= b


# --- blob ---------------------------------------------------------------------


@dataclass(frozen=True)
class CompressedBlob:
    b: int
    n: int
    entry_width: int
    e_w: int
    codebook: tuple[int, ...]
    payload: bytes

    @property
    def codebook_bytes(self) -> int:
        return len(self.codebook) * self.entry_width // 8

    @property
    def nbytes(self) -> int:
        return HEADER_BYTES + self.codebook_bytes + len(self.payload)

    def to_bytes(self) -> bytes:
        head = HEADER.pack(BLOB_MAGIC, BLOB_VERSION, self.b, self.n, self.entry_width,
                           self.e_w, 0)
        dtype = "<i1" if self.entry_width == 8 else "<i2"
        return head + np.asarray(self.codebook, dtype=dtype).tobytes() + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedBlob":
        data = bytes(data)
        if len(data) < HEADER_BYTES:
            raise TruncatedPayload(f"blob shorter than its {HEADER_BYTES}-byte header")
        magic, version, b, n, width, e_w, _ = HEADER.unpack_from(data)
        if magic != BLOB_MAGIC:
            raise BlobError(f"bad blob magic {magic!r}")
        if version != BLOB_VERSION:
            raise BlobError(f"unsupported blob version {version}")
        if b not in INDEX_BITS:
            raise WidthMismatch(f"index width {b} not in {INDEX_BITS}")
        if width not in ENTRY_WIDTHS:
            raise WidthMismatch(f"entry width {width} not in {ENTRY_WIDTHS}")
        cb_bytes = (1 << b) * width // 8
        need = HEADER_BYTES + cb_bytes + payload_bytes(n, b)
        if len(data) < need:
            raise TruncatedPayload(f"blob has {len(data)} bytes, header implies {need}")
        if len(data) > need:
            raise BlobError(f"{len(data) - need} trailing bytes after payload")
        dtype = "<i1" if width == 8 else "<i2"
        codebook = np.frombuffer(data, dtype=dtype, count=1 << b, offset=HEADER_BYTES)
        return cls(b, n, width, e_w, tuple(int(v) for v in codebook),
                   data[HEADER_BYTES + cb_bytes:])


def _check(blob: CompressedBlob) -> None:
    if blob.b not in INDEX_BITS or blob.entry_width not in ENTRY_WIDTHS:
        raise WidthMismatch(f"unsupported widths b={blob.b} entry={blob.entry_width}")
    if len(blob.codebook) != 1 << blob.b:
        raise WidthMismatch(f"codebook has {len(blob.codebook)} entries, b={blob.b} needs {1 << blob.b}")
    lim = 1 << (blob.entry_width - 1)
    if any(not -lim <= v < lim for v in blob.codebook):
        raise WidthMismatch(f"codebook entry outside int{blob.entry_width}")


def decompress(blob: CompressedBlob) -> tuple[np.ndarray, int]:
    """Integer weights (row-major, length ``n``) and their exponent."""
    _check(blob)
    idx = unpack_indices(blob.payload, blob.b, blob.n)
    return np.asarray(blob.codebook, dtype=np.int64)[idx], blob.e_w


def stream_decompress(blob: CompressedBlob) -> Iterator[int]:
    _check(blob)
    codebook = blob.codebook
    for k in iter_indices(blob.payload, blob.b, blob.n):
        yield codebook[k]


# --- k-means ------------------------------------------------------------------


def nearest(values: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid; ties go to the lower index."""
    dist = np.abs(values[:, None] - centroids[None, :])
    return np.argmin(dist, axis=1)


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    mse_history: list[float]
    iterations: int


def kmeans_1d(values, k: int, max_iter: int = MAX_ITER) -> KMeansResult:
    """Deterministic Lloyd iterations from uniform levels over [min, max].

    When the input has at most ``k`` distinct values those values are the
    codebook (padded with the largest), which is the zero-error fixpoint.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    uniq = np.unique(x)
    if uniq.size <= k:
        cent = np.concatenate([uniq, np.full(k - uniq.size, uniq[-1])])
        assign = nearest(x, cent)
        return KMeansResult(cent, assign, [0.0], 0)
    cent = np.linspace(x.min(), x.max(), k)
    assign = nearest(x, cent)
    history = [float(np.mean((x - cent[assign]) ** 2))]
    it = 0
    for it in range(1, max_iter + 1):
        counts = np.bincount(assign, minlength=k)
        sums = np.bincount(assign, weights=x, minlength=k)
        filled = counts > 0
        cent = np.where(filled, sums / np.maximum(counts, 1), cent)
        new = nearest(x, cent)
        history.append(float(np.mean((x - cent[new]) ** 2)))
        if history[-1] > history[-2] * (1 + 1e-12) + 1e-300:
            raise AssertionError(f"k-means MSE increased at iteration {it}")
        if np.array_equal(new, assign):
            break
        assign = new
    return KMeansResult(cent, assign, history, it)


def compress(weights, b: int, entry_width: int = 8) -> CompressedBlob:
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise ValueError("cannot compress an empty tensor")
    if not np.all(np.isfinite(w)):
        raise ValueError("compress: non-finite weights")
    if b not in INDEX_BITS:
        raise ValueError(f"bits per index must be one of {INDEX_BITS}")
    if entry_width not in ENTRY_WIDTHS:
        raise ValueError(f"entry width must be one of {ENTRY_WIDTHS}")
    flat = w.ravel()
    km = kmeans_1d(flat, 1 << b)
    e_w = choose_exponent(km.centroids, entry_width)
    if not -128 <= e_w <= 127:
        raise ValueError(f"codebook exponent {e_w} does not fit the i8 header field")
    codebook = quantize(km.centroids, e_w, entry_width)
    assign = nearest(flat, np.ldexp(codebook.astype(np.float64), e_w))
    return CompressedBlob(b, flat.size, entry_width, e_w,
                          tuple(int(v) for v in codebook), pack_indices(assign, b))


def reconstruct(blob: CompressedBlob) -> np.ndarray:
    ints, e_w = decompress(blob)
    return np.ldexp(ints.astype(np.float64), e_w)


# --- baselines ----------------------------------------------------------------


def quantize_uniform(weights, bits: int) -> np.ndarray:
    """Symmetric uniform quantizer with ``2**bits`` levels over [-max|w|, max|w|]."""
    if bits not in (2, 4, 6, 8):
        raise ValueError("uniform quantizer supports 2, 4, 6 or 8 bits")
    w = np.asarray(weights, dtype=np.float64)
    m = float(np.max(np.abs(w))) if w.size else 0.0
    if m == 0.0:
        return np.zeros_like(w)
    levels = (1 << bits) - 1
    step = 2 * m / levels
    idx = np.clip(np.rint((w + m) / step), 0, levels)
    return idx * step - m


def prune_magnitude(weights, sparsity: float) -> np.ndarray:
    """Zero the ``floor(sparsity * n)`` smallest-magnitude weights (stable by index)."""
    if not 0 <= sparsity < 1:
        raise ValueError("sparsity must be in [0, 1)")
    w = np.asarray(weights, dtype=np.float64)
    flat = w.ravel().copy()
    k = int(np.floor(sparsity * flat.size))
    if k:
        order = np.argsort(np.abs(flat), kind="stable")
        flat[order[:k]] = 0.0
    return flat.reshape(w.shape)


# --- accounting ---------------------------------------------------------------


@dataclass(frozen=True)
class RatioReport:
    nominal_ratio: float
    actual_ratio: float
    original_bytes: int
    compressed_bytes: int

    def to_dict(self) -> dict:
        return {
            "nominal_ratio": self.nominal_ratio,
            "actual_ratio": self.actual_ratio,
            "original_bytes": self.original_bytes,
            "compressed_bytes": self.compressed_bytes,
        }


def ratio_report(blobs, n: int | None = None) -> RatioReport:
    """Ratio against float32 storage for one blob or a group sharing one ``b``."""
    if isinstance(blobs, CompressedBlob):
        blobs = [blobs]
    blobs = list(blobs)
    if not blobs or len({bl.b for bl in blobs}) != 1:
        raise ValueError("ratio_report needs blobs with one common index width")
    total_n = sum(bl.n for bl in blobs) if n is None else n
    comp = sum(bl.nbytes for bl in blobs)
    return RatioReport(nominal_ratio(blobs[0].b), 4 * total_n / comp, 4 * total_n, comp)
