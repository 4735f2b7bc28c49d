"""Benchmark topologies with seeded synthetic weights.

The trained models behind the published numbers are not available, so the
profiles only reproduce shapes: performance figures depend on dimensions
alone, accuracy is replaced by oracle comparisons.
"""

from __future__ import annotations

import numpy as np

from .activation import ActivationKind
from .loadable import (
    ExecMode, LayerSpec, LayerType, LayerWeights, Manifest, param_count, weight_shape,
)

KWS_INPUT, KWS_HIDDEN, KWS_CLASSES, KWS_FRAMES = 10, 154, 12, 10

# Bi-LSTM stand-in: single-feature ECG samples, hidden size picked so the two
# directions plus the classifier land closest to 40K parameters
AFIB_INPUT, AFIB_CLASSES, AFIB_FRAMES = 1, 2, 64


def random_weights(m: Manifest, seed: int, bias_scale: float = 0.1) -> list[LayerWeights]:
    """U(-1, 1) / sqrt(fan_in) weights and U(-bias_scale, bias_scale) biases."""
    rng = np.random.default_rng(seed)
    out = []
    for layer in m.layers:
        rows, cols = weight_shape(layer.type, layer.input_dim, layer.output_dim)
        gates = [rng.uniform(-1, 1, (rows, cols)) / np.sqrt(cols)
                 for _ in range(layer.type.n_gates)]
        biases = [rng.uniform(-bias_scale, bias_scale, rows) for _ in range(layer.type.n_gates)]
        out.append(LayerWeights(gates, biases))
    return out


def kws_gru(exec_mode: ExecMode = ExecMode.STREAMING, weight_bits: int = 8,
            compression: int | None = None) -> Manifest:
    return Manifest(
        network="kws-gru",
        layers=(LayerSpec(LayerType.GRU, KWS_INPUT, KWS_HIDDEN),
                LayerSpec(LayerType.FC, KWS_HIDDEN, KWS_CLASSES, ActivationKind.IDENTITY)),
        seq_len=KWS_FRAMES,
        exec_mode=exec_mode,
        weight_bits=weight_bits,
        compression=compression,
    )


def afib_hidden(target: int = 40_000, lo: int = 39_000, hi: int = 41_000) -> int:
    """Hidden size whose Bi-LSTM + classifier parameter count is closest to ``target``."""
    best = None
    for h in range(1, 512):
        total = afib_params(h)
        if lo <= total <= hi and (best is None or abs(total - target) < abs(afib_params(best) - target)):
            best = h
    if best is None:
        raise ValueError("no hidden size lands in the parameter window")
    return best


def afib_params(hidden: int) -> int:
    return (2 * param_count(LayerType.LSTM, AFIB_INPUT, hidden)
            + param_count(LayerType.FC, 2 * hidden, AFIB_CLASSES))


def afib_bilstm(weight_bits: int = 8, compression: int | None = None) -> tuple[Manifest, Manifest, Manifest]:
    """Forward LSTM, backward LSTM and the classifier as three resident models."""
    h = afib_hidden()
    direction = Manifest(
        network="afib-lstm",
        layers=(LayerSpec(LayerType.LSTM, AFIB_INPUT, h),),
        seq_len=AFIB_FRAMES,
        exec_mode=ExecMode.BATCH,
        weight_bits=weight_bits,
        compression=compression,
    )
    head = Manifest(
        network="afib-head",
        layers=(LayerSpec(LayerType.FC, 2 * h, AFIB_CLASSES, ActivationKind.IDENTITY),),
        seq_len=1,
        exec_mode=ExecMode.BATCH,
        weight_bits=weight_bits,
        compression=compression,
    )
    return (direction.with_options(network="afib-lstm-fwd"),
            direction.with_options(network="afib-lstm-bwd"), head)


def random_small_net(seed: int, weight_bits: int = 8, compression: int | None = None,
                     max_dim: int = 8, max_seq: int = 4) -> tuple[Manifest, list[LayerWeights], np.ndarray]:
    """Desk-scale GRU/LSTM net (optionally with an FC head), weights and a U(-1, 1) input."""
    rng = np.random.default_rng(seed)
    rtype = LayerType.GRU if rng.integers(2) == 0 else LayerType.LSTM
    i, h = (int(v) for v in rng.integers(1, max_dim + 1, 2))
    layers = [LayerSpec(rtype, i, h)]
    if rng.integers(2):
        kind = (ActivationKind.IDENTITY, ActivationKind.TANH)[int(rng.integers(2))]
        layers.append(LayerSpec(LayerType.FC, h, int(rng.integers(1, max_dim + 1)), kind))
    seq = int(rng.integers(1, max_seq + 1))
    m = Manifest(f"small-{seed}", tuple(layers), seq, ExecMode.BATCH, weight_bits, compression)
    weights = random_weights(m, int(rng.integers(2**31)))
    x = rng.uniform(-1, 1, (seq, i))
    return m, weights, x
