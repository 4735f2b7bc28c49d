import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from rnnaccel import codec
from rnnaccel.codec import (
    BlobError, CompressedBlob, TruncatedPayload, WidthMismatch, compress, decompress,
    iter_indices, kmeans_1d, nominal_ratio, pack_indices, prune_magnitude, quantize_uniform,
    ratio_report, reconstruct, stream_decompress, unpack_indices,
)

B = st.sampled_from([2, 4, 6])
FINITE = st.floats(-10, 10).filter(lambda v: v == 0 or abs(v) > 1e-30)


def mse(a, b):
    return float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))


class TestPacking:
    def test_lsb_first_byte(self):
        np.testing.assert_array_equal(unpack_indices(bytes([0b11100100]), 2, 4), [0, 1, 2, 3])
        assert pack_indices([0, 1, 2, 3], 2) == bytes([0b11100100])

    def test_six_bit_straddles_bytes(self):
        # 63 then 1: bits 0..5 set, then bit 6 set
        assert pack_indices([63, 1], 6) == bytes([0b01111111, 0])

    @given(B, st.data())
    def test_bijection(self, b, data):
        idx = data.draw(st.lists(st.integers(0, (1 << b) - 1), max_size=300))
        payload = pack_indices(idx, b)
        assert len(payload) == (len(idx) * b + 7) // 8
        assert unpack_indices(payload, b, len(idx)).tolist() == idx
        assert list(iter_indices(payload, b, len(idx))) == idx

    def test_out_of_range_index(self):
        with pytest.raises(ValueError):
            pack_indices([4], 2)

    def test_truncated(self):
        with pytest.raises(TruncatedPayload):
            unpack_indices(b"\x00", 4, 3)
        with pytest.raises(TruncatedPayload):
            list(iter_indices(b"\x00", 4, 3))


class TestKMeans:
    def test_distinct_values_recovered(self):
        vals = np.repeat([-0.75, -0.125, 0.25, 0.5], [5, 9, 3, 7])
        km = kmeans_1d(np.random.default_rng(1).permutation(vals), 4)
        assert sorted(km.centroids) == [-0.75, -0.125, 0.25, 0.5]
        # zero within-cluster variance: every value sits on its centroid
        assert mse(km.centroids[km.assignment], np.random.default_rng(1).permutation(vals)) == 0

    def test_distinct_values_lossless_blob(self):
        vals = np.tile([-0.5, -0.25, 0.25, 0.5], 10)
        assert np.array_equal(reconstruct(compress(vals, 2)), vals)

    @given(arrays(np.float64, st.integers(5, 200), elements=FINITE), B)
    def test_descent(self, x, b):
        km = kmeans_1d(x, 1 << b)
        h = km.mse_history
        assert all(h2 <= h1 * (1 + 1e-12) + 1e-300 for h1, h2 in zip(h, h[1:]))
        assert km.iterations <= codec.MAX_ITER

    @given(arrays(np.float64, st.integers(5, 200), elements=FINITE), B)
    def test_dominates_uniform(self, x, b):
        km = kmeans_1d(x, 1 << b)
        assert mse(km.centroids[km.assignment], x) <= mse(quantize_uniform(x, b), x) + 1e-12

    def test_empty_cluster_keeps_centroid(self):
        # two far clumps leave the middle uniform levels empty
        rng = np.random.default_rng(0)
        x = np.concatenate([rng.uniform(0, 0.05, 30), rng.uniform(0.95, 1, 30)])
        km = kmeans_1d(x, 16)
        init = np.linspace(x.min(), x.max(), 16)
        middle = (init > 0.1) & (init < 0.9)
        np.testing.assert_array_equal(km.centroids[middle], init[middle])
        assert not np.any(np.isin(np.flatnonzero(middle), km.assignment))


class TestCompress:
    def test_constant(self):
        blob = compress(np.full((4, 4), 0.5), 2)
        e = blob.e_w
        np.testing.assert_array_equal(reconstruct(blob), np.full(16, round(0.5 / 2.0**e) * 2.0**e))

    def test_byte_arithmetic(self):
        w = np.random.default_rng(0).uniform(-1, 1, 1024)
        blob = compress(w, 4)
        assert len(blob.payload) == 512 and blob.codebook_bytes == 16
        assert blob.nbytes == 512 + 16 + 11
        rep = ratio_report(blob)
        assert rep.nominal_ratio == 8
        assert rep.actual_ratio == pytest.approx(4096 / 539)

    def test_kws_sized_ratio(self):
        rep = ratio_report(compress(np.random.default_rng(3).standard_normal(78090), 4))
        assert rep.nominal_ratio == 8.0 and rep.actual_ratio >= 7.9

    def test_nominal(self):
        assert nominal_ratio(2) == 16.0
        assert nominal_ratio(4) == 8.0
        assert nominal_ratio(6) == 32 / 6 and round(nominal_ratio(6), 2) == 5.33

    @given(arrays(np.float64, st.integers(1, 120), elements=FINITE), B, st.sampled_from([8, 16]))
    def test_idempotent(self, w, b, width):
        blob = compress(w, b, width)
        rec = reconstruct(blob)
        again = compress(rec, b, width)
        np.testing.assert_array_equal(reconstruct(again), rec)

    @given(arrays(np.float64, st.integers(1, 120), elements=FINITE), B, st.sampled_from([8, 16]))
    def test_nearest_centroid(self, w, b, width):
        blob = compress(w, b, width)
        cents = np.ldexp(np.array(blob.codebook, dtype=float), blob.e_w)
        dist = np.abs(w[:, None] - cents[None, :])
        got = np.abs(w - reconstruct(blob))
        np.testing.assert_allclose(got, dist.min(axis=1), atol=0)

    def test_deterministic_bytes(self):
        w = np.random.default_rng(5).standard_normal((40, 30))
        assert compress(w, 6).to_bytes() == compress(w.copy(), 6).to_bytes()

    def test_row_major_order(self):
        w = np.array([[0.0, 1.0], [2.0, 3.0]])
        ints, e = decompress(compress(w, 2, 16))
        np.testing.assert_allclose(ints * 2.0**e, w.ravel(), atol=2.0**e)

    @pytest.mark.parametrize("bad", [np.array([1.0, np.nan]), np.array([np.inf]), np.array([])])
    def test_rejects_bad_input(self, bad):
        with pytest.raises(ValueError):
            compress(bad, 4)

    def test_exponent_must_fit_header(self):
        with pytest.raises(ValueError):
            compress([1e-300, 2e-300], 2)

    def test_rejects_bad_bits(self):
        with pytest.raises(ValueError):
            compress([1.0, 2.0], 3)


class TestBlob:
    @given(arrays(np.float64, st.integers(1, 80), elements=FINITE), B, st.sampled_from([8, 16]))
    def test_bytes_roundtrip(self, w, b, width):
        blob = compress(w, b, width)
        data = blob.to_bytes()
        assert len(data) == blob.nbytes
        back = CompressedBlob.from_bytes(data)
        assert back == blob
        ints, _ = decompress(back)
        assert list(stream_decompress(back)) == ints.tolist()

    def test_header_layout(self):
        blob = compress(np.arange(10.0), 4, 16)
        data = blob.to_bytes()
        assert data[:2] == b"NC" and data[2] == 1 and data[3] == 4
        assert int.from_bytes(data[4:8], "little") == 10
        assert data[8] == 16 and int.from_bytes(data[9:10], "little", signed=True) == blob.e_w

    def test_truncated_and_trailing(self):
        data = compress(np.arange(20.0), 4).to_bytes()
        with pytest.raises(TruncatedPayload):
            CompressedBlob.from_bytes(data[:-1])
        with pytest.raises(BlobError):
            CompressedBlob.from_bytes(data + b"\x00")

    def test_width_mismatch(self):
        blob = compress(np.arange(20.0), 4)
        with pytest.raises(WidthMismatch):
            decompress(CompressedBlob(2, blob.n, 8, blob.e_w, blob.codebook, blob.payload))
        data = bytearray(blob.to_bytes())
        data[8] = 12
        with pytest.raises(WidthMismatch):
            CompressedBlob.from_bytes(bytes(data))


class TestBaselines:
    def test_uniform_endpoints(self):
        np.testing.assert_array_equal(quantize_uniform([-1.0, 1.0], 2), [-1.0, 1.0])
        np.testing.assert_array_equal(quantize_uniform(np.zeros(5), 4), np.zeros(5))

    def test_uniform_gaussian_regression(self):
        w = np.random.default_rng(2024).standard_normal(10**4)
        step = 2 * np.max(np.abs(w)) / 15
        got = mse(quantize_uniform(w, 4), w)
        # frozen from a direct run; close to the step**2 / 12 approximation
        assert got == pytest.approx(0.02449772146845065, rel=1e-12)
        assert got == pytest.approx(step**2 / 12, rel=0.02)

    def test_prune_examples(self):
        w = np.array([3.0, -1.0, 2.0])
        np.testing.assert_array_equal(prune_magnitude(w, 0), w)
        np.testing.assert_array_equal(prune_magnitude(w, 1 / 3), [3.0, 0.0, 2.0])

    def test_prune_half_sort_oracle(self):
        w = np.array([0.5, -0.1, 0.3, -0.3, 0.9, 0.1, -0.7, 0.2, 0.0, 0.6])
        ranked = sorted(range(10), key=lambda i: (abs(w[i]), i))
        want = w.copy()
        want[ranked[:5]] = 0
        np.testing.assert_array_equal(prune_magnitude(w, 0.5), want)

    def test_prune_rejects_full_sparsity(self):
        with pytest.raises(ValueError):
            prune_magnitude([1.0], 1.0)


class TestRatio:
    @pytest.mark.parametrize("b", [2, 4, 6])
    def test_large_tensors_near_nominal(self, b):
        rep = ratio_report(compress(np.random.default_rng(b).standard_normal(16384), b))
        assert rep.nominal_ratio * 0.95 <= rep.actual_ratio < rep.nominal_ratio

    def test_ratio_grows_with_n(self):
        rng = np.random.default_rng(0)
        ratios = [ratio_report(compress(rng.standard_normal(n), 4)).actual_ratio
                  for n in (64, 1024, 16384)]
        assert ratios == sorted(ratios)

    def test_mixed_widths_rejected(self):
        w = np.arange(8.0)
        with pytest.raises(ValueError):
            ratio_report([compress(w, 2), compress(w, 4)])
