import numpy as np
import pytest

from mdbeam import compress, nn
from mdbeam.bnn import build_pipeline
from mdbeam.compress import (ModelFormatError, compress_pipeline,
                             huffman_code_lengths, huffman_decode,
                             huffman_encode, load_compressed, load_model,
                             load_pipeline, prune, quantize, save_model,
                             save_pipeline)


def small_model(seed=0):
    return nn.init_model(nn.default_arch(4, 3, conv_channels=4, hidden=16),
                         (2, 4, 3), seed)


class TestModelFile:
    def test_roundtrip_bitwise(self, tmp_path):
        m = small_model(1)
        # nontrivial batch-norm running state must survive
        m.forward(np.random.default_rng(0).standard_normal((8, 2, 4, 3)),
                  train=True)
        path = tmp_path / "m.bnn"
        save_model(m, path)
        back = load_model(path)
        x = np.random.default_rng(1).standard_normal((4, 2, 4, 3))
        np.testing.assert_array_equal(back.forward(x), m.forward(x))
        bn, bn2 = m.layers[1], back.layers[1]
        np.testing.assert_array_equal(bn.running_mean, bn2.running_mean)
        np.testing.assert_array_equal(bn.running_var, bn2.running_var)

    def test_pipeline_roundtrip(self, tmp_path):
        pipe = build_pipeline("power-min", 4, 3, seed=2, conv_channels=4,
                              hidden=16)
        path = tmp_path / "p.bnn"
        save_pipeline(pipe, path)
        back = load_pipeline(path)
        assert back.problem == "power-min"
        assert (back.pad_antennas, back.pad_users) == (4, 3)
        assert back.input_scale == pipe.input_scale

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.bnn"
        path.write_bytes(b"XXXX" + bytes(20))
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_truncated_weights(self, tmp_path):
        m = small_model()
        path = tmp_path / "m.bnn"
        save_model(m, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_model_without_meta_rejected_as_pipeline(self, tmp_path):
        m = small_model()
        path = tmp_path / "m.bnn"
        save_model(m, path)
        with pytest.raises(ModelFormatError):
            load_pipeline(path)


class TestPrune:
    def test_thresholding(self):
        m = small_model(3)
        pruned, report = prune(m, 0.05)
        for (i, orig), (_, new) in zip(compress._weight_layers(m),
                                       compress._weight_layers(pruned)):
            mask = np.abs(orig.W) < 0.05
            assert np.all(new.W[mask] == 0)
            np.testing.assert_array_equal(new.W[~mask], orig.W[~mask])
            np.testing.assert_array_equal(new.b, orig.b)
        assert 0 < report["sparsity"] < 1

    def test_original_untouched(self):
        m = small_model(3)
        before = [p.copy() for p in m.params()]
        prune(m, 1.0)
        for p, b in zip(m.params(), before):
            np.testing.assert_array_equal(p, b)

    def test_zero_threshold_is_identity(self):
        m = small_model(4)
        pruned, report = prune(m, 0.0)
        for p, q in zip(m.params(), pruned.params()):
            np.testing.assert_array_equal(p, q)
        assert report["sparsity"] == 0.0

    def test_dead_neuron_count(self):
        m = nn.init_model([{"type": "dense", "in_dim": 3, "out_dim": 2}],
                          (3,), 0)
        m.layers[0].W[:, :] = [[1.0, 0.0], [0.5, 0.0], [2.0, 0.0]]
        # dense dead neurons counted over input units (rows)
        m.layers[0].W[1, :] = 0.0
        _, report = prune(m, 0.1)
        assert report["layers"][0]["dead_neurons"] == 1

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            prune(small_model(), -1.0)


class TestQuantize:
    def test_codebook_size_bound(self):
        m = small_model(5)
        for bits in (2, 4, 6):
            quant, report = quantize(m, bits)
            for _, layer in compress._weight_layers(quant):
                uniq = np.unique(layer.W[layer.W != 0])
                assert len(uniq) <= 2 ** bits

    def test_zeros_stay_zero(self):
        m, _ = prune(small_model(6), 0.08)
        quant, _ = quantize(m, 4)
        for (_, a), (_, b) in zip(compress._weight_layers(m),
                                  compress._weight_layers(quant)):
            np.testing.assert_array_equal(a.W == 0, b.W == 0)

    def test_high_bits_lossless_for_small_codebook(self):
        # a weight matrix with 7 distinct values fits exactly in 3 bits
        m = nn.init_model([{"type": "dense", "in_dim": 7, "out_dim": 2}],
                          (7,), 0)
        vals = np.arange(1.0, 8.0)
        m.layers[0].W[:, 0] = vals
        m.layers[0].W[:, 1] = vals
        quant, report = quantize(m, 3)
        np.testing.assert_array_equal(quant.layers[0].W, m.layers[0].W)
        assert report["layers"][0]["distortion"] == 0.0

    def test_distortion_decreases_with_bits(self):
        m = small_model(7)
        d = []
        for bits in (1, 3, 6):
            _, report = quantize(m, bits)
            d.append(np.mean([l["distortion"] for l in report["layers"]
                              if not l["skipped"]]))
        assert d[0] > d[1] > d[2]

    def test_deterministic(self):
        m = small_model(8)
        a, _ = quantize(m, 4, seed=1)
        b, _ = quantize(m, 4, seed=1)
        for pa, pb in zip(a.params(), b.params()):
            np.testing.assert_array_equal(pa, pb)

    def test_bits_range(self):
        with pytest.raises(ValueError):
            quantize(small_model(), 0)
        with pytest.raises(ValueError):
            quantize(small_model(), 17)


class TestHuffman:
    def test_known_lengths(self):
        # textbook frequencies: a:45 b:13 c:12 d:16 e:9 f:5
        freqs = {0: 45, 1: 13, 2: 12, 3: 16, 4: 9, 5: 5}
        lengths = huffman_code_lengths(freqs)
        assert lengths[0] == 1
        assert sorted(lengths.values()) == [1, 3, 3, 3, 4, 4]

    def test_single_symbol_stream(self):
        payload, lengths, nbits = huffman_encode([7] * 10)
        assert lengths == {7: 1}
        assert nbits == 10
        assert huffman_decode(payload, lengths, nbits, 10) == [7] * 10

    def test_roundtrip_fuzz(self):
        # 10^4 random symbol streams with skewed distributions
        rng = np.random.default_rng(2024)
        for trial in range(10_000):
            n_sym = int(rng.integers(1, 12))
            length = int(rng.integers(1, 60))
            probs = rng.dirichlet(np.full(n_sym, 0.4))
            stream = rng.choice(n_sym, size=length, p=probs).tolist()
            payload, lengths, nbits = huffman_encode(stream)
            assert huffman_decode(payload, lengths, nbits,
                                  len(stream)) == stream

    def test_average_length_near_entropy(self):
        rng = np.random.default_rng(5)
        stream = rng.choice(4, size=20000, p=[0.7, 0.15, 0.1, 0.05]).tolist()
        payload, lengths, nbits = huffman_encode(stream)
        p = np.array([0.7, 0.15, 0.1, 0.05])
        entropy = -(p * np.log2(p)).sum()
        assert entropy <= nbits / len(stream) <= entropy + 1.0

    def test_corrupt_stream_detected(self):
        payload, lengths, nbits = huffman_encode([0, 1, 2, 0, 1, 0, 0, 2])
        with pytest.raises(ValueError):
            huffman_decode(payload, lengths, nbits, 100)
        with pytest.raises(ValueError):
            huffman_decode(payload[:-1] if len(payload) > 1 else b"",
                           lengths, nbits, 8)

    def test_empty_stream_rejected(self):
        with pytest.raises(ValueError):
            huffman_encode([])


class TestCompressPipeline:
    def test_roundtrip_bit_exact(self, tmp_path):
        m = small_model(9)
        path = tmp_path / "m.bnnz"
        quant, report = compress_pipeline(m, threshold=0.02, bits=5,
                                          path=path)
        back = load_compressed(path)
        for a, b in zip(quant.params(), back.params()):
            np.testing.assert_array_equal(a, b)
        x = np.random.default_rng(3).standard_normal((4, 2, 4, 3))
        np.testing.assert_array_equal(back.forward(x), quant.forward(x))

    def test_ratio_reported(self, tmp_path):
        m = small_model(10)
        _, report = compress_pipeline(m, threshold=1e-3, bits=6,
                                      path=tmp_path / "m.bnnz")
        assert report["ratio"] > 1.0
        assert report["compressed_bytes"] == \
            (tmp_path / "m.bnnz").stat().st_size

    def test_metric_delta_tracked(self, tmp_path):
        m = small_model(11)
        x = np.random.default_rng(4).standard_normal((16, 2, 4, 3))

        def metric(model):
            return float(model.forward(x).mean())

        _, report = compress_pipeline(m, threshold=0.01, bits=6,
                                      path=tmp_path / "m.bnnz",
                                      metric=metric)
        assert report["metric_before"] != 0
        assert "metric_rel_change" in report

    def test_pipeline_meta_preserved(self, tmp_path):
        pipe = build_pipeline("sinr-balance", 4, 3, seed=12, conv_channels=4,
                              hidden=16)
        path = tmp_path / "p.bnnz"
        compress_pipeline(pipe.model, 0.01, 6, path,
                          pipeline_meta=compress._pipeline_meta(pipe))
        model, meta = load_compressed(path, with_meta=True)
        assert meta["problem"] == "sinr-balance"

    def test_trailing_bytes_detected(self, tmp_path):
        m = small_model(13)
        path = tmp_path / "m.bnnz"
        compress_pipeline(m, 0.01, 4, path)
        with open(path, "ab") as f:
            f.write(b"\x00" * 4)
        with pytest.raises(ModelFormatError):
            load_compressed(path)
