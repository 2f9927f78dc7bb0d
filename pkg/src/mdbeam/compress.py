"""Model lifecycle: serialization, pruning, weight-sharing quantization and
Huffman coding of the quantized weight streams.

The ``.bnn`` file stores the architecture header plus raw float64 weights;
the ``.bnnz`` file stores, per weight matrix, a small centroid codebook and
a canonical-Huffman-coded stream of codebook indices (index 0 is the pruned
zero weight), with unquantized parameters (biases, batch-norm state) kept
raw.  Decoding reconstructs the pruned + quantized model bit-exactly.
"""

from __future__ import annotations

import heapq
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import nn

_MODEL_MAGIC = b"BNNM"
_COMP_MAGIC = b"BNNZ"
_VERSION = 1


class ModelFormatError(ValueError):
    pass


def _state_arrays(layer):
    """All arrays needed to reproduce infer-mode behaviour bitwise."""
    if isinstance(layer, nn.BatchNorm):
        return [layer.gamma, layer.beta, layer.running_mean,
                layer.running_var]
    return layer.params()


def _set_state_arrays(layer, arrays):
    targets = _state_arrays(layer)
    for dst, src in zip(targets, arrays):
        dst[...] = src.reshape(dst.shape)


def _model_header(model, pipeline_meta=None):
    header = {"layers": model.specs(),
              "input_shape": list(model.input_shape)}
    if pipeline_meta:
        header["pipeline"] = pipeline_meta
    return header


def _pipeline_meta(pipeline):
    return {"problem": pipeline.problem,
            "pad_antennas": pipeline.pad_antennas,
            "pad_users": pipeline.pad_users,
            "out_users": pipeline.out_users,
            "input_scale": pipeline.input_scale,
            "feature_transform": pipeline.feature_transform,
            "input_features": pipeline.input_features,
            "symmetry_average": pipeline.symmetry_average}


def save_model(model, path, pipeline_meta=None):
    """Write magic, version, JSON header and raw little-endian weights."""
    header = json.dumps(_model_header(model, pipeline_meta)).encode()
    with open(path, "wb") as f:
        f.write(_MODEL_MAGIC)
        f.write(struct.pack("<HI", _VERSION, len(header)))
        f.write(header)
        for layer in model.layers:
            for arr in _state_arrays(layer):
                f.write(arr.astype("<f8").tobytes())


def _read_header(raw, magic):
    if raw[:4] != magic:
        raise ModelFormatError("bad magic")
    if len(raw) < 10:
        raise ModelFormatError("truncated file")
    version, hlen = struct.unpack_from("<HI", raw, 4)
    if version != _VERSION:
        raise ModelFormatError(f"unsupported version {version}")
    if len(raw) < 10 + hlen:
        raise ModelFormatError("truncated header")
    try:
        header = json.loads(raw[10:10 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError("corrupt header") from exc
    return header, 10 + hlen


def _build_model(header):
    layers = [nn.layer_from_spec(s) for s in header["layers"]]
    return nn.NNModel(layers, tuple(header["input_shape"]))


def load_model(path, with_meta=False):
    with open(path, "rb") as f:
        raw = f.read()
    header, off = _read_header(raw, _MODEL_MAGIC)
    model = _build_model(header)
    expected = sum(a.size for l in model.layers for a in _state_arrays(l))
    if len(raw) - off != 8 * expected:
        raise ModelFormatError("weight payload does not match header shapes")
    for layer in model.layers:
        arrays = []
        for arr in _state_arrays(layer):
            arrays.append(np.frombuffer(raw, "<f8", arr.size, off)
                          .reshape(arr.shape).copy())
            off += 8 * arr.size
        _set_state_arrays(layer, arrays)
    if with_meta:
        return model, header.get("pipeline")
    return model


def save_pipeline(pipeline, path):
    save_model(pipeline.model, path, _pipeline_meta(pipeline))


def load_pipeline(path):
    from .bnn import BNNPipeline

    model, meta = load_model(path, with_meta=True)
    if meta is None:
        raise ModelFormatError("file carries no pipeline metadata")
    return BNNPipeline(problem=meta["problem"], model=model,
                       pad_antennas=meta["pad_antennas"],
                       pad_users=meta["pad_users"],
                       out_users=meta["out_users"],
                       input_scale=meta["input_scale"],
                       feature_transform=meta.get("feature_transform",
                                                  "linear"),
                       input_features=meta.get("input_features", "planes"),
                       symmetry_average=meta.get("symmetry_average", 1))


# ---------------------------------------------------------------------------
# pruning

def _weight_layers(model):
    return [(i, l) for i, l in enumerate(model.layers)
            if isinstance(l, (nn.Dense, nn.Conv2D))]


def prune(model, threshold):
    """Zero all weights with magnitude below threshold (in place copy).

    Batch-norm parameters and biases are never pruned.  The report lists
    per-layer sparsity and structurally dead neurons (units whose entire
    outgoing weight set became zero).
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    pruned = model.copy()
    report = {"threshold": threshold, "layers": [], "sparsity": 0.0,
              "dead_neurons": 0}
    total = kept = 0
    for i, layer in _weight_layers(pruned):
        mask = np.abs(layer.W) < threshold
        layer.W[mask] = 0.0
        if isinstance(layer, nn.Dense):
            dead = int(np.sum(~np.any(layer.W != 0, axis=1)))
        else:
            dead = int(np.sum(~np.any(layer.W != 0, axis=(1, 2, 3))))
        n = layer.W.size
        z = int(mask.sum())
        report["layers"].append({"layer": i, "weights": n, "zeroed": z,
                                 "sparsity": z / n, "dead_neurons": dead})
        report["dead_neurons"] += dead
        total += n
        kept += n - z
    report["sparsity"] = 1.0 - kept / total if total else 0.0
    return pruned, report


# ---------------------------------------------------------------------------
# weight sharing (1-D k-means)

def _kmeans_1d(values, counts, k, seed, iters=100):
    """Weighted 1-D k-means with k-means++ style seeding."""
    rng = np.random.default_rng(seed)
    if len(values) <= k:
        return values.copy()
    probs = counts / counts.sum()
    centroids = [values[rng.choice(len(values), p=probs)]]
    for _ in range(k - 1):
        d2 = np.min((values[:, None] - np.array(centroids)[None, :]) ** 2,
                    axis=1)
        w = d2 * counts
        if w.sum() == 0:
            break
        centroids.append(values[rng.choice(len(values), p=w / w.sum())])
    c = np.array(sorted(centroids))
    for _ in range(iters):
        assign = np.argmin(np.abs(values[:, None] - c[None, :]), axis=1)
        newc = c.copy()
        for j in range(len(c)):
            m = assign == j
            if m.any():
                newc[j] = np.average(values[m], weights=counts[m])
        newc = np.sort(newc)
        if np.array_equal(newc, c):
            break
        c = newc
    return c


def quantize(model, bits, seed=0):
    """Cluster each weight matrix's nonzeros into <= 2^bits shared values.

    Returns (quantized model, report) where the report carries the mean
    squared replacement distortion per layer.
    """
    if not 1 <= bits <= 16:
        raise ValueError("bits must be in [1, 16]")
    quant = model.copy()
    report = {"bits": bits, "layers": []}
    for i, layer in _weight_layers(quant):
        w = layer.W.reshape(-1)
        nz = w != 0
        if not nz.any():
            report["layers"].append({"layer": i, "skipped": True})
            continue
        values, counts = np.unique(w[nz], return_counts=True)
        c = _kmeans_1d(values, counts.astype(float), 2 ** bits,
                       seed=(seed, i))
        assign = np.argmin(np.abs(w[nz, None] - c[None, :]), axis=1)
        before = w[nz].copy()
        w[nz] = c[assign]
        report["layers"].append({
            "layer": i, "skipped": False, "codebook_size": len(c),
            "distortion": float(((w[nz] - before) ** 2).mean())})
    return quant, report


# ---------------------------------------------------------------------------
# canonical Huffman coding

def huffman_code_lengths(freqs):
    """Code length per symbol from a frequency dict (single symbol -> 1)."""
    items = sorted(freqs.items())
    if not items:
        raise ValueError("empty symbol stream")
    if len(items) == 1:
        return {items[0][0]: 1}
    heap = [(f, i, (s,)) for i, (s, f) in enumerate(items)]
    heapq.heapify(heap)
    lengths = {s: 0 for s, _ in items}
    counter = len(items)
    while len(heap) > 1:
        fa, _, sa = heapq.heappop(heap)
        fb, _, sb = heapq.heappop(heap)
        for s in sa + sb:
            lengths[s] += 1
        heapq.heappush(heap, (fa + fb, counter, sa + sb))
        counter += 1
    return lengths


def _canonical_codes(lengths):
    order = sorted(lengths, key=lambda s: (lengths[s], s))
    codes = {}
    code = 0
    prev_len = 0
    for s in order:
        code <<= (lengths[s] - prev_len)
        codes[s] = (code, lengths[s])
        prev_len = lengths[s]
        code += 1
    return codes


def huffman_encode(symbols):
    """Canonical Huffman encode; returns (payload bytes, lengths, n_bits)."""
    symbols = list(symbols)
    if not symbols:
        raise ValueError("cannot encode an empty stream")
    freqs = {}
    for s in symbols:
        freqs[s] = freqs.get(s, 0) + 1
    lengths = huffman_code_lengths(freqs)
    codes = _canonical_codes(lengths)
    acc = 0
    nbits = 0
    for s in symbols:
        code, ln = codes[s]
        acc = (acc << ln) | code
        nbits += ln
    pad = (-nbits) % 8
    acc <<= pad
    payload = acc.to_bytes((nbits + pad) // 8, "big") if nbits else b""
    return payload, lengths, nbits


def huffman_decode(payload, lengths, nbits, count):
    """Decode ``count`` symbols from a canonical Huffman bitstream."""
    codes = _canonical_codes(lengths)
    decode_map = {v: k for k, v in codes.items()}
    if nbits > 8 * len(payload):
        raise ValueError("bitstream shorter than declared length")
    bits = int.from_bytes(payload, "big") >> (8 * len(payload) - nbits) \
        if payload else 0
    out = []
    pos = nbits
    maxlen = max(l for _, l in codes.values())
    for _ in range(count):
        code = 0
        ln = 0
        while True:
            if pos == 0 or ln > maxlen:
                raise ValueError("corrupt bitstream")
            pos -= 1
            code = (code << 1) | ((bits >> pos) & 1)
            ln += 1
            if (code, ln) in decode_map:
                out.append(decode_map[(code, ln)])
                break
    if pos != 0:
        raise ValueError("trailing bits after decoding")
    return out


# ---------------------------------------------------------------------------
# full pipeline

def compress_pipeline(model, threshold, bits, path, pipeline_meta=None,
                      metric=None, seed=0):
    """prune -> quantize -> Huffman-encode -> write ``.bnnz``.

    ``metric``: optional callable model -> scalar; the report then carries
    the objective value before/after compression and its relative change.
    Returns (compressed model, report).
    """
    pruned, prune_report = prune(model, threshold)
    quant, quant_report = quantize(pruned, bits, seed=seed)
    layers_meta = []
    streams = []
    raw_arrays = []
    weight_ids = {id(l.W) for _, l in _weight_layers(quant)}
    for li, layer in enumerate(quant.layers):
        for arr in _state_arrays(layer):
            if id(arr) in weight_ids:
                w = arr.reshape(-1)
                codebook = np.unique(w[w != 0])
                lookup = {v: j + 1 for j, v in enumerate(codebook)}
                symbols = [0 if x == 0 else lookup[x] for x in w]
                payload, lengths, nbits = huffman_encode(symbols)
                layers_meta.append({
                    "kind": "coded", "layer": li, "shape": list(arr.shape),
                    "codebook": [float(v) for v in codebook],
                    "lengths": {str(s): l for s, l in lengths.items()},
                    "nbits": nbits, "count": len(symbols),
                    "payload_bytes": len(payload)})
                streams.append(payload)
            else:
                layers_meta.append({"kind": "raw", "layer": li,
                                    "shape": list(arr.shape)})
                raw_arrays.append(arr)
    header = {"layers": quant.specs(),
              "input_shape": list(quant.input_shape),
              "arrays": layers_meta}
    if pipeline_meta:
        header["pipeline"] = pipeline_meta
    hbytes = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(_COMP_MAGIC)
        f.write(struct.pack("<HI", _VERSION, len(hbytes)))
        f.write(hbytes)
        for payload in streams:
            f.write(payload)
        for arr in raw_arrays:
            f.write(arr.astype("<f8").tobytes())
    original = 10 + len(json.dumps(_model_header(model, pipeline_meta))) \
        + 8 * sum(a.size for l in model.layers for a in _state_arrays(l))
    compressed = os.path.getsize(path)
    report = {"prune": prune_report, "quantize": quant_report,
              "original_bytes": original, "compressed_bytes": compressed,
              "ratio": original / compressed}
    if metric is not None:
        before = metric(model)
        after = metric(quant)
        report["metric_before"] = before
        report["metric_after"] = after
        report["metric_rel_change"] = (after - before) / abs(before) \
            if before else 0.0
    return quant, report


def load_compressed(path, with_meta=False):
    """Reconstruct the pruned + quantized model from a ``.bnnz`` file."""
    with open(path, "rb") as f:
        raw = f.read()
    header, off = _read_header(raw, _COMP_MAGIC)
    model = _build_model(header)
    metas = header["arrays"]
    arrays = []
    for meta in metas:
        if meta["kind"] != "coded":
            continue
        payload = raw[off:off + meta["payload_bytes"]]
        if len(payload) != meta["payload_bytes"]:
            raise ModelFormatError("truncated coded stream")
        off += meta["payload_bytes"]
        lengths = {int(s): l for s, l in meta["lengths"].items()}
        symbols = huffman_decode(payload, lengths, meta["nbits"],
                                 meta["count"])
        codebook = np.array([0.0] + meta["codebook"])
        arrays.append(codebook[np.array(symbols)]
                      .reshape(meta["shape"]))
    coded_iter = iter(arrays)
    raw_metas = [m for m in metas if m["kind"] == "raw"]
    raw_arrays = []
    for meta in raw_metas:
        size = int(np.prod(meta["shape"]))
        arr = np.frombuffer(raw, "<f8", size, off).reshape(meta["shape"])
        raw_arrays.append(arr.copy())
        off += 8 * size
    if off != len(raw):
        raise ModelFormatError("trailing bytes in compressed file")
    raw_iter = iter(raw_arrays)
    meta_iter = iter(metas)
    for layer in model.layers:
        arrs = []
        for tgt in _state_arrays(layer):
            m = next(meta_iter)
            arrs.append(next(coded_iter) if m["kind"] == "coded"
                        else next(raw_iter))
        _set_state_arrays(layer, arrs)
    if with_meta:
        return model, header.get("pipeline")
    return model
