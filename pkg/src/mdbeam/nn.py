"""Minimal self-contained neural-network engine (numpy, float64).

Layers: 2-D convolution (same padding, stride 1), batch normalization,
activations (relu / softplus / abs), flatten and dense.  Training uses
standard backpropagation with Adam; per-layer learning-rate multipliers
support layer freezing for fine-tuning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# layers

class Layer:
    """Base layer: parameter-less unless overridden."""

    def params(self):
        return []

    def grads(self):
        return []

    def out_shape(self, in_shape):
        raise NotImplementedError

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, gout):
        raise NotImplementedError

    def spec(self):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, in_dim, out_dim):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.W = np.zeros((in_dim, out_dim))
        self.b = np.zeros(out_dim)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def init(self, rng):
        limit = np.sqrt(6.0 / self.in_dim)   # He-style fan-in, var 2/fan_in
        self.W = rng.uniform(-limit, limit, size=self.W.shape)
        self.b = np.zeros(self.out_dim)

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.gW, self.gb]

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_dim:
            raise ShapeError(f"Dense expects flat input of dim {self.in_dim}, "
                             f"got shape {in_shape}")
        return (self.out_dim,)

    def forward(self, x, train):
        if train:
            self._x = x
        return x @ self.W + self.b

    def backward(self, gout):
        if self._x is None:
            raise RuntimeError("backward without a cached forward pass")
        self.gW[...] = self._x.T @ gout
        self.gb[...] = gout.sum(axis=0)
        gin = gout @ self.W.T
        self._x = None
        return gin

    def spec(self):
        return {"type": "dense", "in_dim": self.in_dim, "out_dim": self.out_dim}


class Conv2D(Layer):
    """Same-padding, stride-1 2-D convolution on (B, C, H, W) tensors."""

    def __init__(self, in_channels, out_channels, kernel):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kh, self.kw = kernel
        self.W = np.zeros((out_channels, in_channels, self.kh, self.kw))
        self.b = np.zeros(out_channels)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._cols = None
        self._xshape = None

    def init(self, rng):
        fan_in = self.in_channels * self.kh * self.kw
        limit = np.sqrt(6.0 / fan_in)
        self.W = rng.uniform(-limit, limit, size=self.W.shape)
        self.b = np.zeros(self.out_channels)

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.gW, self.gb]

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeError(f"Conv2D expects (C={self.in_channels}, H, W) "
                             f"input, got shape {in_shape}")
        return (self.out_channels, in_shape[1], in_shape[2])

    def _im2col(self, x):
        B, C, H, W = x.shape
        ph, pw = self.kh // 2, self.kw // 2
        xp = np.pad(x, ((0, 0), (0, 0), (ph, self.kh - 1 - ph),
                        (pw, self.kw - 1 - pw)))
        cols = np.empty((B, C * self.kh * self.kw, H * W))
        idx = 0
        for c in range(C):
            for i in range(self.kh):
                for j in range(self.kw):
                    cols[:, idx, :] = xp[:, c, i:i + H, j:j + W] \
                        .reshape(B, H * W)
                    idx += 1
        return cols

    def forward(self, x, train):
        B, C, H, W = x.shape
        cols = self._im2col(x)
        # one large BLAS gemm instead of a batched einsum
        flat = cols.transpose(1, 0, 2).reshape(C * self.kh * self.kw, -1)
        out = (self.W.reshape(self.out_channels, -1) @ flat) \
            .reshape(self.out_channels, B, H * W).transpose(1, 0, 2) \
            + self.b[None, :, None]
        if train:
            self._cols, self._xshape = cols, x.shape
        return out.reshape(B, self.out_channels, H, W)

    def backward(self, gout):
        if self._cols is None:
            raise RuntimeError("backward without a cached forward pass")
        B, C, H, W = self._xshape
        g = gout.reshape(B, self.out_channels, H * W)
        self.gW[...] = np.einsum("bop,bkp->ok", g, self._cols) \
            .reshape(self.W.shape)
        self.gb[...] = g.sum(axis=(0, 2))
        gcols = np.einsum("ok,bop->bkp", self.W.reshape(self.out_channels, -1),
                          g)
        gin = np.zeros((B, C, H + self.kh - 1, W + self.kw - 1))
        ph, pw = self.kh // 2, self.kw // 2
        idx = 0
        for c in range(C):
            for i in range(self.kh):
                for j in range(self.kw):
                    gin[:, c, i:i + H, j:j + W] += gcols[:, idx, :] \
                        .reshape(B, H, W)
                    idx += 1
        self._cols = None
        return gin[:, :, ph:ph + H, pw:pw + W]

    def spec(self):
        return {"type": "conv2d", "in_channels": self.in_channels,
                "out_channels": self.out_channels,
                "kernel": [self.kh, self.kw]}


class BatchNorm(Layer):
    """Per-channel (4-D input) or per-feature (2-D input) batch norm."""

    def __init__(self, channels, eps=1e-5, momentum=0.9):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.ggamma = np.zeros(channels)
        self.gbeta = np.zeros(channels)
        self._cache = None

    def init(self, rng):
        self.gamma = np.ones(self.channels)
        self.beta = np.zeros(self.channels)
        self.running_mean = np.zeros(self.channels)
        self.running_var = np.ones(self.channels)

    def params(self):
        return [self.gamma, self.beta]

    def grads(self):
        return [self.ggamma, self.gbeta]

    def out_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ShapeError(f"BatchNorm over {self.channels} channels got "
                             f"input shape {in_shape}")
        return in_shape

    def _axes(self, x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _expand(self, v, ndim):
        return v if ndim == 2 else v[None, :, None, None]

    def forward(self, x, train):
        axes = self._axes(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mean
            self.running_var = m * self.running_var + (1 - m) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._expand(mean, x.ndim)) * self._expand(inv, x.ndim)
        if train:
            self._cache = (xhat, inv, axes, x.shape)
        return self._expand(self.gamma, x.ndim) * xhat \
            + self._expand(self.beta, x.ndim)

    def backward(self, gout):
        if self._cache is None:
            raise RuntimeError("backward without a cached forward pass")
        xhat, inv, axes, shape = self._cache
        m = np.prod([shape[a] for a in axes])
        self.ggamma[...] = (gout * xhat).sum(axis=axes)
        self.gbeta[...] = gout.sum(axis=axes)
        gxhat = gout * self._expand(self.gamma, gout.ndim)
        gin = (gxhat - gxhat.mean(axis=axes, keepdims=True)
               - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)) \
            * self._expand(inv, gout.ndim)
        self._cache = None
        return gin

    def spec(self):
        return {"type": "batchnorm", "channels": self.channels,
                "eps": self.eps, "momentum": self.momentum}


_ACTIVATIONS = {
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(float)),
    "softplus": (lambda x: np.logaddexp(0.0, x),
                 lambda x: 1.0 / (1.0 + np.exp(-x))),
    "abs": (np.abs, np.sign),
}


class Activation(Layer):
    def __init__(self, kind):
        if kind not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        self._x = None

    def init(self, rng):
        pass

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, train):
        if train:
            self._x = x
        return _ACTIVATIONS[self.kind][0](x)

    def backward(self, gout):
        if self._x is None:
            raise RuntimeError("backward without a cached forward pass")
        gin = gout * _ACTIVATIONS[self.kind][1](self._x)
        self._x = None
        return gin

    def spec(self):
        return {"type": "activation", "kind": self.kind}


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def init(self, rng):
        pass

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train):
        if train:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gout):
        if self._shape is None:
            raise RuntimeError("backward without a cached forward pass")
        gin = gout.reshape(self._shape)
        self._shape = None
        return gin

    def spec(self):
        return {"type": "flatten"}


def layer_from_spec(spec):
    t = spec["type"]
    if t == "dense":
        return Dense(spec["in_dim"], spec["out_dim"])
    if t == "conv2d":
        return Conv2D(spec["in_channels"], spec["out_channels"],
                      tuple(spec["kernel"]))
    if t == "batchnorm":
        return BatchNorm(spec["channels"], spec.get("eps", 1e-5),
                         spec.get("momentum", 0.9))
    if t == "activation":
        return Activation(spec["kind"])
    if t == "flatten":
        return Flatten()
    raise ValueError(f"unknown layer type {t!r}")


# ---------------------------------------------------------------------------
# model

class NNModel:
    """Ordered layer list with a fixed input shape, checked at construction."""

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        self.output_shape = shape
        self._adam = None

    @property
    def output_dim(self):
        return int(np.prod(self.output_shape))

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=float)
        single = x.shape == self.input_shape
        if single:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"expected input shape {self.input_shape}, "
                             f"got {x.shape[1:]}")
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, train)
            if not np.all(np.isfinite(x)):
                raise ArithmeticError(
                    f"non-finite activation after layer {i} "
                    f"({layer.spec()['type']})")
        return x[0] if single else x

    def backward(self, gout):
        """Backprop a loss gradient at the outputs; returns the input grad."""
        g = np.asarray(gout, dtype=float)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def layer_of_param(self):
        return [i for i, layer in enumerate(self.layers)
                for _ in layer.params()]

    def copy(self):
        import copy

        m = copy.deepcopy(self)
        m._adam = None
        return m

    def specs(self):
        return [layer.spec() for layer in self.layers]


def default_arch(N0, K0, conv_channels=8, hidden=128, head="abs"):
    """Conv -> BN -> relu -> flatten -> dense -> relu -> dense [-> head].

    ``head``: final activation ("abs" for nonnegative linear-domain outputs,
    None for unconstrained outputs such as log-domain key features).
    """
    arch = [
        {"type": "conv2d", "in_channels": 2, "out_channels": conv_channels,
         "kernel": [3, 3]},
        {"type": "batchnorm", "channels": conv_channels},
        {"type": "activation", "kind": "relu"},
        {"type": "flatten"},
        {"type": "dense", "in_dim": conv_channels * N0 * K0, "out_dim": hidden},
        {"type": "activation", "kind": "relu"},
        {"type": "dense", "in_dim": hidden, "out_dim": K0},
    ]
    if head is not None:
        arch.append({"type": "activation", "kind": head})
    return arch


def gram_arch(K0, hidden=512, depth=2, head=None):
    """Dense stack for Gram-matrix inputs (2, K0, K0).

    The Gram features have no spatial locality worth convolving over, so
    the architecture is a plain flatten -> ``depth`` hidden dense/relu
    layers -> linear output [-> head].
    """
    arch = [{"type": "flatten"}]
    d = 2 * K0 * K0
    for _ in range(depth):
        arch += [{"type": "dense", "in_dim": d, "out_dim": hidden},
                 {"type": "activation", "kind": "relu"}]
        d = hidden
    arch.append({"type": "dense", "in_dim": d, "out_dim": K0})
    if head is not None:
        arch.append({"type": "activation", "kind": head})
    return arch


def init_model(specs, input_shape, seed):
    """Build and deterministically initialize a model from layer specs."""
    layers = [layer_from_spec(s) for s in specs]
    model = NNModel(layers, input_shape)
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        layer.init(rng)
    return model


# ---------------------------------------------------------------------------
# losses

def loss_and_grad(tag, predictions, labels):
    """Scalar loss and its gradient w.r.t. predictions (mean over elements)."""
    predictions = np.asarray(predictions, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if predictions.shape != labels.shape:
        raise ShapeError("prediction/label shape mismatch")
    n = predictions.size
    diff = predictions - labels
    if tag == "mse":
        return float((diff ** 2).mean()), 2.0 * diff / n
    if tag == "mae":
        # subgradient 0 at exact ties
        return float(np.abs(diff).mean()), np.sign(diff) / n
    raise ValueError(f"unknown loss tag {tag!r}")


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 50
    learning_rate: float = 1e-3
    layer_multipliers: dict = field(default_factory=dict)  # layer idx -> mult
    loss: str = "mse"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if any(m < 0 for m in self.layer_multipliers.values()):
            raise ValueError("layer multipliers must be >= 0")


def adam_step(model, config, step_count):
    """One Adam update from the gradients currently stored in the model."""
    params = model.params()
    grads = model.grads()
    owners = model.layer_of_param()
    if model._adam is None:
        model._adam = [(np.zeros_like(p), np.zeros_like(p)) for p in params]
    b1, b2, eps = config.beta1, config.beta2, config.eps
    for p, g, (m, v), owner in zip(params, grads, model._adam, owners):
        lr = config.learning_rate * config.layer_multipliers.get(owner, 1.0)
        if lr == 0.0:
            continue
        m[...] = b1 * m + (1 - b1) * g
        v[...] = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** step_count)
        vhat = v / (1 - b2 ** step_count)
        p -= lr * mhat / (np.sqrt(vhat) + eps)


def finite_difference_grads(model, x, loss_fn, step=1e-6, train=True):
    """Central finite differences of loss_fn(model outputs) over parameters.

    loss_fn maps the forward output to a scalar.  Used by the test suite to
    verify analytic gradients.  Batch-norm layers must see the same batch
    statistics as the analytic pass, so train mode is the default; the
    loss in train mode does not depend on the running statistics.
    """
    grads = []
    for p in model.params():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_fn(model.forward(x, train=train))
            flat[i] = orig - step
            lo = loss_fn(model.forward(x, train=train))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads
