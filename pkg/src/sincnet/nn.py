"""Hand-wired feed-forward layers with explicit forward and backward passes.

Tensors are plain ``numpy.ndarray`` objects. Convolutional activations use the
``(batch, channels, time)`` layout, dense activations ``(batch, features)``.
Every layer caches what it needs during ``forward`` and writes parameter
gradients into ``self.grads`` during ``backward``; backward never touches
``self.params``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import filterbank as fb
from .errors import ContractViolationError, ShapeError


def glorot_init(shape, rng, dtype=np.float64):
    """Uniform Glorot/Xavier init on ``+-sqrt(6 / (fan_in + fan_out))``.

    ``shape`` is ``(out, in)`` for dense weights or ``(out, in, k)`` for
    convolution kernels.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2:
        fan_in = fan_out = shape[0] if shape else 1
    else:
        receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
        fan_out, fan_in = shape[0] * receptive, shape[1] * receptive
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# convolution kernels


def _im2col(x, k):
    batch, channels, time = x.shape
    t_out = time - k + 1
    win = sliding_window_view(x, k, axis=2)  # (B, C, T_out, K)
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(batch * t_out, channels * k)


def _col2im(dcols, batch, channels, time, k):
    t_out = time - k + 1
    dcols = dcols.reshape(batch, t_out, channels, k)
    dx = np.zeros((batch, channels, time), dtype=dcols.dtype)
    for j in range(k):
        dx[:, :, j:j + t_out] += dcols[:, :, :, j].transpose(0, 2, 1)
    return dx


def _check_conv_shapes(x, w):
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"expected x (B, C, T) and filters (O, C, K), got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, filters expect {w.shape[1]}")
    if x.shape[2] < w.shape[2]:
        raise ShapeError(f"input length {x.shape[2]} is shorter than filter length {w.shape[2]}")


def _correlate(x, w):
    """Valid-mode cross-correlation; returns output and the im2col buffer."""
    _check_conv_shapes(x, w)
    batch, _, time = x.shape
    out_ch, _, k = w.shape
    cols = _im2col(x, k)
    y = cols @ w.reshape(out_ch, -1).T
    y = y.reshape(batch, time - k + 1, out_ch).transpose(0, 2, 1)
    return np.ascontiguousarray(y), cols


def _correlate_backward(grad, cols, w, x_shape, need_input_grad=True):
    batch, channels, time = x_shape
    out_ch, _, k = w.shape
    g2 = grad.transpose(0, 2, 1).reshape(-1, out_ch)
    dw = (g2.T @ cols).reshape(w.shape)
    dx = None
    if need_input_grad:
        dx = _col2im(g2 @ w.reshape(out_ch, -1), batch, channels, time, k)
    return dw, dx


def conv1d_forward(x, filters):
    """Valid correlation of ``x`` (C_in, T) or (B, C_in, T) with (C_out, C_in, L) filters."""
    x = np.asarray(x)
    filters = np.asarray(filters)
    unbatched = x.ndim == 2
    if unbatched:
        x = x[None]
    y, _ = _correlate(x, filters)
    return y[0] if unbatched else y


def sinc_bank_taps(params, length, window=None, counter=None):
    """(F, L) taps of a cutoff parameter set, built from half filters and mirrored."""
    f1_abs, f2_abs = params.absolute()
    return fb.mirror_half(fb.build_half_filter(f1_abs, f2_abs, length, window, counter))


def _sinc_cutoff_grads(grad_taps, params, length, window):
    f1_abs, f2_abs = params.absolute()
    d_df1, d_df2 = fb.filter_gradients(f1_abs, f2_abs, length, window)
    g1 = np.sum(grad_taps * d_df1, axis=-1)
    g2 = np.sum(grad_taps * d_df2, axis=-1)
    j11, j21, j22 = fb.reparametrize_jacobian(params.f1_raw, params.f2_raw)
    return g1 * j11 + g2 * j21, g2 * j22


def sinc_conv_forward(x, params, length, window=None):
    """Correlate ``x`` (1, T) or (B, 1, T) with the sinc bank of ``params``."""
    taps = sinc_bank_taps(params, length, window)
    return conv1d_forward(x, taps[:, None, :].astype(np.asarray(x).dtype))


def sinc_conv_backward(upstream_grad, x, params, length, window=None):
    """Gradients w.r.t. raw ``f1``/``f2`` and the input for :func:`sinc_conv_forward`."""
    x = np.asarray(x)
    upstream_grad = np.asarray(upstream_grad)
    unbatched = x.ndim == 2
    if unbatched:
        x, upstream_grad = x[None], upstream_grad[None]
    taps = sinc_bank_taps(params, length, window)[:, None, :].astype(x.dtype)
    expected = (x.shape[0], params.count, x.shape[2] - length + 1)
    if upstream_grad.shape != expected:
        raise ContractViolationError(
            f"upstream gradient has shape {upstream_grad.shape}, forward produced {expected}")
    cols = _im2col(x, length)
    dw, dx = _correlate_backward(upstream_grad, cols, taps, x.shape)
    grad_f1, grad_f2 = _sinc_cutoff_grads(dw[:, 0, :], params, length, window)
    return grad_f1, grad_f2, (dx[0] if unbatched else dx)


# ---------------------------------------------------------------------------
# layers


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self._cache = None

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def output_shape(self, shape):
        return shape

    def n_params(self):
        return sum(p.size for p in self.params.values())

    def _pop_cache(self):
        if self._cache is None:
            raise ContractViolationError(f"{self.kind}: backward called without a cached forward")
        cache, self._cache = self._cache, None
        return cache

    def __repr__(self):
        return f"{type(self).__name__}({self.n_params()} params)"


class SincConv(Layer):
    """First-layer band-pass bank; only the raw cutoffs are learnable."""

    kind = "sinc_conv"

    def __init__(self, n_filters, length, sample_rate, f_min=30.0, f_max=None, dtype=np.float32):
        super().__init__()
        init = fb.mel_initialize(n_filters, sample_rate, f_min, f_max)
        self.length = int(length)
        self.sample_rate = float(sample_rate)
        self.window = fb.hamming_window(self.length)
        self.dtype = np.dtype(dtype)
        self.params = {"f1_raw": init.f1_raw.copy(), "f2_raw": init.f2_raw.copy()}
        self.need_input_grad = True

    def cutoffs(self):
        return fb.CutoffParams(self.params["f1_raw"], self.params["f2_raw"])

    def bank(self):
        return fb.SincFilterBank.from_cutoffs(self.cutoffs(), self.length, self.sample_rate, self.window)

    def output_shape(self, shape):
        return (self.params["f1_raw"].size, shape[1] - self.length + 1)

    def forward(self, x, training=False):
        params = self.cutoffs()
        taps = sinc_bank_taps(params, self.length, self.window)[:, None, :].astype(x.dtype)
        y, cols = _correlate(x, taps)
        self._cache = (cols, taps, x.shape, params)
        return y

    def backward(self, grad):
        cols, taps, x_shape, params = self._pop_cache()
        dw, dx = _correlate_backward(grad, cols, taps, x_shape, self.need_input_grad)
        g1, g2 = _sinc_cutoff_grads(dw[:, 0, :].astype(np.float64), params, self.length, self.window)
        self.grads = {"f1_raw": g1, "f2_raw": g2}
        return dx


class Conv1d(Layer):
    kind = "conv1d"

    def __init__(self, in_channels, out_channels, length, rng, bias=True, dtype=np.float32):
        super().__init__()
        self.length = int(length)
        self.params = {"weight": glorot_init((out_channels, in_channels, length), rng, dtype)}
        if bias:
            self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        self.need_input_grad = True

    def output_shape(self, shape):
        return (self.params["weight"].shape[0], shape[1] - self.length + 1)

    def forward(self, x, training=False):
        w = self.params["weight"]
        y, cols = _correlate(x, w)
        if "bias" in self.params:
            y += self.params["bias"][:, None]
        self._cache = (cols, x.shape)
        return y

    def backward(self, grad):
        cols, x_shape = self._pop_cache()
        w = self.params["weight"]
        dw, dx = _correlate_backward(grad, cols, w, x_shape, self.need_input_grad)
        self.grads = {"weight": dw}
        if "bias" in self.params:
            self.grads["bias"] = grad.sum(axis=(0, 2))
        return dx


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, rng, dtype=np.float32):
        super().__init__()
        self.params = {
            "weight": glorot_init((out_features, in_features), rng, dtype),
            "bias": np.zeros(out_features, dtype=dtype),
        }

    def output_shape(self, shape):
        return (self.params["weight"].shape[0],)

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.params["weight"].shape[1]:
            raise ShapeError(f"dense layer expects (B, {self.params['weight'].shape[1]}), got {x.shape}")
        self._cache = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad):
        x = self._pop_cache()
        self.grads = {"weight": grad.T @ x, "bias": grad.sum(axis=0)}
        return grad @ self.params["weight"]


class LayerNorm(Layer):
    """Per-sample normalization over all non-batch axes, per-channel affine.

    Accepts ``(B, C, T)`` (affine per channel) or ``(B, D)`` (affine per
    feature).
    """

    kind = "layer_norm"

    def __init__(self, channels, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.params = {"gamma": np.ones(channels, dtype=dtype), "beta": np.zeros(channels, dtype=dtype)}

    def _affine_view(self, name, ndim):
        p = self.params[name]
        return p[:, None] if ndim == 3 else p

    def forward(self, x, training=False):
        axes = tuple(range(1, x.ndim))
        mean = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std)
        return xhat * self._affine_view("gamma", x.ndim) + self._affine_view("beta", x.ndim)

    def backward(self, grad):
        xhat, inv_std = self._pop_cache()
        axes = tuple(range(1, grad.ndim))
        sum_axes = (0, 2) if grad.ndim == 3 else (0,)
        self.grads = {"gamma": (grad * xhat).sum(axis=sum_axes), "beta": grad.sum(axis=sum_axes)}
        dxhat = grad * self._affine_view("gamma", grad.ndim)
        return inv_std * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                          - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))


class BatchNorm(Layer):
    """Batch normalization over ``(B, D)`` with running statistics for inference."""

    kind = "batch_norm"

    def __init__(self, features, momentum=0.05, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params = {"gamma": np.ones(features, dtype=dtype), "beta": np.zeros(features, dtype=dtype)}
        self.buffers = {"running_mean": np.zeros(features, dtype=dtype),
                        "running_var": np.ones(features, dtype=dtype)}

    def forward(self, x, training=False):
        if training:
            if x.shape[0] < 2:
                raise ShapeError("batch normalization needs at least 2 samples in training mode")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            n = x.shape[0]
            m = self.momentum
            self.buffers["running_mean"] = ((1 - m) * self.buffers["running_mean"] + m * mean).astype(x.dtype)
            self.buffers["running_var"] = ((1 - m) * self.buffers["running_var"]
                                           + m * var * n / (n - 1)).astype(x.dtype)
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, training)
        return xhat * self.params["gamma"] + self.params["beta"]

    def backward(self, grad):
        xhat, inv_std, training = self._pop_cache()
        self.grads = {"gamma": (grad * xhat).sum(axis=0), "beta": grad.sum(axis=0)}
        dxhat = grad * self.params["gamma"]
        if not training:
            return dxhat * inv_std
        return inv_std * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, slope=0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x, training=False):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, x * self.slope)

    def backward(self, grad):
        mask = self._pop_cache()
        return np.where(mask, grad, grad * self.slope)


def leaky_relu(x, slope=0.2):
    x = np.asarray(x)
    return np.where(x > 0, x, x * slope)


class MaxPool(Layer):
    """Non-overlapping max pooling along time; a trailing remainder is dropped."""

    kind = "max_pool"

    def __init__(self, width=3):
        super().__init__()
        self.width = int(width)

    def output_shape(self, shape):
        return (shape[0], shape[1] // self.width)

    def forward(self, x, training=False):
        batch, channels, time = x.shape
        t_out = time // self.width
        if t_out == 0:
            raise ShapeError(f"input length {time} is shorter than the pool width {self.width}")
        blocks = x[:, :, :t_out * self.width].reshape(batch, channels, t_out, self.width)
        idx = blocks.argmax(axis=-1)
        self._cache = (idx, x.shape)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        idx, shape = self._pop_cache()
        batch, channels, time = shape
        t_out = grad.shape[-1]
        blocks = np.zeros((batch, channels, t_out, self.width), dtype=grad.dtype)
        np.put_along_axis(blocks, idx[..., None], grad[..., None], axis=-1)
        dx = np.zeros(shape, dtype=grad.dtype)
        dx[:, :, :t_out * self.width] = blocks.reshape(batch, channels, -1)
        return dx


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, training=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._pop_cache())


class Dropout(Layer):
    """Inverted dropout; identity at inference or when ``rate == 0``."""

    kind = "dropout"

    def __init__(self, rate, rng):
        super().__init__()
        self.rate = float(rate)
        self.rng = rng

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._cache = None
            self._identity = True
            return x
        self._identity = False
        keep = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        keep = keep.astype(x.dtype)
        self._cache = keep
        return x * keep

    def backward(self, grad):
        if getattr(self, "_identity", True):
            return grad
        return grad * self._pop_cache()


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, training=False):
        p = softmax(x)
        self._cache = p
        return p

    def backward(self, grad):
        p = self._pop_cache()
        return p * (grad - (grad * p).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# network


@dataclass
class ModelConfig:
    """Architecture description; defaults follow the full-size recipe."""

    mode: str = "sinc"
    sample_rate: int = 16000
    input_samples: int = 3200
    n_filters: int = 80
    filter_length: int = 251
    f_min: float = 30.0
    f_max: float | None = None
    conv_channels: tuple = (60, 60)
    conv_lengths: tuple = (5, 5)
    pool_widths: tuple = (3, 3, 3)
    fc_sizes: tuple = (2048, 2048, 2048)
    leaky_slope: float = 0.2
    dropout: float = 0.0
    dtype: str = "float64"

    def __post_init__(self):
        if self.mode not in ("sinc", "standard"):
            raise ValueError(f"mode must be 'sinc' or 'standard', got {self.mode!r}")
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.conv_lengths = tuple(int(c) for c in self.conv_lengths)
        self.pool_widths = tuple(int(c) for c in self.pool_widths)
        self.fc_sizes = tuple(int(c) for c in self.fc_sizes)
        if len(self.conv_channels) != len(self.conv_lengths):
            raise ValueError("conv_channels and conv_lengths differ in length")
        if len(self.pool_widths) != len(self.conv_channels) + 1:
            raise ValueError("need one pool width per convolutional block (first layer included)")
        if not self.fc_sizes:
            raise ValueError("need at least one hidden dense layer")

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass
class Network:
    layers: list
    config: ModelConfig | None = None
    n_classes: int = 0
    embedding_index: int = -1
    meta: dict = field(default_factory=dict)

    def forward(self, x, training=False, return_embedding=False):
        """Posteriors for a batch of raw chunks ``(B, T)``."""
        h = np.asarray(x)
        if h.ndim == 2:
            h = h[:, None, :]
        embedding = None
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, training=training)
            if i == self.embedding_index:
                embedding = h
        return (h, embedding) if return_embedding else h

    def embed(self, x):
        """Last hidden layer activations in inference mode."""
        h = np.asarray(x)
        if h.ndim == 2:
            h = h[:, None, :]
        for layer in self.layers[:self.embedding_index + 1]:
            h = layer.forward(h, training=False)
        return h

    def backward(self, grad, from_logits=True):
        """Backpropagate; with ``from_logits`` the trailing softmax is skipped."""
        layers = self.layers
        if from_logits and layers and isinstance(layers[-1], Softmax):
            layers[-1]._cache = None
            layers = layers[:-1]
        for layer in reversed(layers):
            grad = layer.backward(grad)
            if grad is None:
                break
        return grad

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield f"{i}.{layer.kind}.{name}", layer, name, p

    def parameters(self):
        return {key: p for key, _, _, p in self.named_parameters()}

    def gradients(self):
        return {f"{i}.{layer.kind}.{name}": g
                for i, layer in enumerate(self.layers) for name, g in layer.grads.items()}

    def state(self):
        """Parameters and buffers, keyed by ``index.kind.name``."""
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in {**layer.params, **layer.buffers}.items():
                out[f"{i}.{layer.kind}.{name}"] = arr
        return out

    def load_state(self, state):
        for i, layer in enumerate(self.layers):
            for store in (layer.params, layer.buffers):
                for name in store:
                    key = f"{i}.{layer.kind}.{name}"
                    if key not in state:
                        raise KeyError(f"missing tensor {key!r} in state")
                    value = np.asarray(state[key])
                    if value.shape != store[name].shape:
                        raise ShapeError(f"{key}: expected shape {store[name].shape}, got {value.shape}")
                    store[name] = value.astype(store[name].dtype).copy()

    def first_layer(self):
        for layer in self.layers:
            if isinstance(layer, (SincConv, Conv1d)):
                return layer
        raise LookupError("network has no convolutional layer")

    def n_params(self):
        return sum(layer.n_params() for layer in self.layers)


def first_layer_param_count(mode, n_filters, length):
    """Learnable parameters of the first layer alone: 2F for sinc, F*L for standard."""
    if mode == "sinc":
        # only the cutoff pairs are learned, so the count does not depend on the length
        return SincConv(n_filters, 3, sample_rate=16000).n_params()
    layer = Conv1d(1, n_filters, length, np.random.default_rng(0), bias=False)
    return layer.n_params()


def build_network(config, n_classes, seed=0):
    """Assemble the sinc (or standard) CNN described by ``config``."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    layers = [LayerNorm(1, dtype=dtype)]
    if config.mode == "sinc":
        first = SincConv(config.n_filters, config.filter_length, config.sample_rate,
                         config.f_min, config.f_max, dtype=dtype)
    else:
        first = Conv1d(1, config.n_filters, config.filter_length, rng, bias=False, dtype=dtype)
    first.need_input_grad = False
    layers += [first, MaxPool(config.pool_widths[0]), LayerNorm(config.n_filters, dtype=dtype),
               LeakyReLU(config.leaky_slope)]
    channels = config.n_filters
    for out_ch, k, pool in zip(config.conv_channels, config.conv_lengths, config.pool_widths[1:]):
        layers += [Conv1d(channels, out_ch, k, rng, dtype=dtype), MaxPool(pool),
                   LayerNorm(out_ch, dtype=dtype), LeakyReLU(config.leaky_slope)]
        channels = out_ch
    if config.dropout > 0:
        layers.append(Dropout(config.dropout, np.random.default_rng(rng.integers(2**63))))
    layers.append(Flatten())

    shape = (1, config.input_samples)
    for layer in layers:
        shape = layer.output_shape(shape)
        if min(shape) <= 0:
            raise ShapeError(f"input of {config.input_samples} samples is too short for this architecture")
    features = shape[0]
    for size in config.fc_sizes:
        layers += [Dense(features, size, rng, dtype=dtype), BatchNorm(size, dtype=dtype),
                   LeakyReLU(config.leaky_slope)]
        if config.dropout > 0:
            layers.append(Dropout(config.dropout, np.random.default_rng(rng.integers(2**63))))
        features = size
    embedding_index = len(layers) - 1
    layers += [Dense(features, n_classes, rng, dtype=dtype), Softmax()]
    return Network(layers, config, n_classes, embedding_index)
