"""Layers with explicit forward/backward passes.

Activations are channels-last ``(batch, height, width, channels)`` arrays.
Every ``forward`` returns ``(output, cache)`` and never mutates the layer, so
inference on frozen parameters is reentrant; ``backward`` consumes the cache
and returns ``(input_grads, param_grads)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import InvalidInputError

LAYER_TYPES: dict[str, type] = {}


def register(cls):
    LAYER_TYPES[cls.kind] = cls
    return cls


class Layer:
    kind = "layer"
    n_inputs = 1

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def config(self) -> dict:
        return {}

    def forward(self, *xs):
        raise NotImplementedError

    def backward(self, dy, cache):
        raise NotImplementedError

    def astype(self, dtype) -> None:
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)


def _he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


@register
class Conv2d(Layer):
    """Stride-1 convolution with odd square kernel and zero 'same' padding."""

    kind = "conv"

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        if kernel % 2 != 1:
            raise InvalidInputError(f"kernel size must be odd, got {kernel}")
        self.in_channels, self.out_channels, self.kernel = in_channels, out_channels, kernel
        rng = rng or np.random.default_rng(0)
        fan_in = kernel * kernel * in_channels
        self.params["weight"] = _he_normal(rng, (kernel, kernel, in_channels, out_channels),
                                           fan_in, dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)

    def config(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel": self.kernel}

    def _cols(self, x):
        b, h, w, c = x.shape
        k, p = self.kernel, self.kernel // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        s = xp.strides
        win = as_strided(xp, (b, h, w, k, k, c), (s[0], s[1], s[2], s[1], s[2], s[3]),
                         writeable=False)
        return win.reshape(b * h * w, k * k * c)

    def forward(self, x):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise InvalidInputError(
                f"conv expects (B, H, W, {self.in_channels}) input, got {x.shape}")
        w = self.params["weight"]
        x = x.astype(w.dtype, copy=False)
        b, h, wd, _ = x.shape
        cols = self._cols(x)
        y = cols @ w.reshape(-1, self.out_channels) + self.params["bias"]
        return y.reshape(b, h, wd, self.out_channels), (cols, x.shape)

    def backward(self, dy, cache, need_dx: bool = True):
        cols, shape = cache
        b, h, w, c = shape
        k, p = self.kernel, self.kernel // 2
        weight = self.params["weight"]
        dy2 = dy.reshape(-1, self.out_channels)
        dw = (cols.T @ dy2).reshape(weight.shape)
        db = dy2.sum(axis=0)
        if not need_dx:
            return [None], {"weight": dw, "bias": db}
        if c > self.out_channels:
            # correlate dy with the flipped, transposed kernel
            flipped = weight[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, c)
            dx = (self._cols(dy) @ flipped).reshape(shape)
        else:
            dxp = np.zeros((b, h + 2 * p, w + 2 * p, c), dtype=dy2.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, i:i + h, j:j + w, :] += (dy2 @ weight[i, j].T).reshape(b, h, w, c)
            dx = dxp[:, p:p + h, p:p + w, :]
        return [dx], {"weight": dw, "bias": db}


@register
class MaxPool2(Layer):
    kind = "maxpool2"

    def forward(self, x):
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise InvalidInputError(f"2x2 pooling needs even spatial size, got {h}x{w}")
        taps = [x[:, i::2, j::2, :] for i in (0, 1) for j in (0, 1)]
        y = np.maximum(np.maximum(taps[0], taps[1]), np.maximum(taps[2], taps[3]))
        # route the gradient to the first maximal tap only
        taken = np.zeros(y.shape, dtype=bool)
        masks = []
        for t in taps:
            m = (t == y) & ~taken
            taken |= m
            masks.append(m)
        return y, (masks, x.shape)

    def backward(self, dy, cache):
        masks, shape = cache
        dx = np.empty(shape, dtype=dy.dtype)
        for (i, j), m in zip(((0, 0), (0, 1), (1, 0), (1, 1)), masks):
            dx[:, i::2, j::2, :] = dy * m
        return [dx], {}


@register
class Upsample2(Layer):
    """Nearest-neighbour 2x upsampling."""

    kind = "upsample2"

    def forward(self, x):
        return x.repeat(2, axis=1).repeat(2, axis=2), None

    def backward(self, dy, cache):
        b, h, w, c = dy.shape
        return [dy.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))], {}


@register
class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache):
        return [dy * cache], {}


@register
class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        y = 1.0 / (1.0 + np.exp(-x))
        return y, y

    def backward(self, dy, cache):
        return [dy * cache * (1.0 - cache)], {}


@register
class Concat(Layer):
    """Channel concatenation of any number of inputs."""

    kind = "concat"
    n_inputs = -1

    def forward(self, *xs):
        sizes = [x.shape[-1] for x in xs]
        return np.concatenate(xs, axis=-1), sizes

    def backward(self, dy, cache):
        splits = np.cumsum(cache)[:-1]
        return list(np.split(dy, splits, axis=-1)), {}


@register
class Add(Layer):
    """Elementwise sum of any number of same-shaped inputs."""

    kind = "add"
    n_inputs = -1

    def forward(self, *xs):
        out = xs[0]
        for x in xs[1:]:
            out = out + x
        return out, len(xs)

    def backward(self, dy, cache):
        return [dy] * cache, {}


@register
class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return [dy.reshape(cache)], {}


@register
class GlobalAvgPool(Layer):
    kind = "gap"

    def forward(self, x):
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, dy, cache):
        b, h, w, c = cache
        return [np.broadcast_to(dy[:, None, None, :] / (h * w), cache).copy()], {}


@register
class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = _he_normal(rng, (in_features, out_features), in_features, dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise InvalidInputError(f"dense expects (B, {self.in_features}) input, got {x.shape}")
        x = x.astype(self.params["weight"].dtype, copy=False)
        return x @ self.params["weight"] + self.params["bias"], x

    def backward(self, dy, cache):
        return [dy @ self.params["weight"].T], {"weight": cache.T @ dy, "bias": dy.sum(axis=0)}


def build_layer(kind: str, config: dict) -> Layer:
    try:
        cls = LAYER_TYPES[kind]
    except KeyError:
        raise InvalidInputError(f"unknown layer type {kind!r}") from None
    return cls(**config)
