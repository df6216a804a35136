"""Layer objects wired into fixed chains.

A layer owns parameter *names*, not values: ``forward`` reads from a
:class:`ParamStore` and keeps the cache needed by ``backward``, which
accumulates into a gradient dict and returns the input gradient.
"""
from __future__ import annotations

import math

import numpy as np

from . import ops


class Layer:
    params: tuple[str, ...] = ()

    def init(self, store, rng) -> None:
        pass

    def forward(self, store, x):
        raise NotImplementedError

    def backward(self, store, grads, dout):
        raise NotImplementedError

    def out_shape(self, shape):
        return shape


class Conv2d(Layer):
    def __init__(self, name, c_in, c_out, k, stride=1, padding=0, gain=math.sqrt(2)):
        self.w, self.b = f"{name}.w", f"{name}.b"
        self.params = (self.w, self.b)
        self.c_in, self.c_out, self.k, self.stride, self.padding, self.gain = c_in, c_out, k, stride, padding, gain

    def init(self, store, rng):
        std = self.gain / math.sqrt(self.c_in * self.k * self.k)
        store.add(self.w, rng.standard_normal((self.k, self.k, self.c_in, self.c_out)) * std)
        store.add(self.b, np.zeros(self.c_out))

    def forward(self, store, x):
        out, self._cache = ops.conv2d_fwd(x, store[self.w], store[self.b], self.stride, self.padding)
        return out

    def backward(self, store, grads, dout):
        dx, dw, db = ops.conv2d_bwd(dout, self._cache)
        grads[self.w] += dw
        grads[self.b] += db
        self._cache = None
        return dx

    def out_shape(self, shape):
        h, w = shape[:2]
        return ((h + 2 * self.padding - self.k) // self.stride + 1,
                (w + 2 * self.padding - self.k) // self.stride + 1, self.c_out)


class ConvTranspose2d(Layer):
    def __init__(self, name, c_in, c_out, k, stride=1, padding=0, gain=math.sqrt(2)):
        self.w, self.b = f"{name}.w", f"{name}.b"
        self.params = (self.w, self.b)
        self.c_in, self.c_out, self.k, self.stride, self.padding, self.gain = c_in, c_out, k, stride, padding, gain

    def init(self, store, rng):
        # each output pixel sees c_in * (k/stride)^2 inputs
        fan_in = self.c_in * (self.k / self.stride) ** 2
        std = self.gain / math.sqrt(fan_in)
        store.add(self.w, rng.standard_normal((self.k, self.k, self.c_out, self.c_in)) * std)
        store.add(self.b, np.zeros(self.c_out))

    def forward(self, store, x):
        out, self._cache = ops.conv2d_transpose_fwd(x, store[self.w], store[self.b], self.stride, self.padding)
        return out

    def backward(self, store, grads, dout):
        dx, dw, db = ops.conv2d_transpose_bwd(dout, self._cache)
        grads[self.w] += dw
        grads[self.b] += db
        self._cache = None
        return dx

    def out_shape(self, shape):
        h, w = shape[:2]
        return ((h - 1) * self.stride - 2 * self.padding + self.k,
                (w - 1) * self.stride - 2 * self.padding + self.k, self.c_out)


class Dense(Layer):
    def __init__(self, name, n_in, n_out, gain=math.sqrt(2), zero_init=False):
        self.w, self.b = f"{name}.w", f"{name}.b"
        self.params = (self.w, self.b)
        self.n_in, self.n_out, self.gain, self.zero_init = n_in, n_out, gain, zero_init

    def init(self, store, rng):
        std = 0.0 if self.zero_init else self.gain / math.sqrt(self.n_in)
        store.add(self.w, rng.standard_normal((self.n_in, self.n_out)) * std)
        store.add(self.b, np.zeros(self.n_out))

    def forward(self, store, x):
        out, self._cache = ops.dense_fwd(x, store[self.w], store[self.b])
        return out

    def backward(self, store, grads, dout):
        dx, dw, db = ops.dense_bwd(dout, self._cache)
        grads[self.w] += dw
        grads[self.b] += db
        self._cache = None
        return dx

    def out_shape(self, shape):
        return (self.n_out,)


class ReLU(Layer):
    def forward(self, store, x):
        self._x = x
        return ops.relu(x)

    def backward(self, store, grads, dout):
        dx = ops.relu_grad(dout, self._x)
        self._x = None
        return dx


class Reshape(Layer):
    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, store, x):
        self._in = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, store, grads, dout):
        return dout.reshape(self._in)

    def out_shape(self, shape):
        return self.shape


class Flatten(Layer):
    def forward(self, store, x):
        self._in = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, store, grads, dout):
        return dout.reshape(self._in)

    def out_shape(self, shape):
        return (int(np.prod(shape)),)


class Chain:
    """Layers applied in a fixed order; backward replays them in reverse."""

    def __init__(self, layers):
        self.layers = list(layers)

    def init(self, store, rng):
        for layer in self.layers:
            layer.init(store, rng)

    def forward(self, store, x):
        for layer in self.layers:
            x = layer.forward(store, x)
        return x

    def backward(self, store, grads, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(store, grads, dout)
        return dout

    def param_names(self):
        return [p for layer in self.layers for p in layer.params]

    def out_shape(self, shape):
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape
