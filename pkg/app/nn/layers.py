"""Feed-forward layers over float64 numpy arrays.

Every layer works on batched arrays whose first axis is the batch. Shapes
declared by layers (`input_shape`, `output_shape`) exclude the batch axis.
Video tensors use the (C, T, H, W) channel-first layout.
"""

import itertools
from abc import ABC, abstractmethod
from typing import Any, Dict, Tuple

import numpy as np

from app.models.network import (
    BatchNormSpec,
    Conv3dSpec,
    ConvTranspose3dSpec,
    FlattenSpec,
    FullyConnectedSpec,
    ReluSpec,
    ReshapeSpec,
    SigmoidSpec,
    SoftmaxSpec,
    SpatialPoolSpec,
)

Shape = Tuple[int, ...]
Grads = Dict[str, np.ndarray]


def to_float32_grid(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).astype(np.float32).astype(np.float64)


def he_uniform(rng: np.random.Generator, shape: Shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return to_float32_grid(rng.uniform(-bound, bound, size=shape))


class BaseLayer(ABC):
    kind = "layer"

    def __init__(self, spec: Any, input_shape: Shape):
        self.spec = spec
        self.input_shape = tuple(int(d) for d in input_shape)
        self.output_shape = self._infer_output_shape(self.input_shape)
        self.params: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self.frozen = False

    @abstractmethod
    def _infer_output_shape(self, input_shape: Shape) -> Shape: ...

    @abstractmethod
    def forward(self, x: np.ndarray, train: bool) -> Tuple[np.ndarray, Any]: ...

    @abstractmethod
    def backward(self, cache: Any, grad_out: np.ndarray) -> Tuple[np.ndarray, Grads]: ...

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    @property
    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


class Conv3d(BaseLayer):
    kind = "conv3d"

    def __init__(self, spec: Conv3dSpec, input_shape: Shape):
        self.kernel = tuple(spec.kernel)
        self.stride = tuple(spec.stride)
        self.padding = tuple(k // 2 for k in self.kernel)
        self.out_channels = spec.out_channels
        super().__init__(spec, input_shape)
        c_in = self.input_shape[0]
        self.params = {"weight": np.zeros((self.out_channels, c_in, *self.kernel))}
        if spec.bias:
            self.params["bias"] = np.zeros(self.out_channels)

    def _infer_output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) != 4:
            raise ValueError(f"conv3d expects (C, T, H, W) input, got {input_shape}")
        dims = []
        for size, k, s in zip(input_shape[1:], self.kernel, self.stride):
            out = (size + 2 * (k // 2) - k) // s + 1
            if out < 1:
                raise ValueError(f"conv3d kernel {self.kernel} too large for {input_shape}")
            dims.append(out)
        return (self.out_channels, *dims)

    def init_params(self, rng):
        fan_in = self.input_shape[0] * int(np.prod(self.kernel))
        self.params["weight"] = he_uniform(rng, self.params["weight"].shape, fan_in)

    def _window(self, offset, out_dims):
        return tuple(
            slice(o, o + s * (n - 1) + 1, s)
            for o, s, n in zip(offset, self.stride, out_dims)
        )

    def forward(self, x, train):
        pt, ph, pw = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
        out_dims = self.output_shape[1:]
        weight = self.params["weight"]
        acc = np.zeros((self.out_channels, x.shape[0], *out_dims))
        for offset in itertools.product(*(range(k) for k in self.kernel)):
            patch = xp[(slice(None), slice(None), *self._window(offset, out_dims))]
            acc += np.tensordot(weight[(slice(None), slice(None), *offset)], patch, axes=([1], [1]))
        out = np.moveaxis(acc, 0, 1)
        if "bias" in self.params:
            out = out + self.params["bias"][None, :, None, None, None]
        return out, xp

    def backward(self, cache, grad_out):
        xp = cache
        out_dims = self.output_shape[1:]
        weight = self.params["weight"]
        g = np.moveaxis(grad_out, 1, 0)
        dxp = np.zeros_like(xp)
        dweight = np.zeros_like(weight)
        for offset in itertools.product(*(range(k) for k in self.kernel)):
            window = (slice(None), slice(None), *self._window(offset, out_dims))
            patch = xp[window]
            dweight[(slice(None), slice(None), *offset)] = np.tensordot(
                g, patch, axes=([1, 2, 3, 4], [0, 2, 3, 4])
            )
            w_k = weight[(slice(None), slice(None), *offset)]
            dxp[window] += np.moveaxis(np.tensordot(w_k, g, axes=([0], [0])), 0, 1)
        pt, ph, pw = self.padding
        t, h, w = self.input_shape[1:]
        dx = dxp[:, :, pt : pt + t, ph : ph + h, pw : pw + w]
        grads = {"weight": dweight}
        if "bias" in self.params:
            grads["bias"] = grad_out.sum(axis=(0, 2, 3, 4))
        return dx, grads


class ConvTranspose3d(BaseLayer):
    kind = "conv_transpose3d"

    def __init__(self, spec: ConvTranspose3dSpec, input_shape: Shape):
        self.kernel = tuple(spec.kernel)
        self.stride = tuple(spec.stride)
        self.padding = tuple(spec.padding)
        self.out_channels = spec.out_channels
        super().__init__(spec, input_shape)
        c_in = self.input_shape[0]
        self.params = {
            "weight": np.zeros((c_in, self.out_channels, *self.kernel)),
            "bias": np.zeros(self.out_channels),
        }

    def _full_dims(self, input_shape: Shape) -> Shape:
        return tuple((n - 1) * s + k for n, s, k in zip(input_shape[1:], self.stride, self.kernel))

    def _infer_output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) != 4:
            raise ValueError(f"conv_transpose3d expects (C, T, H, W) input, got {input_shape}")
        dims = tuple(f - 2 * p for f, p in zip(self._full_dims(input_shape), self.padding))
        if min(dims) < 1:
            raise ValueError(f"conv_transpose3d padding {self.padding} too large")
        return (self.out_channels, *dims)

    def init_params(self, rng):
        if self.spec.zero_init:
            return
        fan_in = self.input_shape[0] * int(np.prod(self.kernel)) // int(np.prod(self.stride))
        self.params["weight"] = he_uniform(rng, self.params["weight"].shape, max(fan_in, 1))
        self.params["bias"] = np.zeros(self.out_channels)

    def _window(self, offset):
        return tuple(
            slice(o, o + s * (n - 1) + 1, s)
            for o, s, n in zip(offset, self.stride, self.input_shape[1:])
        )

    def _crop(self):
        return tuple(slice(p, p + n) for p, n in zip(self.padding, self.output_shape[1:]))

    def forward(self, x, train):
        weight = self.params["weight"]
        full = np.zeros((x.shape[0], self.out_channels, *self._full_dims(self.input_shape)))
        for offset in itertools.product(*(range(k) for k in self.kernel)):
            w_k = weight[(slice(None), slice(None), *offset)]
            contrib = np.tensordot(w_k, x, axes=([0], [1]))
            full[(slice(None), slice(None), *self._window(offset))] += np.moveaxis(contrib, 0, 1)
        out = full[(slice(None), slice(None), *self._crop())]
        return out + self.params["bias"][None, :, None, None, None], x

    def backward(self, cache, grad_out):
        x = cache
        weight = self.params["weight"]
        gfull = np.zeros((x.shape[0], self.out_channels, *self._full_dims(self.input_shape)))
        gfull[(slice(None), slice(None), *self._crop())] = grad_out
        dx = np.zeros_like(x)
        dweight = np.zeros_like(weight)
        for offset in itertools.product(*(range(k) for k in self.kernel)):
            gpatch = gfull[(slice(None), slice(None), *self._window(offset))]
            w_k = weight[(slice(None), slice(None), *offset)]
            dx += np.moveaxis(np.tensordot(w_k, gpatch, axes=([1], [1])), 0, 1)
            dweight[(slice(None), slice(None), *offset)] = np.tensordot(
                x, gpatch, axes=([0, 2, 3, 4], [0, 2, 3, 4])
            )
        return dx, {"weight": dweight, "bias": grad_out.sum(axis=(0, 2, 3, 4))}


class BatchNorm(BaseLayer):
    kind = "batchnorm"

    def __init__(self, spec: BatchNormSpec, input_shape: Shape):
        super().__init__(spec, input_shape)
        channels = self.input_shape[0]
        self.momentum = spec.momentum
        self.eps = spec.eps
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.buffers = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}

    def _infer_output_shape(self, input_shape):
        return input_shape

    def _axes(self, ndim: int) -> Tuple[int, ...]:
        return (0, *range(2, ndim))

    def _bshape(self, ndim: int) -> Tuple[int, ...]:
        return (1, -1) + (1,) * (ndim - 2)

    def forward(self, x, train):
        axes = self._axes(x.ndim)
        bshape = self._bshape(x.ndim)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
        out = self.params["gamma"].reshape(bshape) * xhat + self.params["beta"].reshape(bshape)
        return out, (xhat, inv_std, train)

    def backward(self, cache, grad_out):
        xhat, inv_std, train = cache
        axes = self._axes(grad_out.ndim)
        bshape = self._bshape(grad_out.ndim)
        grads = {"gamma": (grad_out * xhat).sum(axis=axes), "beta": grad_out.sum(axis=axes)}
        dxhat = grad_out * self.params["gamma"].reshape(bshape)
        if not train:
            return dxhat * inv_std.reshape(bshape), grads
        count = grad_out.size // grad_out.shape[1]
        sum_dxhat = dxhat.sum(axis=axes).reshape(bshape)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes).reshape(bshape)
        dx = (inv_std.reshape(bshape) / count) * (count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        return dx, grads


class Relu(BaseLayer):
    kind = "relu"

    def _infer_output_shape(self, input_shape):
        return input_shape

    def forward(self, x, train):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, cache, grad_out):
        return np.where(cache, grad_out, 0.0), {}


class SpatialPool(BaseLayer):
    """Global average over every axis after the channel axis."""

    kind = "spatial_pool"

    def _infer_output_shape(self, input_shape):
        if len(input_shape) < 2:
            raise ValueError(f"spatial_pool expects (C, ...) input, got {input_shape}")
        return (input_shape[0],)

    def forward(self, x, train):
        return x.mean(axis=tuple(range(2, x.ndim))), x.shape

    def backward(self, cache, grad_out):
        shape = cache
        count = int(np.prod(shape[2:]))
        expanded = grad_out.reshape(grad_out.shape + (1,) * (len(shape) - 2))
        return np.broadcast_to(expanded / count, shape).copy(), {}


class Flatten(BaseLayer):
    kind = "flatten"

    def _infer_output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, train):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad_out):
        return grad_out.reshape(cache), {}


class Reshape(BaseLayer):
    kind = "reshape"

    def _infer_output_shape(self, input_shape):
        target = tuple(self.spec.shape)
        if int(np.prod(target)) != int(np.prod(input_shape)):
            raise ValueError(f"cannot reshape {input_shape} into {target}")
        return target

    def forward(self, x, train):
        return x.reshape((x.shape[0], *self.output_shape)), x.shape

    def backward(self, cache, grad_out):
        return grad_out.reshape(cache), {}


class FullyConnected(BaseLayer):
    kind = "fully_connected"

    def __init__(self, spec: FullyConnectedSpec, input_shape: Shape):
        super().__init__(spec, input_shape)
        self.params = {
            "weight": np.zeros((spec.out_dim, self.input_shape[0])),
            "bias": np.zeros(spec.out_dim),
        }

    def _infer_output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ValueError(f"fully_connected expects a flat input, got {input_shape}")
        return (self.spec.out_dim,)

    def init_params(self, rng):
        if self.spec.zero_init:
            return
        self.params["weight"] = he_uniform(rng, self.params["weight"].shape, self.input_shape[0])

    def forward(self, x, train):
        return x @ self.params["weight"].T + self.params["bias"], x

    def backward(self, cache, grad_out):
        x = cache
        grads = {"weight": grad_out.T @ x, "bias": grad_out.sum(axis=0)}
        return grad_out @ self.params["weight"], grads


class Sigmoid(BaseLayer):
    kind = "sigmoid"

    def _infer_output_shape(self, input_shape):
        return input_shape

    def forward(self, x, train):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        exp_x = np.exp(x[~pos])
        out[~pos] = exp_x / (1.0 + exp_x)
        return out, out

    def backward(self, cache, grad_out):
        out = cache
        return grad_out * out * (1.0 - out), {}


class Softmax(BaseLayer):
    kind = "softmax"

    def _infer_output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ValueError(f"softmax expects a flat input, got {input_shape}")
        return input_shape

    def forward(self, x, train):
        shifted = x - x.max(axis=-1, keepdims=True)
        exp_x = np.exp(shifted)
        out = exp_x / exp_x.sum(axis=-1, keepdims=True)
        return out, out

    def backward(self, cache, grad_out):
        out = cache
        return out * (grad_out - (grad_out * out).sum(axis=-1, keepdims=True)), {}


LAYER_TYPES = {
    Conv3dSpec: Conv3d,
    ConvTranspose3dSpec: ConvTranspose3d,
    BatchNormSpec: BatchNorm,
    ReluSpec: Relu,
    SpatialPoolSpec: SpatialPool,
    FlattenSpec: Flatten,
    ReshapeSpec: Reshape,
    FullyConnectedSpec: FullyConnected,
    SigmoidSpec: Sigmoid,
    SoftmaxSpec: Softmax,
}


def build_layer(spec: Any, input_shape: Shape) -> BaseLayer:
    layer_cls = LAYER_TYPES.get(type(spec))
    if layer_cls is None:
        raise ValueError(f"Unknown layer kind: {getattr(spec, 'kind', spec)}")
    return layer_cls(spec, input_shape)
