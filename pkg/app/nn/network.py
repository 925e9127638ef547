import hashlib
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np

from app.core.exceptions import ShapeError, UsageError
from app.models.network import NetworkSpec
from app.nn.layers import BaseLayer, build_layer, to_float32_grid

TRAIN = "train"
EVAL = "eval"


@dataclass
class ForwardCache:
    network_id: int
    version: int
    mode: str
    layer_caches: List[Any] = field(default_factory=list)


class Network:
    """Sequential feed-forward network built from a `NetworkSpec`.

    Parameters and buffers are named ``"{index}.{kind}.{name}"``. Every write
    through `set_parameters`/`set_buffers` bumps `version`, which invalidates
    caches produced by earlier forward passes.
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0):
        self.spec = spec
        self.layers: List[BaseLayer] = []
        shape = tuple(spec.input_shape)
        for index, layer_spec in enumerate(spec.layers):
            try:
                layer = build_layer(layer_spec, shape)
            except ValueError as e:
                raise ShapeError(str(e), layer_index=index) from e
            self.layers.append(layer)
            shape = layer.output_shape
        if int(np.prod(shape)) != spec.output_dim:
            raise ShapeError(
                f"declared output dim {spec.output_dim} does not match final shape {shape}",
                layer_index=len(self.layers) - 1,
            )
        self.output_shape = shape
        self.version = 0
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init_params(rng)

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return tuple(self.spec.input_shape)

    @property
    def frozen(self) -> bool:
        return all(layer.frozen for layer in self.layers if layer.params)

    def freeze(self, layer_indices: Optional[Iterable[int]] = None) -> None:
        indices = range(len(self.layers)) if layer_indices is None else layer_indices
        for index in indices:
            self.layers[index].frozen = True

    def unfreeze(self) -> None:
        for layer in self.layers:
            layer.frozen = False

    def _named(self, attr: str) -> Dict[str, np.ndarray]:
        named = {}
        for index, layer in enumerate(self.layers):
            for name, value in getattr(layer, attr).items():
                named[f"{index}.{layer.kind}.{name}"] = value
        return named

    def parameters(self) -> Dict[str, np.ndarray]:
        return self._named("params")

    def trainable_parameters(self) -> Dict[str, np.ndarray]:
        named = {}
        for index, layer in enumerate(self.layers):
            if layer.frozen:
                continue
            for name, value in layer.params.items():
                named[f"{index}.{layer.kind}.{name}"] = value
        return named

    def buffers(self) -> Dict[str, np.ndarray]:
        return self._named("buffers")

    def _resolve(self, qualified: str) -> Tuple[BaseLayer, str]:
        index, _, name = qualified.split(".", 2)
        return self.layers[int(index)], name

    def set_parameters(self, values: Dict[str, np.ndarray]) -> None:
        for qualified, value in values.items():
            layer, name = self._resolve(qualified)
            if layer.params[name].shape != np.shape(value):
                raise ShapeError(
                    f"parameter {qualified} expects {layer.params[name].shape}, got {np.shape(value)}",
                    layer_index=int(qualified.split(".", 1)[0]),
                )
            layer.params[name] = to_float32_grid(value)
        self.version += 1

    def set_buffers(self, values: Dict[str, np.ndarray]) -> None:
        for qualified, value in values.items():
            layer, name = self._resolve(qualified)
            layer.buffers[name] = np.array(value, dtype=np.float64)
        self.version += 1

    def num_parameters(self) -> int:
        return sum(layer.num_params for layer in self.layers)

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, value in {**self.parameters(), **self.buffers()}.items():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(value, dtype=np.float64).tobytes())
        return h.hexdigest()

    def forward(self, x: np.ndarray, mode: str = EVAL) -> Tuple[np.ndarray, ForwardCache]:
        if mode not in (TRAIN, EVAL):
            raise UsageError(f"unknown mode '{mode}'")
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(
                f"expected input {self.input_shape} per example, got {x.shape[1:]}",
                layer_index=0,
            )
        train = mode == TRAIN
        # Running-stat updates in train mode mutate buffers; that bumps version.
        if train and any(layer.buffers for layer in self.layers):
            self.version += 1
        cache = ForwardCache(network_id=id(self), version=self.version, mode=mode)
        out = x
        for index, layer in enumerate(self.layers):
            if out.shape[1:] != layer.input_shape:
                raise ShapeError(
                    f"expected {layer.input_shape}, got {out.shape[1:]}", layer_index=index
                )
            out, layer_cache = layer.forward(out, train)
            cache.layer_caches.append(layer_cache)
        return out, cache

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, EVAL)[0]

    def backward(
        self, cache: ForwardCache, grad_out: np.ndarray
    ) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        if cache.network_id != id(self) or cache.version != self.version:
            raise UsageError("backward called with a stale forward cache")
        grads: Dict[str, np.ndarray] = {}
        grad = np.asarray(grad_out, dtype=np.float64)
        for index in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[index]
            grad, layer_grads = layer.backward(cache.layer_caches[index], grad)
            for name, value in layer_grads.items():
                qualified = f"{index}.{layer.kind}.{name}"
                grads[qualified] = np.zeros_like(value) if layer.frozen else value
        return dict(reversed(list(grads.items()))), grad
