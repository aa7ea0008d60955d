"""Layer graphs with skip connections."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError, InvalidModelError, StateError
from . import fqal
from .layers import Conv2d, Layer, build_layer

INPUT = "input"


@dataclass
class Node:
    name: str
    layer: Layer
    inputs: list[str] = field(default_factory=list)


class Network:
    """A directed acyclic graph of layers evaluated in insertion order.

    The graph source is called ``"input"``; the last added node is the output.
    """

    def __init__(self, input_channels: int | None = None):
        self.input_channels = input_channels
        self.nodes: list[Node] = []
        self.frozen: set[str] = set()
        self._cache = None

    def add(self, name: str, layer: Layer, inputs: list[str] | str | None = None) -> str:
        if name == INPUT or any(n.name == name for n in self.nodes):
            raise InvalidInputError(f"duplicate node name {name!r}")
        if inputs is None:
            inputs = [self.nodes[-1].name if self.nodes else INPUT]
        elif isinstance(inputs, str):
            inputs = [inputs]
        known = {INPUT} | {n.name for n in self.nodes}
        missing = [i for i in inputs if i not in known]
        if missing:
            raise InvalidInputError(f"node {name!r} reads unknown inputs {missing}")
        self.nodes.append(Node(name, layer, list(inputs)))
        return name

    # parameters -----------------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{n.name}.{k}": v for n in self.nodes for k, v in n.layer.params.items()}

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.parameters().items() if k not in self.frozen}

    def freeze(self, names=None) -> None:
        self.frozen |= set(self.parameters()) if names is None else set(names)

    def set_parameters(self, tensors: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        if set(tensors) != set(own):
            raise InvalidModelError(
                f"parameter names differ: missing {sorted(set(own) - set(tensors))}, "
                f"unexpected {sorted(set(tensors) - set(own))}")
        for n in self.nodes:
            for k, v in n.layer.params.items():
                new = np.asarray(tensors[f"{n.name}.{k}"])
                if new.shape != v.shape:
                    raise InvalidModelError(f"{n.name}.{k}: shape {new.shape} != {v.shape}")
                n.layer.params[k] = new.astype(v.dtype)

    def astype(self, dtype) -> "Network":
        for n in self.nodes:
            n.layer.astype(dtype)
        return self

    # evaluation -------------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != 4:
            raise InvalidInputError(f"expected a (B, H, W, C) tensor, got shape {x.shape}")
        if self.input_channels is not None and x.shape[3] != self.input_channels:
            raise InvalidInputError(
                f"network expects {self.input_channels} input channels, got {x.shape[3]}")

    def _run(self, x: np.ndarray, keep_cache: bool) -> dict[str, np.ndarray]:
        x = np.asarray(x)
        self._check_input(x)
        values = {INPUT: x}
        caches = {}
        for node in self.nodes:
            values[node.name], caches[node.name] = node.layer.forward(
                *(values[i] for i in node.inputs))
        if keep_cache:
            self._cache = (caches, x.shape)
        return values

    @property
    def output_name(self) -> str:
        return self.nodes[-1].name if self.nodes else INPUT

    def forward(self, x: np.ndarray, keep_cache: bool = True) -> np.ndarray:
        """Evaluate the graph; with ``keep_cache`` activations are kept for backward."""
        return self._run(x, keep_cache)[self.output_name]

    def forward_nodes(self, x: np.ndarray, names: list[str],
                      keep_cache: bool = True) -> list[np.ndarray]:
        """Values of the named nodes (``"input"`` allowed)."""
        values = self._run(x, keep_cache)
        return [values[n] for n in names]

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without touching the backward cache (reentrant)."""
        return self.forward(x, keep_cache=False)

    def backward(self, dy: np.ndarray | None,
                 node_grads: dict[str, np.ndarray] | None = None,
                 input_grad: bool = True) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
        """Gradients of every parameter and of the input; consumes the cache.

        ``dy`` is the gradient at the output node; ``node_grads`` adds gradients
        arriving directly at intermediate nodes (multi-output losses). With
        ``input_grad=False`` convolutions reading the input skip their input
        gradient and ``None`` is returned in its place.
        """
        if self._cache is None:
            raise StateError("backward called without a preceding forward pass")
        caches, in_shape = self._cache
        self._cache = None
        grads_in: dict[str, np.ndarray] = {}
        for name, g in (node_grads or {}).items():
            grads_in[name] = g
        if dy is not None:
            out = self.output_name
            grads_in[out] = grads_in[out] + dy if out in grads_in else dy
        param_grads: dict[str, np.ndarray] = {}
        for node in reversed(self.nodes):
            g = grads_in.pop(node.name, None)
            if g is None:
                # output not consumed downstream
                for k, v in node.layer.params.items():
                    param_grads[f"{node.name}.{k}"] = np.zeros_like(v)
                continue
            if not input_grad and node.inputs == [INPUT] and isinstance(node.layer, Conv2d):
                dxs, dps = node.layer.backward(g, caches[node.name], need_dx=False)
            else:
                dxs, dps = node.layer.backward(g, caches[node.name])
            for k, v in dps.items():
                param_grads[f"{node.name}.{k}"] = v
            for src, dx in zip(node.inputs, dxs):
                if dx is None:
                    continue
                if src in grads_in:
                    grads_in[src] = grads_in[src] + dx
                else:
                    grads_in[src] = dx
        if not input_grad:
            return param_grads, None
        dx = grads_in.get(INPUT)
        if dx is None:
            dx = np.zeros(in_shape)
        return param_grads, dx

    # persistence --------------------------------------------------------------

    def descriptor(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "nodes": [{"name": n.name, "type": n.layer.kind, "inputs": n.inputs,
                       "config": n.layer.config()} for n in self.nodes],
        }

    @classmethod
    def from_descriptor(cls, desc: dict) -> "Network":
        net = cls(desc.get("input_channels"))
        for spec in desc["nodes"]:
            net.add(spec["name"], build_layer(spec["type"], spec.get("config", {})), spec["inputs"])
        return net

    def save(self, path) -> None:
        fqal.save(path, self.parameters())

    def load_weights(self, path) -> None:
        self.set_parameters(fqal.load(path))

    def descriptor_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True)
