"""Dense feedforward networks with hand-written reverse-mode gradients and Adam.

Everything here is float64 and functional: updates build new parameter
objects instead of mutating the ones passed in.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np


class ConfigurationError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class NumericInstabilityError(FloatingPointError):
    pass


class Activation(str, enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    IDENTITY = "identity"


def _apply(act: Activation, z: np.ndarray) -> np.ndarray:
    if act is Activation.RELU:
        return np.maximum(z, 0.0)
    if act is Activation.TANH:
        return np.tanh(z)
    return z


def _apply_grad(act: Activation, z: np.ndarray, a: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if act is Activation.RELU:
        return upstream * (z > 0.0)
    if act is Activation.TANH:
        return upstream * (1.0 - a * a)
    return upstream


@dataclass(frozen=True)
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: Activation

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("weights must be 2-D and bias 1-D")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} does not match {self.weights.shape[0]} outputs"
            )

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class NetworkParams:
    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for k in range(len(self.layers) - 1):
            if self.layers[k].n_out != self.layers[k + 1].n_in:
                raise ShapeError(
                    f"layer {k} emits {self.layers[k].n_out} values but layer {k + 1} "
                    f"expects {self.layers[k + 1].n_in}"
                )

    @property
    def input_size(self) -> int:
        return self.layers[0].n_in

    @property
    def output_size(self) -> int:
        return self.layers[-1].n_out

    @property
    def layer_sizes(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def activations(self) -> list[Activation]:
        return [layer.activation for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order ``[W0, b0, W1, b1, ...]``."""
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out

    def with_parameters(self, params: list[np.ndarray]) -> NetworkParams:
        if len(params) != 2 * len(self.layers):
            raise ShapeError("parameter list length does not match the layer count")
        layers = []
        for k, layer in enumerate(self.layers):
            w, b = params[2 * k], params[2 * k + 1]
            if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
                raise ShapeError(f"parameter shapes for layer {k} do not match")
            layers.append(DenseLayer(w, b, layer.activation))
        return NetworkParams(tuple(layers))


@dataclass(frozen=True)
class GradientBundle:
    weight_grads: tuple[np.ndarray, ...]
    bias_grads: tuple[np.ndarray, ...]
    input_grad: np.ndarray

    def parameters(self) -> list[np.ndarray]:
        out = []
        for gw, gb in zip(self.weight_grads, self.bias_grads):
            out.append(gw)
            out.append(gb)
        return out


@dataclass(frozen=True)
class AdamState:
    first_moment: tuple[np.ndarray, ...]
    second_moment: tuple[np.ndarray, ...]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_network(cls, net: NetworkParams, learning_rate: float = 1e-3, **kw) -> AdamState:
        zeros = tuple(np.zeros_like(p) for p in net.parameters())
        return cls(zeros, tuple(np.zeros_like(p) for p in net.parameters()), 0, learning_rate, **kw)


def init_network(layer_sizes: list[int], activations: list, seed: int) -> NetworkParams:
    """Uniform fan-in initialisation in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, zero biases."""
    if len(activations) != len(layer_sizes) - 1:
        raise ConfigurationError(
            f"{len(layer_sizes)} layer sizes need {len(layer_sizes) - 1} activations, "
            f"got {len(activations)}"
        )
    if len(layer_sizes) < 2 or any(int(s) < 1 for s in layer_sizes):
        raise ConfigurationError("need at least two layer sizes, all >= 1")
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out, act in zip(layer_sizes[:-1], layer_sizes[1:], activations):
        bound = 1.0 / math.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        layers.append(DenseLayer(w, np.zeros(n_out), Activation(act)))
    return NetworkParams(tuple(layers))


def _check_input(net: NetworkParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_size:
        raise ShapeError(f"network expects input of size {net.input_size}, got shape {x.shape}")
    return x


def forward_trace(net: NetworkParams, x: np.ndarray):
    """Forward pass that also returns the cache needed by :func:`backward_trace`."""
    x = _check_input(net, x)
    inputs, pre, post = [], [], []
    a = x
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weights.T + layer.bias
        a = _apply(layer.activation, z)
        pre.append(z)
        post.append(a)
    return a, (inputs, pre, post)


def forward(net: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a vector or a batch of row vectors."""
    return forward_trace(net, x)[0]


def backward_trace(net: NetworkParams, cache, upstream_grad: np.ndarray) -> GradientBundle:
    inputs, pre, post = cache
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != post[-1].shape:
        raise ShapeError(f"upstream gradient shape {g.shape} != output shape {post[-1].shape}")
    batched = g.ndim == 2
    wg: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    bg: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        dz = _apply_grad(layer.activation, pre[k], post[k], g)
        if batched:
            wg[k] = dz.T @ inputs[k]
            bg[k] = dz.sum(axis=0)
        else:
            wg[k] = np.outer(dz, inputs[k])
            bg[k] = dz.copy()
        g = dz @ layer.weights
    return GradientBundle(tuple(wg), tuple(bg), g)


def backward(net: NetworkParams, x: np.ndarray, upstream_grad: np.ndarray) -> GradientBundle:
    """Gradients of ``sum(upstream_grad * forward(net, x))`` w.r.t. parameters and input."""
    _, cache = forward_trace(net, x)
    return backward_trace(net, cache, upstream_grad)


def adam_step(net: NetworkParams, grads: GradientBundle, opt: AdamState) -> tuple[NetworkParams, AdamState]:
    params = net.parameters()
    gs = grads.parameters()
    if len(gs) != len(params) or len(opt.first_moment) != len(params):
        raise ShapeError("gradient/optimizer state does not match the network")
    for p, g, m in zip(params, gs, opt.first_moment):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericInstabilityError("non-finite gradient; update rejected")
    t = opt.step_count + 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, gs, opt.first_moment, opt.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        step = opt.learning_rate * (m / c1) / (np.sqrt(v / c2) + opt.epsilon)
        new_p.append(p - step)
        new_m.append(m)
        new_v.append(v)
    for p in new_p:
        if not np.all(np.isfinite(p)):
            raise NumericInstabilityError("update produced non-finite parameters")
    state = AdamState(
        tuple(new_m), tuple(new_v), t, opt.learning_rate, opt.beta1, opt.beta2, opt.epsilon
    )
    return net.with_parameters(new_p), state


# -- serialization -----------------------------------------------------------

NETWORK_FORMAT_VERSION = 1


def network_to_dict(net: NetworkParams) -> dict:
    return {
        "version": NETWORK_FORMAT_VERSION,
        "layer_sizes": net.layer_sizes,
        "activations": [a.value for a in net.activations],
        "weights": [layer.weights.ravel().tolist() for layer in net.layers],
        "biases": [layer.bias.tolist() for layer in net.layers],
    }


def network_from_dict(doc: dict) -> NetworkParams:
    if doc.get("version") != NETWORK_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported network format version {doc.get('version')!r}")
    sizes = [int(s) for s in doc["layer_sizes"]]
    acts = doc["activations"]
    if len(acts) != len(sizes) - 1 or len(doc["weights"]) != len(acts) or len(doc["biases"]) != len(acts):
        raise ShapeError("layer lists in network document have inconsistent lengths")
    layers = []
    for k, act in enumerate(acts):
        w = np.array(doc["weights"][k], dtype=np.float64)
        b = np.array(doc["biases"][k], dtype=np.float64)
        if w.size != sizes[k + 1] * sizes[k] or b.size != sizes[k + 1]:
            raise ShapeError(f"layer {k} arrays do not match layer_sizes")
        layers.append(DenseLayer(w.reshape(sizes[k + 1], sizes[k]), b, Activation(act)))
    return NetworkParams(tuple(layers))


def dumps_network(net: NetworkParams) -> str:
    # json emits repr() floats, which round-trip exactly
    return json.dumps(network_to_dict(net), sort_keys=True)


def loads_network(text: str) -> NetworkParams:
    return network_from_dict(json.loads(text))


def adam_to_dict(opt: AdamState) -> dict:
    return {
        "first_moment": [m.ravel().tolist() for m in opt.first_moment],
        "second_moment": [v.ravel().tolist() for v in opt.second_moment],
        "shapes": [list(m.shape) for m in opt.first_moment],
        "step_count": opt.step_count,
        "learning_rate": opt.learning_rate,
        "beta1": opt.beta1,
        "beta2": opt.beta2,
        "epsilon": opt.epsilon,
    }


def adam_from_dict(doc: dict) -> AdamState:
    shapes = [tuple(s) for s in doc["shapes"]]
    m = tuple(np.array(a, dtype=np.float64).reshape(s) for a, s in zip(doc["first_moment"], shapes))
    v = tuple(np.array(a, dtype=np.float64).reshape(s) for a, s in zip(doc["second_moment"], shapes))
    if len(m) != len(shapes) or len(v) != len(shapes):
        raise ShapeError("optimizer moment lists do not match recorded shapes")
    return AdamState(
        m, v, int(doc["step_count"]), float(doc["learning_rate"]),
        float(doc["beta1"]), float(doc["beta2"]), float(doc["epsilon"]),
    )
