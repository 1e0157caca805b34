"""
Numerical substrate of the neural estimators: a small tanh MLP with
weight normalization, analytic back-propagation and the Adam optimizer.

Parameters of a network live in one flat float64 vector with a fixed
layer-major layout ``[V_1, g_1, b_1, V_2, g_2, b_2, ...]`` (``g`` is absent
when weight normalization is off) so that optimizer buffers align with it
trivially.
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import InputShapeError, TrainingDivergenceError
from app.models.schemas import NetworkDocument, NetworkLayerDocument

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator, None]


class LayerView(NamedTuple):
    """Views into the flat parameter vector for one dense layer."""
    V: np.ndarray
    g: Optional[np.ndarray]
    b: np.ndarray


@dataclass
class Mlp:
    """
    Feed-forward network ``layer_sizes = (in, hidden..., out)``.

    Hidden layers use tanh, the output layer is linear. With weight
    normalization the effective weight row ``i`` is ``g_i * V_i / ||V_i||``.
    """

    layer_sizes: Tuple[int, ...]
    params: np.ndarray
    weight_norm: bool = True

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise InputShapeError(f"invalid layer sizes {self.layer_sizes}")
        self.params = np.array(self.params, dtype=np.float64).ravel()
        expected = self.parameter_count(self.layer_sizes, self.weight_norm)
        if self.params.size != expected:
            raise InputShapeError(
                f"parameter vector has {self.params.size} entries, layout needs {expected}"
            )
        if self.weight_norm:
            for layer in self.layers():
                if np.any(np.linalg.norm(layer.V, axis=1) == 0.0):
                    raise InputShapeError("weight-normalized layer has a zero direction row")

    @staticmethod
    def parameter_count(layer_sizes: Sequence[int], weight_norm: bool = True) -> int:
        count = 0
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            count += fan_out * fan_in + fan_out * (2 if weight_norm else 1)
        return count

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int], seed: SeedLike = None, weight_norm: bool = True) -> "Mlp":
        """
        Glorot-uniform directions, zero biases.

        The gain starts at the initial row norm, so the initial effective
        weights equal the sampled directions.
        """
        rng = np.random.default_rng(seed)
        chunks = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            V = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            chunks.append(V.ravel())
            if weight_norm:
                chunks.append(np.linalg.norm(V, axis=1))
            chunks.append(np.zeros(fan_out))
        return cls(tuple(layer_sizes), np.concatenate(chunks), weight_norm)

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def layers(self, params: Optional[np.ndarray] = None) -> List[LayerView]:
        flat = self.params if params is None else params
        views = []
        offset = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            V = flat[offset:offset + fan_out * fan_in].reshape(fan_out, fan_in)
            offset += fan_out * fan_in
            g = None
            if self.weight_norm:
                g = flat[offset:offset + fan_out]
                offset += fan_out
            b = flat[offset:offset + fan_out]
            offset += fan_out
            views.append(LayerView(V, g, b))
        return views

    def effective_weights(self) -> List[np.ndarray]:
        return [_effective_weight(layer)[0] for layer in self.layers()]

    def with_params(self, params: np.ndarray) -> "Mlp":
        return Mlp(self.layer_sizes, params, self.weight_norm)

    def to_document(self) -> NetworkDocument:
        return NetworkDocument(
            layer_sizes=list(self.layer_sizes),
            weight_norm=self.weight_norm,
            layers=[
                NetworkLayerDocument(
                    V=layer.V.ravel().tolist(),
                    g=None if layer.g is None else layer.g.tolist(),
                    b=layer.b.tolist(),
                )
                for layer in self.layers()
            ],
        )

    @classmethod
    def from_document(cls, doc: NetworkDocument) -> "Mlp":
        chunks = []
        for layer in doc.layers:
            chunks.append(np.asarray(layer.V, dtype=np.float64))
            if doc.weight_norm:
                if layer.g is None:
                    raise InputShapeError("weight-normalized network document is missing gains")
                chunks.append(np.asarray(layer.g, dtype=np.float64))
            chunks.append(np.asarray(layer.b, dtype=np.float64))
        params = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(tuple(doc.layer_sizes), params, doc.weight_norm)


def _effective_weight(layer: LayerView) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    if layer.g is None:
        return layer.V, None
    norms = np.linalg.norm(layer.V, axis=1)
    return (layer.g / norms)[:, None] * layer.V, norms


@dataclass
class ForwardTrace:
    """Activations of every layer plus the effective weights used to get them."""
    activations: List[np.ndarray]
    weights: List[np.ndarray]
    norms: List[Optional[np.ndarray]]

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


def _as_batch(net: Mlp, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr[None, :] if single else arr
    if batch.ndim != 2 or batch.shape[1] != net.input_size:
        raise InputShapeError(
            f"network expects inputs of length {net.input_size}, got shape {arr.shape}"
        )
    return batch, single


def forward_trace(net: Mlp, x: np.ndarray) -> ForwardTrace:
    """Forward pass over a batch ``(B, in)`` keeping every activation."""
    batch, _ = _as_batch(net, x)
    activations = [batch]
    weights, norms = [], []
    layers = net.layers()
    h = batch
    for index, layer in enumerate(layers):
        W, n = _effective_weight(layer)
        a = h @ W.T + layer.b
        h = a if index == len(layers) - 1 else np.tanh(a)
        activations.append(h)
        weights.append(W)
        norms.append(n)
    return ForwardTrace(activations, weights, norms)


def backward_from_trace(net: Mlp, trace: ForwardTrace, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(grad_out * output)`` w.r.t. the flat parameters."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.ndim == 1:
        grad_out = grad_out[None, :]
    if grad_out.shape != trace.output.shape:
        raise InputShapeError(
            f"upstream gradient has shape {grad_out.shape}, network output is {trace.output.shape}"
        )

    layers = net.layers()
    chunks: List[List[np.ndarray]] = []
    delta = grad_out
    for index in range(len(layers) - 1, -1, -1):
        layer = layers[index]
        h_prev = trace.activations[index]
        dW = delta.T @ h_prev
        db = delta.sum(axis=0)
        if index > 0:
            delta = (delta @ trace.weights[index]) * (1.0 - h_prev ** 2)

        if layer.g is None:
            chunks.append([dW.ravel(), db])
        else:
            n = trace.norms[index]
            dg = np.sum(dW * layer.V, axis=1) / n
            dV = (layer.g / n)[:, None] * (dW - layer.V * (dg / n)[:, None])
            chunks.append([dV.ravel(), dg, db])

    return np.concatenate([part for layer_parts in reversed(chunks) for part in layer_parts])


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """
    Raw network output (no head nonlinearity).

    Args:
        net: the network
        x: one input vector ``(in,)`` or a batch ``(B, in)``

    Returns:
        ``(out,)`` for a single vector, ``(B, out)`` for a batch
    """
    _, single = _as_batch(net, x)
    out = forward_trace(net, x).output
    return out[0] if single else out


def mlp_backward(net: Mlp, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """
    Gradient of ``grad_out . mlp_forward(net, x)`` w.r.t. the flat parameters,
    summed over the batch when ``x`` is a batch.
    """
    return backward_from_trace(net, forward_trace(net, x), grad_out)


@dataclass
class AdamState:
    """Adam optimizer buffers aligned with a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, lr: float = 1e-3, **kwargs) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), lr=lr, **kwargs)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """
    One bias-corrected Adam update.

    Mutates the moment buffers and step counter of ``state`` and returns the
    updated parameter vector.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape or state.m.shape != params.shape:
        raise InputShapeError(
            f"Adam buffers {state.m.shape}, params {params.shape} and grads {grads.shape} must align"
        )
    if not np.all(np.isfinite(grads)):
        raise TrainingDivergenceError("non-finite gradient entry")

    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
