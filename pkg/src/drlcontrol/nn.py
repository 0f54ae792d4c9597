"""Dense networks with hand-written backpropagation, batch norm and Adam.

Each layer computes ``f(BN(x W^T + b))`` where the batch-norm step is
optional. All trainable parameters of a network live in one contiguous
float64 vector (``DenseNetwork.params``) and the layer attributes are views
into it, so the optimizer and the target-network update each touch a single
array.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from drlcontrol import kernels
from drlcontrol.errors import (
    ContractViolation,
    InvalidParameterError,
    InvalidShapeError,
    NumericOverflowError,
)


class Activation(str, enum.Enum):
    LINEAR = "linear"
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"


class Mode(str, enum.Enum):
    TRAIN = "train"
    INFER = "infer"


def _sigmoid(x):
    # split on sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation_apply(kind, x):
    """Apply an activation elementwise. Accepts scalars or arrays."""
    kind = Activation(kind)
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=np.float64)
    if kind is Activation.LINEAR:
        y = x.copy()
    elif kind is Activation.RELU:
        y = np.maximum(x, 0.0)
    elif kind is Activation.TANH:
        y = np.tanh(x)
    else:
        y = _sigmoid(x)
    return float(y) if scalar else y


def activation_derivative(kind, x, y=None):
    """Derivative of the activation at ``x``; ``y`` may pass f(x) if known."""
    kind = Activation(kind)
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=np.float64)
    if kind is Activation.LINEAR:
        d = np.ones_like(x)
    elif kind is Activation.RELU:
        d = (x > 0.0).astype(np.float64)
    elif kind is Activation.TANH:
        t = np.tanh(x) if y is None else y
        d = 1.0 - t * t
    else:
        s = _sigmoid(x) if y is None else y
        d = s * (1.0 - s)
    return float(d) if scalar else d


def xavier_init(in_dim, out_dim, rng, bound=None):
    """Glorot-uniform ``(out_dim, in_dim)`` weight matrix.

    ``bound`` overrides the default ``sqrt(6 / (in_dim + out_dim))``.
    """
    if in_dim < 1 or out_dim < 1:
        raise InvalidShapeError(f"xavier_init needs positive dims, got ({in_dim}, {out_dim})")
    if bound is None:
        bound = math.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.99


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: Activation
    batch_norm: BatchNormState | None = None
    l2_decay: float = 0.0

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]


@dataclass
class LayerSpec:
    """Shape and options of one layer, before parameters exist."""

    in_dim: int
    out_dim: int
    activation: Activation = Activation.RELU
    batch_norm: bool = False
    l2_decay: float = 0.0
    init_bound: float | None = None
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.99


@dataclass
class ForwardCache:
    version: int
    mode: Mode
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)  # x W^T + b
    xhat: list = field(default_factory=list)  # normalized pre-activation (BN layers)
    inv_std: list = field(default_factory=list)
    normed: list = field(default_factory=list)  # input to the activation
    outputs: list = field(default_factory=list)


@dataclass
class Gradients:
    flat: np.ndarray  # same layout as DenseNetwork.params
    layers: list  # per layer dict of views: weights, biases[, gamma, beta]
    inputs: np.ndarray


class DenseNetwork:
    """Stack of dense layers sharing one flat parameter vector."""

    def __init__(self, specs: Sequence[LayerSpec], rng=None):
        if not specs:
            raise InvalidShapeError("network needs at least one layer")
        for prev, nxt in zip(specs, specs[1:]):
            if prev.out_dim != nxt.in_dim:
                raise InvalidShapeError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        for s in specs:
            if s.l2_decay < 0:
                raise InvalidParameterError("l2_decay must be nonnegative")
            if s.batch_norm and not (s.bn_epsilon > 0 and 0 < s.bn_momentum <= 1):
                raise InvalidParameterError("batch norm needs epsilon > 0, momentum in (0, 1]")
        self.specs = [LayerSpec(**vars(s)) for s in specs]
        for s in self.specs:
            s.activation = Activation(s.activation)
        self.input_dim = specs[0].in_dim
        self.output_dim = specs[-1].out_dim
        self._version = 0

        n_params = 0
        n_buffers = 0
        for s in self.specs:
            n_params += s.out_dim * s.in_dim + s.out_dim
            if s.batch_norm:
                n_params += 2 * s.out_dim
                n_buffers += 2 * s.out_dim
        self.params = np.zeros(n_params)
        self.buffers = np.zeros(n_buffers)
        self._slices = []  # per layer: dict name -> (start, stop, shape)
        self.layers: list[DenseLayer] = []
        p = q = 0
        for s in self.specs:
            sl = {}
            sl["weights"] = (p, p + s.out_dim * s.in_dim, (s.out_dim, s.in_dim))
            p += s.out_dim * s.in_dim
            sl["biases"] = (p, p + s.out_dim, (s.out_dim,))
            p += s.out_dim
            bn = None
            if s.batch_norm:
                sl["gamma"] = (p, p + s.out_dim, (s.out_dim,))
                p += s.out_dim
                sl["beta"] = (p, p + s.out_dim, (s.out_dim,))
                p += s.out_dim
                rm = self.buffers[q : q + s.out_dim]
                rv = self.buffers[q + s.out_dim : q + 2 * s.out_dim]
                q += 2 * s.out_dim
                rv[:] = 1.0
                bn = BatchNormState(
                    gamma=self._view(self.params, sl["gamma"]),
                    beta=self._view(self.params, sl["beta"]),
                    running_mean=rm,
                    running_var=rv,
                    epsilon=s.bn_epsilon,
                    momentum=s.bn_momentum,
                )
                bn.gamma[:] = 1.0
            self._slices.append(sl)
            self.layers.append(
                DenseLayer(
                    weights=self._view(self.params, sl["weights"]),
                    biases=self._view(self.params, sl["biases"]),
                    activation=s.activation,
                    batch_norm=bn,
                    l2_decay=s.l2_decay,
                )
            )
        if rng is not None:
            self.initialize(rng)

    @staticmethod
    def _view(flat, sl):
        start, stop, shape = sl
        return flat[start:stop].reshape(shape)

    def initialize(self, rng):
        """Xavier weights, zero biases, unit gamma, zero beta."""
        for s, layer in zip(self.specs, self.layers):
            layer.weights[:] = xavier_init(s.in_dim, s.out_dim, rng, bound=s.init_bound)
            layer.biases[:] = 0.0
            if layer.batch_norm is not None:
                layer.batch_norm.gamma[:] = 1.0
                layer.batch_norm.beta[:] = 0.0
                layer.batch_norm.running_mean[:] = 0.0
                layer.batch_norm.running_var[:] = 1.0
        self.touch()

    def touch(self):
        """Mark parameters as changed; invalidates outstanding caches."""
        self._version += 1

    @property
    def version(self):
        return self._version

    def copy(self):
        twin = DenseNetwork(self.specs)
        twin.params[:] = self.params
        twin.buffers[:] = self.buffers
        return twin

    def load_state(self, other: DenseNetwork):
        if other.params.shape != self.params.shape or other.buffers.shape != self.buffers.shape:
            raise InvalidShapeError("network architectures differ")
        self.params[:] = other.params
        self.buffers[:] = other.buffers
        self.touch()

    # -- forward / backward -------------------------------------------------

    def forward(self, x, mode=Mode.TRAIN):
        """Run a batch (one row per sample) through the network.

        Returns ``(output, cache)``. TRAIN mode normalizes with batch
        statistics and updates the running statistics; INFER mode uses the
        running statistics and leaves the network untouched.
        """
        mode = Mode(mode)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != self.input_dim:
            raise InvalidShapeError(
                f"expected input of shape (batch, {self.input_dim}), got {x.shape}"
            )
        cache = ForwardCache(version=self._version, mode=mode)
        h = x
        for layer in self.layers:
            cache.inputs.append(h)
            z = h @ layer.weights.T + layer.biases
            cache.pre.append(z)
            bn = layer.batch_norm
            if bn is None:
                zn = z
                cache.xhat.append(None)
                cache.inv_std.append(None)
            elif mode is Mode.TRAIN:
                zn, xhat, mean, var, inv_std = kernels.bn_forward_train(
                    np.ascontiguousarray(z), bn.gamma, bn.beta, bn.epsilon
                )
                bn.running_mean *= bn.momentum
                bn.running_mean += (1.0 - bn.momentum) * mean
                bn.running_var *= bn.momentum
                bn.running_var += (1.0 - bn.momentum) * var
                cache.xhat.append(xhat)
                cache.inv_std.append(inv_std)
            else:
                inv_std = 1.0 / np.sqrt(bn.running_var + bn.epsilon)
                scale = bn.gamma * inv_std
                zn = z * scale
                zn += bn.beta - bn.running_mean * scale
                cache.xhat.append(None)  # rebuilt from ``pre`` if param grads are needed
                cache.inv_std.append(inv_std)
            cache.normed.append(zn)
            h = zn if layer.activation is Activation.LINEAR else activation_apply(layer.activation, zn)
            cache.outputs.append(h)
        if not np.all(np.isfinite(h)):
            raise NumericOverflowError("non-finite activations in forward pass")
        return h, cache

    def predict(self, x):
        """INFER-mode output without a cache.

        Batch norm is folded into the weights, so each layer costs one
        matmul.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise InvalidShapeError(
                f"expected input of shape (batch, {self.input_dim}), got {x.shape}"
            )
        h = x
        for layer in self.layers:
            bn = layer.batch_norm
            if bn is None:
                z = h @ layer.weights.T
                z += layer.biases
            else:
                scale = bn.gamma / np.sqrt(bn.running_var + bn.epsilon)
                z = h @ layer.weights.T
                z *= scale
                z += (layer.biases - bn.running_mean) * scale + bn.beta
            h = _activate_inplace(layer.activation, z)
        if not np.all(np.isfinite(h)):
            raise NumericOverflowError("non-finite activations in forward pass")
        return h

    def backward(self, cache: ForwardCache, upstream, param_grads=True):
        """Backpropagate ``upstream`` = d(objective)/d(output).

        Returns :class:`Gradients`. Weight and bias gradients of layers with
        ``l2_decay > 0`` include the decay term ``l2_decay * param``. With
        ``param_grads=False`` only the input gradient is computed.
        """
        if cache.version != self._version:
            raise ContractViolation("forward cache is stale: parameters changed since forward")
        upstream = np.asarray(upstream, dtype=np.float64)
        out = cache.outputs[-1]
        if upstream.shape != out.shape:
            raise InvalidShapeError(f"upstream gradient shape {upstream.shape} != output {out.shape}")
        flat = np.zeros_like(self.params) if param_grads else None
        views = []
        delta = upstream
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            sl = self._slices[idx]
            zn = cache.normed[idx]
            if layer.activation is Activation.RELU:
                delta = np.multiply(delta, zn > 0.0)
            elif layer.activation is not Activation.LINEAR:
                delta = delta * activation_derivative(layer.activation, zn, cache.outputs[idx])
            bn = layer.batch_norm
            lv = {}
            if bn is not None:
                if cache.mode is Mode.TRAIN:
                    dz, dgamma, dbeta = kernels.bn_backward(
                        np.ascontiguousarray(delta), cache.xhat[idx], bn.gamma, cache.inv_std[idx]
                    )
                else:
                    dz = delta * (bn.gamma * cache.inv_std[idx])
                    if param_grads:
                        xhat = (cache.pre[idx] - bn.running_mean) * cache.inv_std[idx]
                        dgamma = (delta * xhat).sum(axis=0)
                        dbeta = delta.sum(axis=0)
                if param_grads:
                    lv["gamma"] = self._view(flat, sl["gamma"])
                    lv["beta"] = self._view(flat, sl["beta"])
                    lv["gamma"][:] = dgamma
                    lv["beta"][:] = dbeta
                delta = dz
            if param_grads:
                lv["weights"] = self._view(flat, sl["weights"])
                lv["biases"] = self._view(flat, sl["biases"])
                np.matmul(delta.T, cache.inputs[idx], out=lv["weights"])
                lv["biases"][:] = delta.sum(axis=0)
                if layer.l2_decay > 0.0:
                    lv["weights"] += layer.l2_decay * layer.weights
                    lv["biases"] += layer.l2_decay * layer.biases
            views.append(lv)
            delta = delta @ layer.weights
        views.reverse()
        return Gradients(flat=flat, layers=views, inputs=delta)


def _activate_inplace(kind, z):
    if kind is Activation.RELU:
        return np.maximum(z, 0.0, out=z)
    if kind is Activation.TANH:
        return np.tanh(z, out=z)
    if kind is Activation.SIGMOID:
        return _sigmoid(z)
    return z


def build_mlp(
    input_dim,
    output_dim,
    hidden=(400, 300),
    hidden_activations=(Activation.RELU, Activation.RELU),
    output_activation=Activation.LINEAR,
    batch_norm=True,
    l2_decay=0.0,
    l2_layers=(1,),
    output_init_bound=None,
    bn_momentum=0.99,
    bn_epsilon=1e-5,
    rng=None,
):
    """Fully-connected network with batch-normalized hidden layers.

    ``l2_layers`` lists the hidden-layer indices that receive ``l2_decay``.
    """
    if len(hidden_activations) != len(hidden):
        raise InvalidShapeError("one activation per hidden layer required")
    specs = []
    prev = input_dim
    for i, (width, act) in enumerate(zip(hidden, hidden_activations)):
        specs.append(
            LayerSpec(
                in_dim=prev,
                out_dim=width,
                activation=Activation(act),
                batch_norm=batch_norm,
                l2_decay=l2_decay if i in l2_layers else 0.0,
                bn_epsilon=bn_epsilon,
                bn_momentum=bn_momentum,
            )
        )
        prev = width
    specs.append(
        LayerSpec(
            in_dim=prev,
            out_dim=output_dim,
            activation=Activation(output_activation),
            init_bound=output_init_bound,
        )
    )
    return DenseNetwork(specs, rng=rng)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    step_count: int = 0

    @classmethod
    def for_params(cls, params, learning_rate, **kw):
        if learning_rate <= 0:
            raise InvalidParameterError("learning_rate must be positive")
        return cls(np.zeros_like(params), np.zeros_like(params), learning_rate, **kw)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam descent step, in place on ``params`` and ``state``."""
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise InvalidShapeError(
            f"adam_step shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"state {state.first_moment.shape}"
        )
    state.step_count += 1
    kernels.adam_update(
        params,
        np.ascontiguousarray(grads, dtype=np.float64),
        state.first_moment,
        state.second_moment,
        state.learning_rate,
        state.beta1,
        state.beta2,
        state.epsilon_hat,
        state.step_count,
    )
    return params, state


# -- checkpoint format ------------------------------------------------------
#
#   drlcontrol-network 1
#   input_dim <n>
#   layers <L>
#   layer <in> <out> <activation> <batch_norm 0|1> <l2_decay> <bn_eps> <bn_momentum>
#   ... (L lines)
#   params <P>
#   <P floats, one per line, repr() round-trip precision>
#   buffers <B>
#   <B floats>
#
# Params are laid out layer by layer as W (row-major, out x in), b, and for
# batch-norm layers gamma then beta. Buffers hold running mean then running
# variance for each batch-norm layer.

NETWORK_MAGIC = "drlcontrol-network"
NETWORK_FORMAT_VERSION = 1


def network_to_lines(net: DenseNetwork):
    lines = [f"{NETWORK_MAGIC} {NETWORK_FORMAT_VERSION}", f"input_dim {net.input_dim}",
             f"layers {len(net.specs)}"]
    for s in net.specs:
        lines.append(
            f"layer {s.in_dim} {s.out_dim} {s.activation.value} {int(s.batch_norm)} "
            f"{s.l2_decay!r} {s.bn_epsilon!r} {s.bn_momentum!r}"
        )
    lines.append(f"params {net.params.size}")
    lines.extend(repr(float(v)) for v in net.params)
    lines.append(f"buffers {net.buffers.size}")
    lines.extend(repr(float(v)) for v in net.buffers)
    return lines


def network_from_lines(lines, start=0):
    """Parse a network block; returns ``(network, next_line_index)``."""
    def expect(i, key):
        parts = lines[i].split()
        if not parts or parts[0] != key:
            raise ValueError(f"checkpoint line {i + 1}: expected {key!r}, got {lines[i]!r}")
        return parts

    i = start
    parts = expect(i, NETWORK_MAGIC)
    if int(parts[1]) != NETWORK_FORMAT_VERSION:
        raise ValueError(f"unsupported network checkpoint version {parts[1]}")
    i += 1
    expect(i, "input_dim")
    i += 1
    n_layers = int(expect(i, "layers")[1])
    i += 1
    specs = []
    for _ in range(n_layers):
        p = expect(i, "layer")
        specs.append(
            LayerSpec(
                in_dim=int(p[1]),
                out_dim=int(p[2]),
                activation=Activation(p[3]),
                batch_norm=bool(int(p[4])),
                l2_decay=float(p[5]),
                bn_epsilon=float(p[6]),
                bn_momentum=float(p[7]),
            )
        )
        i += 1
    net = DenseNetwork(specs)
    n = int(expect(i, "params")[1])
    i += 1
    if n != net.params.size:
        raise ValueError("parameter count does not match layer dims")
    net.params[:] = [float(v) for v in lines[i : i + n]]
    i += n
    n = int(expect(i, "buffers")[1])
    i += 1
    if n != net.buffers.size:
        raise ValueError("buffer count does not match layer dims")
    net.buffers[:] = [float(v) for v in lines[i : i + n]]
    i += n
    net.touch()
    return net, i


def save_network(net: DenseNetwork, path):
    with open(path, "w") as fh:
        fh.write("\n".join(network_to_lines(net)) + "\n")


def load_network(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    return network_from_lines(lines)[0]
