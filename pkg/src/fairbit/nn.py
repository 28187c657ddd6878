"""Feed-forward network engine with one stochastically quantized binary layer.

All dense layers are full precision. The single stochastic layer squashes the
mean of its weighted inputs through a sigmoid to get per-neuron Bernoulli
parameters, then emits either a Bernoulli sample (``stochastic``), a hard
threshold of the weighted mean (``deterministic``), or the parameter itself
(``expected``). The ``expected`` mode makes the whole network a smooth
deterministic map, which is what gradient checking and score-based evaluation
use.

Gradients cross the sampling step with the straight-through convention: the
backward pass treats the emitted sample as if it were the Bernoulli parameter.
"""

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .exceptions import ConfigurationError, NumericError
from .rng import as_generator, substream

# Bernoulli parameters are clamped into [THETA_EPS, 1 - THETA_EPS] before
# sampling or entropy computation, so log terms stay finite.
THETA_EPS = 1e-7

DENSE_ACTIVATIONS = ("sigmoid", "relu", "identity", "softmax")
STOCHASTIC_MODES = ("stochastic", "deterministic", "expected")

_MODEL_MAGIC = b"FBITNET\x00"
_MODEL_VERSION = 1


def _apply_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "sigmoid":
        return expit(z)
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "identity":
        return z
    if activation == "softmax":
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    raise ConfigurationError(f"unknown activation {activation!r}")


def _activation_backward(g: np.ndarray, z: np.ndarray, a: np.ndarray,
                         activation: str) -> np.ndarray:
    """Gradient w.r.t. pre-activation z given gradient g w.r.t. activation a."""
    if activation == "sigmoid":
        return g * a * (1.0 - a)
    if activation == "relu":
        return g * (z > 0.0)
    if activation == "identity":
        return g
    if activation == "softmax":
        # Jacobian-vector product of the rowwise softmax.
        inner = (g * a).sum(axis=1, keepdims=True)
        return a * (g - inner)
    raise ConfigurationError(f"unknown activation {activation!r}")


@dataclass
class DenseLayer:
    """Full-precision affine layer: a = activation(W x + b)."""

    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray     # (out_dim,)
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ConfigurationError("dense weights must be a 2-d matrix")
        if self.bias.shape != (self.weights.shape[0],):
            raise ConfigurationError(
                f"bias shape {self.bias.shape} does not match "
                f"{self.weights.shape[0]} output units")
        if self.activation not in DENSE_ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ConfigurationError("dense layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class StochasticBinaryLayer:
    """Layer of stochastically quantized binary neurons.

    Per neuron i the Bernoulli parameter is
    ``theta_i = sigmoid(mean_j(w_ij * x_j) + b_i)`` where the mean runs over
    the previous layer (the 1/in_dim factor, not a plain sum). The bias term
    is off by default.
    """

    weights: np.ndarray  # (m, in_dim)
    bias: np.ndarray | None = None
    mode: str = "stochastic"
    include_bias: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] < 1:
            raise ConfigurationError("stochastic weights must be (m, in_dim) with m >= 1")
        if self.mode not in STOCHASTIC_MODES:
            raise ConfigurationError(f"unknown stochastic mode {self.mode!r}")
        if self.include_bias:
            if self.bias is None:
                self.bias = np.zeros(self.weights.shape[0])
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.weights.shape[0],):
                raise ConfigurationError("stochastic bias shape mismatch")
        else:
            self.bias = None
        if not np.isfinite(self.weights).all():
            raise ConfigurationError("stochastic layer weights must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def theta(self, x: np.ndarray) -> np.ndarray:
        z = x @ self.weights.T / self.in_dim
        if self.bias is not None:
            z = z + self.bias
        return np.clip(expit(z), THETA_EPS, 1.0 - THETA_EPS)


@dataclass
class BatchTrace:
    """Everything a forward pass produced, cached for backprop and MI terms."""

    inputs: np.ndarray
    pre_activations: list        # z per layer
    activations: list            # emitted output per layer
    theta: np.ndarray            # (batch, m) clamped Bernoulli parameters
    samples: np.ndarray | None   # (batch, m) in {0,1}, stochastic mode only
    mode: str

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class Network:
    """Ordered layer stack containing exactly one stochastic binary layer.

    Only hybrid networks are supported: every layer other than the stochastic
    one is full precision.
    """

    layers: list
    hybrid: bool = True

    def __post_init__(self):
        if not self.hybrid:
            raise ConfigurationError("fully binary networks are not supported; hybrid only")
        stochastic = [i for i, l in enumerate(self.layers)
                      if isinstance(l, StochasticBinaryLayer)]
        if len(stochastic) != 1:
            raise ConfigurationError(
                f"network needs exactly one stochastic layer, found {len(stochastic)}")
        self._stochastic_index = stochastic[0]
        for i in range(1, len(self.layers)):
            if self.layers[i].in_dim != self.layers[i - 1].out_dim:
                raise ConfigurationError(
                    f"layer {i} expects {self.layers[i].in_dim} inputs but layer "
                    f"{i - 1} emits {self.layers[i - 1].out_dim}")

    @property
    def stochastic_index(self) -> int:
        return self._stochastic_index

    @property
    def stochastic_layer(self) -> StochasticBinaryLayer:
        return self.layers[self._stochastic_index]

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list:
        """Flat parameter list in layer order (weights, then bias if any)."""
        params = []
        for layer in self.layers:
            params.append(layer.weights)
            if layer.bias is not None:
                params.append(layer.bias)
        return params

    def set_parameters(self, params: list) -> None:
        expected = self.parameters()
        if len(params) != len(expected):
            raise ConfigurationError(
                f"expected {len(expected)} parameter tensors, got {len(params)}")
        it = iter(params)
        for layer in self.layers:
            w = np.asarray(next(it), dtype=np.float64)
            if w.shape != layer.weights.shape:
                raise ConfigurationError("parameter shape mismatch")
            layer.weights = w
            if layer.bias is not None:
                b = np.asarray(next(it), dtype=np.float64)
                if b.shape != layer.bias.shape:
                    raise ConfigurationError("parameter shape mismatch")
                layer.bias = b

    def copy(self) -> "Network":
        layers = []
        for layer in self.layers:
            if isinstance(layer, StochasticBinaryLayer):
                layers.append(StochasticBinaryLayer(
                    weights=layer.weights.copy(),
                    bias=None if layer.bias is None else layer.bias.copy(),
                    mode=layer.mode,
                    include_bias=layer.include_bias))
            else:
                layers.append(DenseLayer(
                    weights=layer.weights.copy(),
                    bias=layer.bias.copy(),
                    activation=layer.activation))
        return Network(layers)

    def forward(self, x, seed=None, mode: str | None = None) -> BatchTrace:
        """Run the network on a batch of rows.

        ``seed`` may be an int or a numpy Generator; it is required only when
        the effective stochastic-layer mode is ``stochastic``. ``mode``
        overrides the layer's own mode for this pass.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ConfigurationError(
                f"batch has shape {x.shape}, expected (n, {self.input_dim})")
        effective_mode = mode or self.stochastic_layer.mode
        if effective_mode not in STOCHASTIC_MODES:
            raise ConfigurationError(f"unknown stochastic mode {effective_mode!r}")

        pre, acts = [], []
        theta = None
        samples = None
        current = x
        for i, layer in enumerate(self.layers):
            if isinstance(layer, StochasticBinaryLayer):
                z = current @ layer.weights.T / layer.in_dim
                if layer.bias is not None:
                    z = z + layer.bias
                theta = np.clip(expit(z), THETA_EPS, 1.0 - THETA_EPS)
                if effective_mode == "stochastic":
                    rng = as_generator(seed)
                    samples = (rng.random(theta.shape) < theta).astype(np.float64)
                    current = samples
                elif effective_mode == "deterministic":
                    current = (z >= 0.5).astype(np.float64)
                else:
                    current = theta
            else:
                z = current @ layer.weights.T + layer.bias
                current = _apply_activation(z, layer.activation)
            if not np.isfinite(current).all():
                raise NumericError(f"non-finite activation in layer {i}")
            pre.append(z)
            acts.append(current)
        return BatchTrace(inputs=x, pre_activations=pre, activations=acts,
                          theta=theta, samples=samples, mode=effective_mode)


def backward(net: Network, trace: BatchTrace, d_output: np.ndarray,
             d_theta: np.ndarray | None = None) -> list:
    """Backpropagate through a cached forward pass.

    ``d_output`` is the loss gradient w.r.t. the network output and
    ``d_theta`` an optional extra gradient injected directly at the Bernoulli
    parameter matrix (the path the mutual-information loss terms use; it never
    touches the samples). Returns gradients aligned with ``net.parameters()``.

    The Bernoulli sampling step uses the straight-through convention: the
    downstream gradient passes through the emitted activation as if it were
    theta.
    """
    if len(trace.pre_activations) != len(net.layers):
        raise ConfigurationError("trace does not match network layer count")
    if trace.inputs.shape[1] != net.input_dim:
        raise ConfigurationError("trace input width does not match network")
    d_output = np.asarray(d_output, dtype=np.float64)
    if d_output.shape != trace.output.shape:
        raise ConfigurationError(
            f"d_output shape {d_output.shape} does not match output "
            f"{trace.output.shape}")
    if d_theta is not None:
        d_theta = np.asarray(d_theta, dtype=np.float64)
        if d_theta.shape != trace.theta.shape:
            raise ConfigurationError(
                f"d_theta shape {d_theta.shape} does not match theta "
                f"{trace.theta.shape}")

    grads_reversed = []
    g = d_output
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        z = trace.pre_activations[i]
        a = trace.activations[i]
        x_in = trace.inputs if i == 0 else trace.activations[i - 1]
        if isinstance(layer, StochasticBinaryLayer):
            if z.shape != (x_in.shape[0], layer.out_dim):
                raise ConfigurationError("trace does not match stochastic layer shape")
            g_theta = g
            if d_theta is not None:
                g_theta = g_theta + d_theta
            g_z = g_theta * trace.theta * (1.0 - trace.theta)
            dw = g_z.T @ x_in / layer.in_dim
            if layer.bias is not None:
                grads_reversed.append(g_z.sum(axis=0))
            grads_reversed.append(dw)
            g = g_z @ layer.weights / layer.in_dim
        else:
            if z.shape != (x_in.shape[0], layer.out_dim):
                raise ConfigurationError("trace does not match dense layer shape")
            g_z = _activation_backward(g, z, a, layer.activation)
            grads_reversed.append(g_z.sum(axis=0))
            grads_reversed.append(g_z.T @ x_in)
            g = g_z @ layer.weights
    return grads_reversed[::-1]


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter list."""

    m: list
    v: list
    step: int = 0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: list, learning_rate: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params],
                     step=0, learning_rate=learning_rate,
                     beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: list, grads: list, state: AdamState):
    """One ADAM update. Pure: returns (new_params, new_state)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigurationError("params/grads/state length mismatch")
    t = state.step + 1
    new_m, new_v, new_params = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ConfigurationError("gradient shape does not match parameter")
        m1 = state.beta1 * m + (1.0 - state.beta1) * g
        v1 = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m1 / (1.0 - state.beta1 ** t)
        v_hat = v1 / (1.0 - state.beta2 ** t)
        new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m1)
        new_v.append(v1)
    return new_params, replace(state, m=new_m, v=new_v, step=t)


@dataclass
class NetworkConfig:
    """Shape of a hybrid network: dense trunk, stochastic penultimate layer.

    ``hidden_layers`` dense layers of width ``hidden_size`` feed the
    stochastic layer of width ``stochastic_width``, followed by the output
    layer (single sigmoid unit for 2 classes, softmax otherwise).
    """

    input_dim: int
    n_classes: int
    hidden_layers: int = 1
    hidden_size: int = 32
    stochastic_width: int = 8
    hidden_activation: str = "relu"
    include_bias: bool = False

    def __post_init__(self):
        if self.input_dim < 1 or self.n_classes < 2:
            raise ConfigurationError("need input_dim >= 1 and n_classes >= 2")
        if self.hidden_layers < 0 or self.hidden_size < 1 or self.stochastic_width < 1:
            raise ConfigurationError("layer counts/widths must be positive")
        if self.hidden_activation not in ("sigmoid", "relu", "identity"):
            raise ConfigurationError(
                f"unsupported hidden activation {self.hidden_activation!r}")


def _glorot_uniform(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def build_network(config: NetworkConfig, seed: int) -> Network:
    """Construct and initialize a network; deterministic given the seed.

    Dense and stochastic weights are Glorot-uniform, biases zero.
    """
    layers = []
    in_dim = config.input_dim
    for i in range(config.hidden_layers):
        rng = substream(seed, "init", i)
        layers.append(DenseLayer(
            weights=_glorot_uniform(rng, config.hidden_size, in_dim),
            bias=np.zeros(config.hidden_size),
            activation=config.hidden_activation))
        in_dim = config.hidden_size
    rng = substream(seed, "init", "stochastic")
    layers.append(StochasticBinaryLayer(
        weights=_glorot_uniform(rng, config.stochastic_width, in_dim),
        include_bias=config.include_bias))
    out_dim = 1 if config.n_classes == 2 else config.n_classes
    rng = substream(seed, "init", "output")
    layers.append(DenseLayer(
        weights=_glorot_uniform(rng, out_dim, config.stochastic_width),
        bias=np.zeros(out_dim),
        activation="sigmoid" if config.n_classes == 2 else "softmax"))
    return Network(layers)


def save_network(net: Network, path) -> None:
    """Write a network to a single self-describing binary file.

    Layout: 8-byte magic ``FBITNET\\x00``, little-endian uint32 format
    version, little-endian uint32 header length, UTF-8 JSON header describing
    every layer, then each parameter tensor in layer order (weights, then
    bias if present) as row-major little-endian float64. Round-trips are
    bit-exact.
    """
    header_layers = []
    for layer in net.layers:
        if isinstance(layer, StochasticBinaryLayer):
            header_layers.append({
                "kind": "stochastic",
                "in": layer.in_dim,
                "out": layer.out_dim,
                "mode": layer.mode,
                "include_bias": layer.include_bias,
            })
        else:
            header_layers.append({
                "kind": "dense",
                "in": layer.in_dim,
                "out": layer.out_dim,
                "activation": layer.activation,
            })
    header = json.dumps({"layers": header_layers}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<II", _MODEL_VERSION, len(header)))
        fh.write(header)
        for tensor in net.parameters():
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_network(path) -> Network:
    """Read a network written by :func:`save_network`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MODEL_MAGIC))
        if magic != _MODEL_MAGIC:
            raise ConfigurationError(f"{path}: not a fairbit model file")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _MODEL_VERSION:
            raise ConfigurationError(f"{path}: unsupported model format version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        layers = []
        for spec in header["layers"]:
            out_dim, in_dim = spec["out"], spec["in"]
            w = np.frombuffer(fh.read(8 * out_dim * in_dim), dtype="<f8")
            w = w.reshape(out_dim, in_dim).astype(np.float64)
            if spec["kind"] == "stochastic":
                bias = None
                if spec["include_bias"]:
                    bias = np.frombuffer(fh.read(8 * out_dim), dtype="<f8").astype(np.float64)
                layers.append(StochasticBinaryLayer(
                    weights=w, bias=bias, mode=spec["mode"],
                    include_bias=spec["include_bias"]))
            else:
                bias = np.frombuffer(fh.read(8 * out_dim), dtype="<f8").astype(np.float64)
                layers.append(DenseLayer(weights=w, bias=bias,
                                         activation=spec["activation"]))
        return Network(layers)
