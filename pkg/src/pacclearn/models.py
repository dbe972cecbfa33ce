"""Parametrizations f_theta: linear maps and multilayer perceptrons.

Parameters live in one flat float64 vector. ``ModelSpec.layout`` tells
which slice of it is which layer's weight matrix (stored fan-in x fan-out,
row-major) or bias.
"""

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import ConfigError, ShapeError

ACTIVATIONS = ("sigmoid", "relu")
OUTPUT_MAPS = ("softmax", "identity")


@dataclass(frozen=True)
class LayerSlice:
    name: str
    start: int
    shape: tuple

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def stop(self):
        return self.start + self.size


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    output_dim: int
    hidden: tuple = ()
    output_map: str = "softmax"
    activation: str = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind not in ("linear", "mlp"):
            raise ConfigError(f"unknown model kind {self.kind!r}", "model.kind")
        if self.kind == "linear" and self.hidden:
            raise ConfigError("linear models take no hidden widths", "model.hidden")
        if self.kind == "mlp" and not self.hidden:
            raise ConfigError("an MLP needs at least one hidden layer", "model.hidden")
        dims = (self.input_dim, self.output_dim) + self.hidden
        if any(int(d) < 1 for d in dims):
            raise ConfigError("all model dimensions must be >= 1", "model")
        if self.output_map not in OUTPUT_MAPS:
            raise ConfigError(f"unknown output map {self.output_map!r}", "model.output_map")
        if self.output_map == "softmax" and self.output_dim < 2:
            raise ConfigError("softmax output needs at least 2 classes", "model.output_dim")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}", "model.activation")

    @classmethod
    def linear(cls, input_dim, output_dim, output_map="softmax"):
        return cls("linear", input_dim, output_dim, (), output_map)

    @classmethod
    def mlp(cls, input_dim, hidden, output_dim, output_map="softmax", activation="sigmoid"):
        if isinstance(hidden, int):
            hidden = (hidden,)
        return cls("mlp", input_dim, output_dim, tuple(hidden), output_map, activation)

    @property
    def widths(self):
        return (self.input_dim,) + self.hidden + (self.output_dim,)

    @property
    def layout(self):
        slices, pos = [], 0
        w = self.widths
        for i in range(len(w) - 1):
            for name, shape in ((f"W{i}", (w[i], w[i + 1])), (f"b{i}", (w[i + 1],))):
                s = LayerSlice(name, pos, shape)
                slices.append(s)
                pos = s.stop
        return tuple(slices)

    @property
    def num_params(self):
        return self.layout[-1].stop


@dataclass
class ParameterVector:
    """Flat parameter vector paired with the model it parametrizes."""

    spec: ModelSpec
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.theta = nc.as_array(self.theta, "theta").reshape(-1)
        if self.theta.size != self.spec.num_params:
            raise ShapeError(
                f"theta has {self.theta.size} entries, model needs {self.spec.num_params}"
            )

    def layer(self, name):
        for s in self.spec.layout:
            if s.name == name:
                return self.theta[s.start : s.stop].reshape(s.shape)
        raise KeyError(name)


def init_theta(spec, rng=None, zeros=False):
    """Initial parameters: uniform(+-1/sqrt(fan_in)) weights, zero biases.

    ``zeros=True`` gives the all-zero start, only sensible for linear models
    (sigmoid MLPs stay stuck at the symmetric point).
    """
    theta = np.zeros(spec.num_params)
    if zeros:
        return theta
    rng = np.random.default_rng(rng)
    for s in spec.layout:
        if s.name.startswith("W"):
            bound = 1.0 / np.sqrt(s.shape[0])
            theta[s.start : s.stop] = rng.uniform(-bound, bound, size=s.size)
    return theta


def _check_input(spec, x):
    xv = x.value if isinstance(x, nc.Var) else np.asarray(x)
    if xv.ndim not in (1, 2) or xv.shape[-1] != spec.input_dim:
        raise ShapeError(f"input has shape {xv.shape}, model expects dimension {spec.input_dim}")
    return xv.ndim == 1


def forward(spec, theta, x):
    """Evaluate f_theta on one feature vector (d,) or a batch (N, d).

    ``theta`` and ``x`` may be plain arrays or :class:`~pacclearn.numcore.Var`;
    the result is a ``Var`` so it can be differentiated with respect to either.
    """
    single = _check_input(spec, x)
    if isinstance(theta, ParameterVector):
        theta = theta.theta
    theta = nc.constant(theta)
    if theta.shape != (spec.num_params,):
        raise ShapeError(f"theta has shape {theta.shape}, model needs ({spec.num_params},)")
    h = nc.constant(x)
    if single:
        h = h.reshape((1, spec.input_dim))
    layout = spec.layout
    n_layers = len(layout) // 2
    act = nc.sigmoid if spec.activation == "sigmoid" else nc.relu
    for i in range(n_layers):
        ws, bs = layout[2 * i], layout[2 * i + 1]
        W = theta[ws.start : ws.stop].reshape(ws.shape)
        b = theta[bs.start : bs.stop]
        h = h @ W + b
        if i < n_layers - 1:
            h = act(h)
    if spec.output_map == "softmax":
        h = nc.softmax(h, axis=-1)
    if single:
        h = h.reshape((spec.output_dim,))
    return h


def predict(spec, theta, x):
    """Numeric model output without keeping the graph around."""
    return forward(spec, theta, x).value


def predict_labels(spec, theta, x):
    """Argmax class per row; ties go to the smallest index."""
    return np.argmax(predict(spec, theta, np.atleast_2d(x)), axis=1)
