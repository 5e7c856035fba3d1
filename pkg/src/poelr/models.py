"""Small fully connected models with analytic gradients.

Parameter layout
----------------
For ``layer_widths = (w0, w1, ..., wL)`` the model has ``L`` affine layers.
Layer ``l`` holds a weight matrix of shape ``(w_{l-1}, w_l)`` (fan-in rows,
applied as ``a @ W + b``) and a bias of length ``w_l``. The flat parameter
vector concatenates, layer by layer, the weights in row-major order followed
by the biases (omitted when ``bias=False``). This layout is frozen:
snapshot files depend on it.

The activation is applied after every layer except the last; the last layer
produces logits (``softmax_ce``) or regression outputs (``mse``).

Losses are batch means. ``mse`` is the mean over examples of the squared
error summed over output units, so a one-layer identity model has Hessian
``(2/n) * Xb^T Xb`` (``Xb`` = inputs with a trailing column of ones, or the
bare inputs without bias) in each output block.
"""
import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import InvalidInput, NumericalOverflow
from .numcore import make_rng, sym_eig

ACTIVATIONS = ("relu", "tanh", "identity")
LOSSES = ("softmax_ce", "mse")


@dataclass(frozen=True)
class ModelSpec:
    layer_widths: tuple
    activation: str = "tanh"
    loss_kind: str = "softmax_ce"
    seed: int = 0
    bias: bool = True

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise InvalidInput("layer_widths needs an input and an output width")
        if any(w < 1 for w in widths):
            raise InvalidInput("layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise InvalidInput(f"unknown activation {self.activation!r}")
        if self.loss_kind not in LOSSES:
            raise InvalidInput(f"unknown loss {self.loss_kind!r}")
        if self.loss_kind == "softmax_ce" and widths[-1] < 2:
            raise InvalidInput("softmax_ce needs at least two output classes")

    @property
    def in_dim(self):
        return self.layer_widths[0]

    @property
    def out_dim(self):
        return self.layer_widths[-1]

    @property
    def shapes(self):
        return list(zip(self.layer_widths[:-1], self.layer_widths[1:]))

    @property
    def n_params(self):
        return sum(i * o + (o if self.bias else 0) for i, o in self.shapes)

    def to_dict(self):
        d = asdict(self)
        d["layer_widths"] = list(self.layer_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Batch:
    """Inputs plus either integer class ids or a real target matrix."""

    inputs: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.inputs)


def unpack(spec, theta):
    """Split a flat parameter vector into ``[(W, b), ...]`` views."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.n_params,):
        raise InvalidInput(f"theta has shape {theta.shape}, layout needs ({spec.n_params},)")
    layers, k = [], 0
    for fan_in, fan_out in spec.shapes:
        w = theta[k:k + fan_in * fan_out].reshape(fan_in, fan_out)
        k += fan_in * fan_out
        if spec.bias:
            b = theta[k:k + fan_out]
            k += fan_out
        else:
            b = np.zeros(fan_out)
        layers.append((w, b))
    return layers


def init_params(spec, seed=None):
    """Fan-in scaled uniform weights ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases."""
    rng = make_rng(spec.seed if seed is None else seed, "init")
    parts = []
    for fan_in, fan_out in spec.shapes:
        bound = 1.0 / math.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        if spec.bias:
            parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(kind, z, a):
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _check_inputs(spec, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise InvalidInput(f"inputs of shape {x.shape} do not match input width {spec.in_dim}")
    if x.shape[0] < 1:
        raise InvalidInput("batch is empty")
    return x


def _targets(spec, labels, n):
    """Return ``(class_ids or None, target matrix or None)`` for the loss."""
    y = np.asarray(labels)
    if y.ndim == 1 and np.issubdtype(y.dtype, np.integer):
        if y.shape[0] != n:
            raise InvalidInput("labels and inputs disagree on batch size")
        if np.any(y < 0) or np.any(y >= spec.out_dim):
            raise InvalidInput(f"class ids must lie in [0, {spec.out_dim})")
        if spec.loss_kind == "mse":
            t = np.zeros((n, spec.out_dim))
            t[np.arange(n), y] = 1.0
            return None, t
        return y, None
    if spec.loss_kind != "mse":
        raise InvalidInput("softmax_ce needs integer class ids")
    t = np.asarray(labels, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    if t.shape != (n, spec.out_dim):
        raise InvalidInput(f"targets of shape {t.shape} do not match ({n}, {spec.out_dim})")
    return None, t


def _forward(spec, layers, x):
    pre, post = [], [x]
    a = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = a @ w + b
        pre.append(z)
        a = z if i == last else _activate(spec.activation, z)
        post.append(a)
    return pre, post


def _per_example_loss(spec, out, ids, targets):
    """Per-example losses and dLoss_i/dOut (not divided by n)."""
    if spec.loss_kind == "softmax_ce":
        m = out.max(axis=1, keepdims=True)
        e = np.exp(out - m)
        s = e.sum(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(s[:, 0])
        n = out.shape[0]
        losses = lse - out[np.arange(n), ids]
        dout = e / s
        dout[np.arange(n), ids] -= 1.0
        return losses, dout
    r = out - targets
    return np.sum(r * r, axis=1), 2.0 * r


def _evaluate(spec, theta, inputs, labels, need_input_grad=False):
    x = _check_inputs(spec, inputs)
    ids, targets = _targets(spec, labels, x.shape[0])
    layers = unpack(spec, theta)
    with np.errstate(over="ignore", invalid="ignore"):
        pre, post = _forward(spec, layers, x)
        losses, dout = _per_example_loss(spec, post[-1], ids, targets)
    if not (np.all(np.isfinite(losses)) and np.all(np.isfinite(dout))):
        raise NumericalOverflow("non-finite values in the forward pass")
    return x, layers, pre, post, losses, dout


def _backward(spec, layers, pre, post, delta):
    """Backpropagate ``delta = dL/dOut``; returns flat grad and dL/dInputs."""
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        if i < len(layers) - 1:
            delta = delta * _activation_grad(spec.activation, pre[i], post[i + 1])
        grads.append((post[i].T @ delta, delta.sum(axis=0)))
        delta = delta @ w.T
    flat = []
    for gw, gb in reversed(grads):
        flat.append(gw.ravel())
        if spec.bias:
            flat.append(gb)
    return np.concatenate(flat), delta


def loss_and_grad(spec, theta, batch):
    """Mean batch loss and its exact gradient with respect to ``theta``."""
    x, layers, pre, post, losses, dout = _evaluate(spec, theta, batch.inputs, batch.labels)
    n = x.shape[0]
    grad, _ = _backward(spec, layers, pre, post, dout / n)
    if not np.all(np.isfinite(grad)):
        raise NumericalOverflow("non-finite gradient")
    # fsum is correctly rounded, so the loss does not depend on batch order
    return math.fsum(losses) / n, grad


def loss(spec, theta, batch):
    _, _, _, _, losses, _ = _evaluate(spec, theta, batch.inputs, batch.labels)
    return math.fsum(losses) / len(losses)


def input_grad(spec, theta, inputs, labels):
    """Per-example losses and their gradients with respect to each input row."""
    _, layers, pre, post, losses, dout = _evaluate(spec, theta, inputs, labels)
    _, gx = _backward(spec, layers, pre, post, dout)
    return losses, gx


def finite_diff_grad(spec, theta, batch, h=1e-5):
    """Central-difference gradient of the mean batch loss, one coordinate at a time."""
    if not h > 0:
        raise InvalidInput("h must be positive")
    theta = np.array(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        up = loss(spec, theta, batch)
        theta[i] = old - h
        down = loss(spec, theta, batch)
        theta[i] = old
        g[i] = (up - down) / (2.0 * h)
    return g


def forward(spec, theta, inputs):
    """Raw network outputs (logits or regression values)."""
    x = _check_inputs(spec, inputs)
    _, post = _forward(spec, unpack(spec, theta), x)
    return post[-1]


def predict(spec, theta, inputs):
    """Class ids by argmax of the outputs; ties go to the lowest index."""
    return np.argmax(forward(spec, theta, inputs), axis=1)


def accuracy(spec, theta, inputs, labels):
    return float(np.mean(predict(spec, theta, inputs) == np.asarray(labels)))


def analytic_smoothness(spec, inputs):
    """Exact gradient-Lipschitz constant of a one-layer identity ``mse`` model.

    The loss is quadratic with Hessian ``(2/n) Xb^T Xb`` per output block, so
    the constant is that matrix's largest eigenvalue.
    """
    if len(spec.layer_widths) != 2 or spec.loss_kind != "mse":
        raise InvalidInput("closed form exists only for one-layer mse models")
    x = _check_inputs(spec, inputs)
    xb = np.hstack([x, np.ones((x.shape[0], 1))]) if spec.bias else x
    w, _ = sym_eig(2.0 / x.shape[0] * (xb.T @ xb))
    return float(w[-1])
