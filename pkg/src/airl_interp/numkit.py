"""Small reverse-mode autodiff over float64 numpy arrays, plus MLPs and optimizers.

Gradient semantics: ``Tensor.backward()`` evaluates the gradient of a scalar
with respect to every leaf tensor created with ``requires_grad=True`` and
*adds* it to that leaf's ``.grad`` (``None`` counts as zero). Intermediate
nodes never keep gradients, so calling ``backward`` twice on the same graph
doubles the leaf gradients and nothing else. Call ``zero_grad`` on the network
(or the optimizer) before each backward pass you want to stand alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError, DimensionError, TrainingError

DTYPE = np.float64


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "layer", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad=False, name="", _parents=(), _grad_fn=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.layer = None
        self._parents = _parents
        self._grad_fn = _grad_fn

    # -- basics ---------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def _tracked(self) -> bool:
        return self.requires_grad or self._grad_fn is not None

    @staticmethod
    def _make(data, parents, grad_fn):
        live = tuple(p for p in parents if p._tracked())
        if not live:
            return Tensor(data)
        return Tensor(data, _parents=parents, _grad_fn=grad_fn)

    # -- elementwise arithmetic ----------------------------------------
    def __add__(self, other):
        other = ensure_tensor(other)
        a, b = self, other

        def grad_fn(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(a.data + b.data, (a, b), grad_fn)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-ensure_tensor(other))

    def __rsub__(self, other):
        return ensure_tensor(other) + (-self)

    def __mul__(self, other):
        other = ensure_tensor(other)
        a, b = self, other

        def grad_fn(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._make(a.data * b.data, (a, b), grad_fn)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = ensure_tensor(other)
        a, b = self, other

        def grad_fn(g):
            return (
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
            )

        return Tensor._make(a.data / b.data, (a, b), grad_fn)

    def __rtruediv__(self, other):
        return ensure_tensor(other) / self

    def __matmul__(self, other):
        other = ensure_tensor(other)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise DimensionError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

        def grad_fn(g):
            return g @ b.data.T, a.data.T @ g

        return Tensor._make(a.data @ b.data, (a, b), grad_fn)

    @property
    def T(self):
        return Tensor._make(self.data.T, (self,), lambda g: (g.T,))

    def reshape(self, *shape):
        old = self.shape
        return Tensor._make(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def __getitem__(self, idx):
        old = self.shape

        def grad_fn(g):
            out = np.zeros(old, dtype=DTYPE)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor._make(self.data[idx], (self,), grad_fn)

    # -- nonlinearities -------------------------------------------------
    def tanh(self):
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),))

    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self):
        x = self.data
        return Tensor._make(np.log(x), (self,), lambda g: (g / x,))

    def softplus(self):
        """log(1 + exp(x)) without overflow."""
        x = self.data
        out = np.logaddexp(0.0, x)
        return Tensor._make(out, (self,), lambda g: (g * _sigmoid(x),))

    def log_sigmoid(self):
        x = self.data
        out = -np.logaddexp(0.0, -x)
        return Tensor._make(out, (self,), lambda g: (g * _sigmoid(-x),))

    def log_softmax(self, axis=-1):
        x = self.data
        shifted = x - x.max(axis=axis, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        probs = np.exp(out)

        def grad_fn(g):
            return (g - probs * g.sum(axis=axis, keepdims=True),)

        return Tensor._make(out, (self,), grad_fn)

    # -- reductions -----------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        old = self.shape

        def grad_fn(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, old).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), grad_fn)

    def mean(self, axis=None):
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis) / float(n)

    def pick(self, index):
        """Row-wise gather: ``out[i] = self[i, index[i]]`` for a 2-d tensor."""
        index = np.asarray(index, dtype=np.int64)
        rows = np.arange(self.shape[0])
        return self[rows, index]

    # -- differentiation ------------------------------------------------
    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if not parent._tracked():
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topological_order(root: Tensor) -> list[Tensor]:
    """Nodes in reverse topological order (root first), iterative DFS."""
    seen = set()
    post = []
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            post.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._tracked() and id(p) not in seen:
                stack.append((p, False))
    post.reverse()
    return post


def _sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(x):
    """Numerically stable logistic function on arrays."""
    return _sigmoid(x)


def ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [ensure_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._make(data, tuple(tensors), grad_fn)


def backward(loss: Tensor) -> None:
    """Functional spelling of ``loss.backward()``."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor produced by a forward pass")
    loss.backward()


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------


class Mlp:
    """Fully connected net: tanh on hidden layers, identity on the output.

    ``weights[i]`` has shape ``[dims[i+1], dims[i]]`` and ``biases[i]`` has
    shape ``[dims[i+1]]``.
    """

    def __init__(self, layer_dims, weights, biases, seed=0):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise DimensionError(f"layer_dims needs >= 2 positive widths, got {layer_dims}")
        if len(weights) != len(layer_dims) - 1 or len(biases) != len(weights):
            raise DimensionError("one (weight, bias) pair per layer is required")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (layer_dims[i + 1], layer_dims[i]) or b.shape != (layer_dims[i + 1],):
                raise DimensionError(
                    f"layer {i}: weight {w.shape} / bias {b.shape} incompatible with "
                    f"dims {layer_dims[i]}->{layer_dims[i + 1]}"
                )
            w.requires_grad = b.requires_grad = True
            w.name, b.name = f"layer{i}.weight", f"layer{i}.bias"
            w.layer = b.layer = i
        self.layer_dims = layer_dims
        self.weights = list(weights)
        self.biases = list(biases)
        self.seed = int(seed)

    @classmethod
    def init(cls, layer_dims, seed=0) -> "Mlp":
        """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            a = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(Tensor(rng.uniform(-a, a, size=(fan_out, fan_in))))
            biases.append(Tensor(np.zeros(fan_out)))
        return cls(layer_dims, weights, biases, seed=seed)

    @classmethod
    def from_arrays(cls, weights, biases, seed=0) -> "Mlp":
        weights = [Tensor(np.array(w, dtype=DTYPE)) for w in weights]
        biases = [Tensor(np.array(b, dtype=DTYPE)) for b in biases]
        dims = [weights[0].shape[1]] + [w.shape[0] for w in weights]
        return cls(dims, weights, biases, seed=seed)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list[Tensor]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def copy(self) -> "Mlp":
        return Mlp.from_arrays(
            [w.data.copy() for w in self.weights],
            [b.data.copy() for b in self.biases],
            seed=self.seed,
        )

    def flat_weights(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def _check_input(self, shape):
        if len(shape) == 0 or shape[-1] != self.in_dim:
            raise DimensionError(
                f"input shape {tuple(shape)} does not match network input "
                f"[..., {self.in_dim}] (layer_dims={self.layer_dims})"
            )

    def __call__(self, x) -> Tensor:
        return forward(self, x)

    def predict(self, x) -> np.ndarray:
        """Graph-free forward pass; same arithmetic as ``forward``."""
        x = _as_array(x)
        self._check_input(x.shape)
        lead = x.shape[:-1]
        h = x.reshape(-1, self.in_dim)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data.T + b.data
            if i < last:
                h = np.tanh(h)
        return h.reshape(*lead, self.out_dim)


def forward(net: Mlp, x) -> Tensor:
    """Differentiable forward pass; accepts ``[..., in_dim]`` input."""
    x = ensure_tensor(x)
    net._check_input(x.shape)
    lead = x.shape[:-1]
    h = x.reshape(-1, net.in_dim)
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if i < last:
            h = h.tanh()
    return h.reshape(*lead, net.out_dim)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


def _collect(params_or_nets) -> list[Tensor]:
    if isinstance(params_or_nets, Mlp):
        return params_or_nets.parameters()
    params = []
    for item in params_or_nets:
        params.extend(item.parameters() if isinstance(item, Mlp) else [item])
    return params


def check_finite_grads(params) -> None:
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in {p.name or 'parameter'}", layer=p.layer)


class Optimizer:
    """Updates parameters in place from their ``.grad`` (``None`` = no update)."""

    def __init__(self, params):
        self.params = _collect(params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        """Apply one update; nothing changes if a gradient or a new value is non-finite."""
        check_finite_grads(self.params)
        updates = [(p, self._update(i, p)) for i, p in enumerate(self.params) if p.grad is not None]
        for p, new in updates:
            if not np.all(np.isfinite(new)):
                raise TrainingError(f"update overflowed {p.name or 'parameter'}", layer=p.layer)
        for p, new in updates:
            p.data[...] = new

    def _update(self, i, p) -> np.ndarray:  # pragma: no cover - abstract
        """Advance the optimizer state for ``p`` and return its new value."""
        raise NotImplementedError


class Sgd(Optimizer):
    """Heavy-ball momentum: ``v = momentum * v + grad``; ``w -= lr * v``."""

    def __init__(self, params, cfg: SgdConfig):
        super().__init__(params)
        self.cfg = cfg
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, p):
        v = self.velocity[i]
        v *= self.cfg.momentum
        v += p.grad
        return p.data - self.cfg.learning_rate * v


class Adam(Optimizer):
    def __init__(self, params, cfg: AdamConfig):
        super().__init__(params)
        self.cfg = cfg
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        super().step()

    def _update(self, i, p):
        c = self.cfg
        self.m[i] = c.beta1 * self.m[i] + (1 - c.beta1) * p.grad
        self.v[i] = c.beta2 * self.v[i] + (1 - c.beta2) * p.grad * p.grad
        m_hat = self.m[i] / (1 - c.beta1**self.t)
        v_hat = self.v[i] / (1 - c.beta2**self.t)
        return p.data - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


def step(net: Mlp, cfg: SgdConfig, optimizer: Sgd | None = None) -> Sgd:
    """One in-place SGD update of ``net`` from its accumulated gradients.

    Pass the returned optimizer back in to carry momentum across calls.
    """
    if optimizer is None:
        optimizer = Sgd(net, cfg)
    optimizer.step()
    return optimizer


def make_optimizer(kind: str, params, learning_rate: float, momentum: float = 0.0, seed: int = 0):
    if kind == "adam":
        return Adam(params, AdamConfig(learning_rate=learning_rate, seed=seed))
    if kind == "sgd":
        return Sgd(params, SgdConfig(learning_rate=learning_rate, momentum=momentum, seed=seed))
    raise ValueError(f"unknown optimizer {kind!r}")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "airl-interp/mlp-checkpoint/v1"


def mlp_to_dict(net: Mlp) -> dict:
    return {
        "layer_dims": list(net.layer_dims),
        "seed": net.seed,
        "weights": [w.data.ravel().tolist() for w in net.weights],
        "biases": [b.data.tolist() for b in net.biases],
    }


def mlp_from_dict(doc: dict) -> Mlp:
    try:
        dims = [int(d) for d in doc["layer_dims"]]
        weights = [
            np.array(w, dtype=DTYPE).reshape(dims[i + 1], dims[i])
            for i, w in enumerate(doc["weights"])
        ]
        biases = [np.array(b, dtype=DTYPE) for b in doc["biases"]]
        return Mlp.from_arrays(weights, biases, seed=int(doc.get("seed", 0)))
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise DataError(f"malformed network record: {exc}") from exc


def save_checkpoint(path, nets: dict, meta: dict | None = None) -> None:
    """Write named networks to a JSON document.

    Python's float repr round-trips float64 exactly, so save -> load -> forward
    is bit-identical.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "meta": meta or {},
        "nets": {name: mlp_to_dict(net) for name, net in nets.items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(nets, meta)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a JSON checkpoint ({exc})", line=exc.lineno) from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: unexpected checkpoint format {doc.get('format')!r}")
    nets = {name: mlp_from_dict(rec) for name, rec in doc["nets"].items()}
    return nets, doc.get("meta", {})
