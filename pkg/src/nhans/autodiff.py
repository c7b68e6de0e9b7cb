"""Reverse-mode autodiff over numpy arrays, with dense layers and Adam.

The op inventory is exactly what the conditioned mask estimator needs:
dense, relu, sigmoid, elementwise add/sub/mul, frame concatenation,
mean pooling over frames, row broadcasting, and a mean-squared-error
head. Values keep whatever float dtype the parameters carry.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

ADAM_LR = 1e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class Tensor:
    """A value node in the computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name=None, _parents=(), _backward=None):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate .grad on every reachable requires_grad node.

        Repeated calls accumulate gradients until they are cleared.
        """
        if self.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")

        order = []
        seen = set()

        def visit(node):
            if id(node) in seen or not node.requires_grad:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            order.append(node)

        visit(self)

        grads = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = np.zeros_like(node.value)
            node.grad += g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad or pg is None:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def parameter(value, name) -> Tensor:
    return Tensor(np.asarray(value), requires_grad=True, name=name)


def constant(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value))


class DenseLayer:
    """Affine map with weight (out x in) and bias (out,)."""

    def __init__(self, weight: Tensor, bias: Tensor):
        self.weight = weight
        self.bias = bias

    @classmethod
    def he_uniform(cls, n_in, n_out, rng, name, dtype=np.float32):
        limit = np.sqrt(6.0 / n_in)
        w = rng.uniform(-limit, limit, size=(n_out, n_in)).astype(dtype)
        b = np.zeros(n_out, dtype=dtype)
        return cls(parameter(w, name + ".weight"), parameter(b, name + ".bias"))

    @classmethod
    def glorot_uniform(cls, n_in, n_out, rng, name, dtype=np.float32):
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in)).astype(dtype)
        b = np.zeros(n_out, dtype=dtype)
        return cls(parameter(w, name + ".weight"), parameter(b, name + ".bias"))

    def parameters(self):
        return [self.weight, self.bias]


def dense_forward(layer: DenseLayer, x: Tensor) -> Tensor:
    x = constant(x)
    if x.value.ndim != 2:
        raise ShapeError(f"dense input must be 2-D (frames x features), got {x.shape}")
    if x.value.shape[1] != layer.weight.value.shape[1]:
        raise ShapeError(
            f"dense input width {x.value.shape[1]} != weight fan-in "
            f"{layer.weight.value.shape[1]}"
        )
    w, b = layer.weight, layer.bias
    out = x.value @ w.value.T + b.value

    def backward(g):
        return (g @ w.value, g.T @ x.value, g.sum(axis=0))

    return Tensor(out, _parents=(x, w, b), _backward=backward)


def relu(x: Tensor) -> Tensor:
    x = constant(x)
    mask = x.value > 0
    return Tensor(
        np.where(mask, x.value, 0),
        _parents=(x,),
        _backward=lambda g: (np.where(mask, g, 0),),
    )


def sigmoid(x: Tensor) -> Tensor:
    x = constant(x)
    # numerically stable on both tails
    v = x.value
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    # keep outputs strictly inside (0,1) even where the dtype saturates
    one = np.asarray(1.0, dtype=out.dtype)
    np.clip(out, np.finfo(out.dtype).tiny, np.nextafter(one, 0), out=out)

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor(out, _parents=(x,), _backward=backward)


def _check_same_shape(a, b, op):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: shape {a.shape} != {b.shape}")


def add(x, y) -> Tensor:
    x, y = constant(x), constant(y)
    _check_same_shape(x, y, "add")
    return Tensor(x.value + y.value, _parents=(x, y), _backward=lambda g: (g, g))


def sub(x, y) -> Tensor:
    x, y = constant(x), constant(y)
    _check_same_shape(x, y, "sub")
    return Tensor(x.value - y.value, _parents=(x, y), _backward=lambda g: (g, -g))


def mul(x, y) -> Tensor:
    x, y = constant(x), constant(y)
    _check_same_shape(x, y, "mul")
    return Tensor(
        x.value * y.value,
        _parents=(x, y),
        _backward=lambda g: (g * y.value, g * x.value),
    )


def mean_pool_frames(x: Tensor) -> Tensor:
    """Average a (frames x features) matrix into a single feature vector.

    Accumulates in float64 so pooling identical rows reproduces the row
    exactly regardless of how many times it repeats.
    """
    x = constant(x)
    if x.value.ndim != 2:
        raise ShapeError(f"mean_pool_frames needs a 2-D input, got {x.shape}")
    t = x.value.shape[0]
    pooled = x.value.mean(axis=0, dtype=np.float64).astype(x.value.dtype)
    return Tensor(
        pooled,
        _parents=(x,),
        _backward=lambda g: (np.broadcast_to(g / t, x.value.shape).copy(),),
    )


def broadcast_rows(v: Tensor, rows: int) -> Tensor:
    """Tile a feature vector into (rows x features)."""
    v = constant(v)
    if v.value.ndim != 1:
        raise ShapeError(f"broadcast_rows needs a 1-D input, got {v.shape}")
    return Tensor(
        np.broadcast_to(v.value, (rows, v.value.shape[0])).copy(),
        _parents=(v,),
        _backward=lambda g: (g.sum(axis=0),),
    )


def concat(tensors, axis=-1) -> Tensor:
    tensors = [constant(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, _parents=tuple(tensors), _backward=backward)


def mean_squared_error(x: Tensor, target) -> Tensor:
    x = constant(x)
    t = np.asarray(target)
    if x.value.shape != t.shape:
        raise ShapeError(f"mse: prediction {x.shape} != target {t.shape}")
    diff = x.value - t
    n = diff.size

    def backward(g):
        return (g * diff * (2.0 / n),)

    return Tensor(np.asarray((diff * diff).mean(), dtype=x.value.dtype),
                  _parents=(x,), _backward=backward)


class ResidualBlock:
    """Skip-connected dense pair with an optional conditioning projection.

    forward computes x + dense2(relu(dense1(relu(proj(concat(x, cond)))))).
    With all three layers zeroed the block is the identity map.
    """

    def __init__(self, hidden, cond_width, rng, name, dtype=np.float32):
        self.cond_width = int(cond_width)
        self.proj = DenseLayer.he_uniform(hidden + self.cond_width, hidden, rng,
                                          name + ".proj", dtype)
        self.dense1 = DenseLayer.he_uniform(hidden, hidden, rng, name + ".dense1", dtype)
        self.dense2 = DenseLayer.he_uniform(hidden, hidden, rng, name + ".dense2", dtype)

    def forward(self, x: Tensor, cond_rows: Tensor | None = None) -> Tensor:
        if self.cond_width:
            if cond_rows is None:
                raise ShapeError("conditioned block called without conditioning rows")
            h = concat([x, cond_rows], axis=1)
        else:
            h = x
        h = relu(dense_forward(self.proj, h))
        h = relu(dense_forward(self.dense1, h))
        h = dense_forward(self.dense2, h)
        return add(x, h)

    def parameters(self):
        return self.proj.parameters() + self.dense1.parameters() + self.dense2.parameters()


class AdamState:
    """Per-parameter Adam moments with bias correction."""

    def __init__(self, params, lr=ADAM_LR, beta1=ADAM_BETA1, beta2=ADAM_BETA2,
                 eps=ADAM_EPS):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.value) for p in params}
        self.v = {p.name: np.zeros_like(p.value) for p in params}


def adam_step(state: AdamState, params) -> None:
    """One Adam update over params; gradients are cleared afterwards."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p in params:
        if p.name not in state.m:
            raise KeyError(f"parameter {p.name!r} missing from optimizer state")
        g = p.grad
        if g is None:
            g = np.zeros_like(p.value)
        m = state.m[p.name]
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.value = p.value - (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(
            p.value.dtype
        )
        p.grad = None


def gradient_check(loss_fn, params, h=1e-4, rel_floor=1e-8):
    """Compare analytic gradients against central finite differences.

    loss_fn must rebuild the graph and return a scalar Tensor each call.
    Returns {param name: max relative error}; frozen parameters are skipped.
    """
    checked = [p for p in params if p.requires_grad]
    for p in checked:
        p.zero_grad()
    loss_fn().backward()
    analytic = {p.name: (np.zeros_like(p.value) if p.grad is None else p.grad.copy())
                for p in checked}

    report = {}
    for p in checked:
        flat = p.value.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(loss_fn().value)
            flat[i] = orig - h
            lo = float(loss_fn().value)
            flat[i] = orig
            num[i] = (hi - lo) / (2.0 * h)
        ana = analytic[p.name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), rel_floor)
        report[p.name] = float(np.max(np.abs(ana - num) / denom))
        p.zero_grad()
    return report
