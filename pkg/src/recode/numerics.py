"""Dense f64 tensors with reverse-mode gradient accumulation.

Every op records its parents and a closure that pushes ``out.grad`` back to
them. ``backward`` walks the recorded graph in reverse topological order.
Inside ``no_grad()`` nothing is recorded, which is what evaluation uses.
"""

from __future__ import annotations

import contextlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad, shape):
    # sum out the axes numpy broadcast over
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    # graph plumbing

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    @staticmethod
    def _make(data, parents, op, backward):
        parents = tuple(p for p in parents if p.requires_grad)
        if not _GRAD_ENABLED or not parents:
            return Tensor(data)
        out = Tensor(data, requires_grad=True, _parents=parents, _op=op)
        out._backward = backward
        return out

    # elementwise arithmetic

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(out):
            if a.requires_grad:
                a._accum(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(out.grad, b.shape))

        return Tensor._make(a.data + b.data, (a, b), "add", bw)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def bw(out):
            a._accum(-out.grad)

        return Tensor._make(-a.data, (a,), "neg", bw)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(out):
            if a.requires_grad:
                a._accum(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(out.grad * a.data, b.shape))

        return Tensor._make(a.data * b.data, (a, b), "mul", bw)

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

        def bw(out):
            if a.requires_grad:
                a._accum(out.grad @ b.data.T)
            if b.requires_grad:
                b._accum(a.data.T @ out.grad)

        return Tensor._make(a.data @ b.data, (a, b), "matmul", bw)

    # reductions and shape ops

    def sum(self, axis=None):
        a = self

        def bw(out):
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape))

        return Tensor._make(a.data.sum(axis=axis), (a,), "sum", bw)

    def reshape(self, *shape):
        a = self

        def bw(out):
            a._accum(out.grad.reshape(a.shape))

        return Tensor._make(a.data.reshape(*shape), (a,), "reshape", bw)

    # nonlinearities

    def tanh(self):
        a = self
        y = np.tanh(a.data)

        def bw(out):
            a._accum(out.grad * (1.0 - y * y))

        return Tensor._make(y, (a,), "tanh", bw)

    def relu(self):
        a = self
        mask = a.data > 0

        def bw(out):
            a._accum(out.grad * mask)

        return Tensor._make(a.data * mask, (a,), "relu", bw)

    def sigmoid(self):
        a = self
        y = _sigmoid(a.data)

        def bw(out):
            a._accum(out.grad * y * (1.0 - y))

        return Tensor._make(y, (a,), "sigmoid", bw)

    def exp(self):
        a = self
        y = np.exp(a.data)

        def bw(out):
            a._accum(out.grad * y)

        return Tensor._make(y, (a,), "exp", bw)

    def softplus(self):
        """log(1 + e^x), evaluated without overflow for large |x|."""
        a = self
        x = a.data
        y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

        def bw(out):
            a._accum(out.grad * _sigmoid(x))

        return Tensor._make(y, (a,), "softplus", bw)


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    return Tensor(data, requires_grad=True)


def affine(x, W, b):
    """y = x W + b for x of shape (n, d_in) or (d_in,)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.data.ndim != 2 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ValueError(f"affine shape mismatch: x{x.shape} W{W.shape} b{b.shape}")
    x2 = np.atleast_2d(x.data)

    def bw(out):
        g = np.atleast_2d(out.grad)
        if x.requires_grad:
            x._accum((g @ W.data.T).reshape(x.shape))
        if W.requires_grad:
            W._accum(x2.T @ g)
        if b.requires_grad:
            b._accum(g.sum(axis=0))

    y = x.data @ W.data + b.data
    return Tensor._make(y, (x, W, b), "affine", bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(out):
        for t, g in zip(tensors, np.split(out.grad, splits, axis=axis)):
            if t.requires_grad:
                t._accum(g)

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def bw(out):
        for k, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(np.take(out.grad, k, axis=axis))

    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), tensors, "stack", bw)


def take_rows(table, idx):
    """Row select; the gradient is scatter-added into the selected rows only."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"row index out of range [0, {n})")

    def bw(out):
        g = np.zeros_like(table.data)
        np.add.at(g, idx, out.grad)
        table._accum(g)

    return Tensor._make(table.data[idx], (table,), "take_rows", bw)


def scatter_rows(values, idx, n):
    """Place ``values`` at rows ``idx`` of an n-row zero tensor."""
    values = as_tensor(values)
    idx = np.asarray(idx, dtype=np.int64)
    out_data = np.zeros((n,) + values.shape[1:])
    out_data[idx] = values.data

    def bw(out):
        values._accum(out.grad[idx])

    return Tensor._make(out_data, (values,), "scatter_rows", bw)


def _topo_order(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node)
            # interior grads are not needed once pushed to parents
            node.grad = None


# parameters, perceptrons, checkpoints

ACTIVATIONS = ("tanh", "relu", "identity", "sigmoid")


def activate(x, name):
    if name == "identity":
        return x
    if name == "tanh":
        return x.tanh()
    if name == "relu":
        return x.relu()
    if name == "sigmoid":
        return x.sigmoid()
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class MlpSpec:
    widths: list[int]
    activations: list[str]
    init_scale: float = 1.0

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("MlpSpec needs at least one layer (two widths)")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive: {self.widths}")
        if len(self.activations) != len(self.widths) - 1:
            raise ValueError("one activation per layer required")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def n_layers(self):
        return len(self.widths) - 1


class ParamStore:
    """Ordered registry of named trainable tensors."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def add(self, name, data):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = parameter(data)
        self.params[name] = t
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def grads(self):
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.params.items()}

    def state_dict(self):
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"missing tensors in state: {sorted(missing)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()


def glorot_bound(d_in, d_out):
    return float(np.sqrt(6.0 / (d_in + d_out)))


def init_mlp(spec: MlpSpec, rng: np.random.Generator, store: ParamStore, prefix: str):
    layers = []
    for k in range(spec.n_layers):
        d_in, d_out = spec.widths[k], spec.widths[k + 1]
        s = spec.init_scale * glorot_bound(d_in, d_out)
        W = store.add(f"{prefix}.W{k}", rng.uniform(-s, s, size=(d_in, d_out)))
        b = store.add(f"{prefix}.b{k}", np.zeros(d_out))
        layers.append((W, b))
    return layers


def mlp_forward(spec: MlpSpec, params, x):
    if len(params) != spec.n_layers:
        raise ValueError(f"expected {spec.n_layers} layers of params, got {len(params)}")
    h = as_tensor(x)
    for (W, b), act in zip(params, spec.activations):
        h = activate(affine(h, W, b), act)
    return h


CHECKPOINT_HEADER = "RECODE-CHECKPOINT v1"


def save_checkpoint(path, state: dict, meta: dict | None = None):
    """Text format: header line, one ``meta <json>`` line, then per tensor a
    ``tensor <name> <d1,d2,...>`` line followed by one line of repr floats."""
    lines = [CHECKPOINT_HEADER, "meta " + json.dumps(meta or {}, sort_keys=True)]
    for name, arr in state.items():
        arr = np.asarray(arr, dtype=np.float64)
        dims = ",".join(str(d) for d in arr.shape)
        lines.append(f"tensor {name} {dims}")
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ValueError(f"{path}: not a {CHECKPOINT_HEADER} file")
    if not lines[1].startswith("meta "):
        raise ValueError(f"{path}: missing meta line")
    meta = json.loads(lines[1][5:])
    state = {}
    body = lines[2:]
    if len(body) % 2:
        raise ValueError(f"{path}: truncated tensor block")
    for head, values in zip(body[::2], body[1::2]):
        tag, name, dims = (head.split(" ") + [""])[:3]
        if tag != "tensor":
            raise ValueError(f"{path}: expected tensor line, got {head!r}")
        shape = tuple(int(d) for d in dims.split(",") if d)
        flat = np.array([float(v) for v in values.split()], dtype=np.float64)
        state[name] = flat.reshape(shape)
    return state, meta


# finite-difference verification


@dataclass
class GradcheckReport:
    max_rel_error: float
    trials: int
    per_trial: list = field(default_factory=list)


def rel_error(analytic, numeric, floor=1e-6):
    # entries below the floor are at finite-difference noise level
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_grad(fn, arr, epsilon):
    """Central differences of scalar fn() w.r.t. arr, perturbed in place."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + epsilon
        fp = fn()
        arr[i] = orig - epsilon
        fm = fn()
        arr[i] = orig
        g[i] = (fp - fm) / (2 * epsilon)
    return g


def gradcheck(spec: MlpSpec, trials=10, epsilon=1e-5, batch=3, seed=0):
    """Worst relative error between backward() and central differences over
    random inputs/params for an MLP of the given spec."""
    rng = np.random.default_rng(seed)
    worst, per_trial = 0.0, []
    for _ in range(trials):
        store = ParamStore()
        params = init_mlp(spec, rng, store, "mlp")
        for _, t in store:
            t.data = t.data + rng.normal(scale=0.1, size=t.shape)
        x = parameter(_kink_free_input(spec, params, rng, batch))
        readout = rng.normal(size=(batch, spec.widths[-1]))

        def loss_value():
            with no_grad():
                return float((mlp_forward(spec, params, x).data * readout).sum())

        store.zero_grad()
        x.grad = None
        loss = (mlp_forward(spec, params, x) * readout).sum()
        backward(loss)
        err = 0.0
        for t in [x] + [t for _, t in store]:
            num = numeric_grad(loss_value, t.data, epsilon)
            ana = t.grad if t.grad is not None else np.zeros_like(t.data)
            err = max(err, rel_error(ana, num))
        per_trial.append(err)
        worst = max(worst, err)
    return GradcheckReport(worst, trials, per_trial)


def _kink_free_input(spec, params, rng, batch, margin=1e-3, tries=100):
    # relu pre-activations near 0 make central differences meaningless
    for _ in range(tries):
        x = rng.normal(size=(batch, spec.widths[0]))
        h, ok = Tensor(x), True
        with no_grad():
            for (W, b), act in zip(params, spec.activations):
                z = affine(h, W, b)
                if act == "relu" and np.min(np.abs(z.data)) < margin:
                    ok = False
                    break
                h = activate(z, act)
        if ok:
            return x
    return x
