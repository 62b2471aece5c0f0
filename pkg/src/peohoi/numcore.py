"""Differentiable numeric primitives with a reverse-mode tape.

Every primitive takes and returns :class:`Tensor` objects backed by numpy
arrays.  While a :class:`Tape` is active, primitives whose inputs require
gradients are recorded in execution order; :meth:`Tape.backward` replays the
record in reverse and accumulates ``dLoss/dParam`` into each
:class:`Parameter`.

Training runs in float32.  ``with precision("f64"):`` switches newly created
tensors to float64, which is what the finite-difference checker uses.
"""

from __future__ import annotations

import contextlib
import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, NonFiniteError, UsageError

_DTYPES = {"f32": np.float32, "f64": np.float64}
_state = {"dtype": np.float32, "check_finite": True}
_tape_stack: list["Tape"] = []


def get_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def precision(name):
    """Temporarily change the dtype used for new tensors ("f32" or "f64")."""
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    old = _state["dtype"]
    _state["dtype"] = _DTYPES[name]
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def finite_checks(enabled):
    old = _state["check_finite"]
    _state["check_finite"] = bool(enabled)
    try:
        yield
    finally:
        _state["check_finite"] = old


class Tensor:
    """An n-dimensional float array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "op")

    def __init__(self, data, dtype=None, requires_grad=False, op=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        target = dtype or get_dtype()
        if arr.dtype != target:
            arr = arr.astype(target)
        self.data = arr
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


class Parameter(Tensor):
    """A named learnable tensor; ``grad`` always has the value's shape."""

    __slots__ = ("name", "grad")

    def __init__(self, name, value, dtype=None):
        super().__init__(value, dtype=dtype or np.asarray(value).dtype, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

@dataclass
class _Node:
    op: str
    out: Tensor
    inputs: tuple
    vjp: object


class Tape:
    """Ordered record of executed primitives.

    Usage::

        with Tape() as tape:
            loss = model(batch)
        tape.backward(loss)
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._outputs: set[int] = set()

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.remove(self)
        return False

    def record(self, op, out, inputs, vjp):
        self.nodes.append(_Node(op, out, inputs, vjp))
        self._outputs.add(id(out))

    def backward(self, loss, params=None):
        """Accumulate d(loss)/d(param) into every parameter touched by the forward pass.

        Parameters listed in ``params`` are zeroed first, so parameters the loss
        does not depend on end up holding exact zeros.
        """
        if not self.nodes:
            raise UsageError("backward() called before any forward pass was recorded on this tape")
        if id(loss) not in self._outputs:
            raise UsageError("loss tensor was not produced by a forward pass recorded on this tape")
        if loss.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if params is not None:
            for p in params:
                p.zero_grad()
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            needs = tuple(t.requires_grad for t in node.inputs)
            in_grads = node.vjp(g, needs)
            for t, gi, need in zip(node.inputs, in_grads, needs):
                if not need or gi is None:
                    continue
                if isinstance(t, Parameter):
                    t.grad = t.grad + gi
                else:
                    key = id(t)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi


def _active_tape():
    return _tape_stack[-1] if _tape_stack else None


def _finish(op, out_data, inputs, vjp):
    if _state["check_finite"] and not np.all(np.isfinite(out_data)):
        raise NonFiniteError(op)
    tape = _active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, dtype=out_data.dtype, requires_grad=needs_grad, op=op)
    if needs_grad:
        tape.record(op, out, inputs, vjp)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(g, b.shape) if needs[1] else None)

    return _finish("add", out, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(-g, b.shape) if needs[1] else None)

    return _finish("sub", out, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g, needs):
        return (_unbroadcast(g * b.data, a.shape) if needs[0] else None,
                _unbroadcast(g * a.data, b.shape) if needs[1] else None)

    return _finish("mul", out, (a, b), vjp)


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return _finish("scale", x.data * x.data.dtype.type(c), (x,), lambda g, n: (g * c,))


def relu(x):
    x = as_tensor(x)
    pos = x.data > 0
    return _finish("relu", np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g, n: (g * pos,))


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _finish("sigmoid", s, (x,), lambda g, n: (g * s * (1 - s),))


def clamp(x, lo, hi):
    """Clip to [lo, hi]; gradient is zero where the clip is active."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    out = np.clip(x.data, lo, hi)
    return _finish("clamp", out, (x,), lambda g, n: (g * inside,))


def log(x):
    x = as_tensor(x)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(x.data)
    return _finish("log", out, (x,), lambda g, n: (g / x.data,))


def power(x, p):
    """Elementwise x**p for x >= 0 and a constant exponent p >= 0."""
    x = as_tensor(x)
    p = float(p)
    out = np.power(x.data, p)

    def vjp(g, needs):
        if p == 0.0:
            return (np.zeros_like(g),)
        if p >= 1.0:
            return (g * p * np.power(x.data, p - 1.0),)
        # exponents in (0, 1) have an unbounded derivative at 0
        safe = np.maximum(x.data, np.finfo(x.dtype).tiny)
        return (g * p * np.power(safe, p - 1.0),)

    return _finish("power", out, (x,), vjp)


# ---------------------------------------------------------------------------
# reductions / shape
# ---------------------------------------------------------------------------

def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def vjp(g, needs):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _finish("sum", np.asarray(out, dtype=x.dtype), (x,), vjp)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    x = as_tensor(x)
    return _finish("reshape", x.data.reshape(shape), (x,), lambda g, n: (g.reshape(x.shape),))


def swapaxes(x, a, b):
    x = as_tensor(x)
    return _finish("swapaxes", np.swapaxes(x.data, a, b), (x,), lambda g, n: (np.swapaxes(g, a, b),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    lead = [t.shape[:ax] + t.shape[ax + 1:] for t in tensors]
    if any(s != lead[0] for s in lead):
        raise DimensionError(f"concat: non-concatenated dims differ: {[t.shape for t in tensors]}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def vjp(g, needs):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) if needs[i] else None
                     for i in range(len(tensors)))

    return _finish("concat", out, tuple(tensors), vjp)


def index(x, key):
    """Basic numpy indexing (slices, ints, ellipsis)."""
    x = as_tensor(x)
    out = x.data[key]

    def vjp(g, needs):
        full = np.zeros_like(x.data)
        full[key] = g
        return (full,)

    return _finish("index", np.array(out), (x,), vjp)


def gather_rows(x, idx):
    """Gather rows of a 2-D tensor; ``idx == -1`` yields a zero row.

    Output shape is ``idx.shape + (x.shape[1],)``.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"gather_rows expects a 2-D source, got {x.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    valid = idx >= 0
    safe = np.where(valid, idx, 0)
    out = x.data[safe] * valid[..., None].astype(x.dtype)

    def vjp(g, needs):
        full = np.zeros_like(x.data)
        gm = (g * valid[..., None]).reshape(-1, x.shape[1])
        np.add.at(full, safe.reshape(-1), gm)
        return (full,)

    return _finish("gather_rows", out, (x,), vjp)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g, needs):
        ga = gb = None
        if needs[0]:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if needs[1]:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _finish("matmul", out, (a, b), vjp)


def affine(x, W, b=None):
    """``y = x W + b`` over the last axis of ``x``."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"affine: input {x.shape} incompatible with weight {W.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[1],):
            raise DimensionError(f"affine: bias {b.shape} does not match weight {W.shape}")
    x2 = x.data.reshape(-1, W.shape[0])
    out = x2 @ W.data
    if b is not None:
        out = out + b.data
    out = out.reshape(x.shape[:-1] + (W.shape[1],))
    inputs = (x, W) if b is None else (x, W, b)

    def vjp(g, needs):
        g2 = g.reshape(-1, W.shape[1])
        gx = (g2 @ W.data.T).reshape(x.shape) if needs[0] else None
        gW = x2.T @ g2 if needs[1] else None
        if b is None:
            return gx, gW
        return gx, gW, (g2.sum(axis=0) if needs[2] else None)

    return _finish("affine", out, inputs, vjp)


# ---------------------------------------------------------------------------
# normalisation / attention
# ---------------------------------------------------------------------------

def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g, needs):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _finish("softmax", s, (x,), vjp)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalise the last axis to zero mean / unit (population) variance, then scale and shift.

    Rows with zero variance normalise to exactly zero.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs feature dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g, needs):
        gx = ggain = gbias = None
        if needs[0]:
            dxhat = g * gain.data
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        if needs[1]:
            ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        if needs[2]:
            gbias = g.reshape(-1, d).sum(axis=0)
        return gx, ggain, gbias

    return _finish("layer_norm", out.astype(x.dtype), (x, gain, bias), vjp)


def attention(Q, K, V, mask=None):
    """Scaled dot-product attention ``softmax(Q K^T / sqrt(D)) V``.

    ``mask`` is a boolean array broadcastable to ``[..., n, m]`` where True
    marks a key the query may attend to.  Masked entries get exactly zero
    weight; rows with no valid key produce a zero output row.

    Returns ``(out, weights)``; ``weights`` is a plain array.
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    D = Q.shape[-1]
    if K.shape[-1] != D:
        raise DimensionError(f"attention: query dim {D} != key dim {K.shape[-1]}")
    if K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"attention: {K.shape[-2]} keys but {V.shape[-2]} values")
    c = 1.0 / math.sqrt(D)
    scores = np.matmul(Q.data, np.swapaxes(K.data, -1, -2)) * Q.dtype.type(c)
    if mask is None:
        z = scores - scores.max(axis=-1, keepdims=True)
        e = np.exp(z)
        w = e / e.sum(axis=-1, keepdims=True)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
        m = np.where(mask, scores, -np.inf).max(axis=-1, keepdims=True)
        m = np.where(np.isfinite(m), m, 0)
        e = np.where(mask, np.exp(np.where(mask, scores - m, 0)), 0)
        denom = e.sum(axis=-1, keepdims=True)
        w = np.where(denom > 0, e / np.where(denom > 0, denom, 1), 0).astype(Q.dtype)
    out = np.matmul(w, V.data)

    def vjp(g, needs):
        gq = gk = gv = None
        if needs[2]:
            gv = _unbroadcast(np.matmul(np.swapaxes(w, -1, -2), g), V.shape)
        if needs[0] or needs[1]:
            gw = np.matmul(g, np.swapaxes(V.data, -1, -2))
            gs = w * (gw - np.sum(gw * w, axis=-1, keepdims=True)) * c
            if needs[0]:
                gq = _unbroadcast(np.matmul(gs, K.data), Q.shape)
            if needs[1]:
                gk = _unbroadcast(np.matmul(np.swapaxes(gs, -1, -2), Q.data), K.shape)
        return gq, gk, gv

    return _finish("attention", out, (Q, K, V), vjp), w


@dataclass
class MHAParams:
    """Projections of one multi-head attention block (query, key, value, output)."""

    wq: Parameter
    bq: Parameter
    wk: Parameter
    bk: Parameter
    wv: Parameter
    bv: Parameter
    wo: Parameter
    bo: Parameter

    @property
    def dim(self):
        return self.wq.shape[0]


def _split_heads(x, heads):
    *lead, n, d = x.shape
    x = reshape(x, tuple(lead) + (n, heads, d // heads))
    return swapaxes(x, -2, -3)


def _merge_heads(x):
    x = swapaxes(x, -2, -3)
    *lead, n, h, dh = x.shape
    return reshape(x, tuple(lead) + (n, h * dh))


def multi_head_attention(xq, xkv, p: MHAParams, heads, mask=None):
    """Multi-head attention over learned projections; the caller adds any residual.

    ``xq`` is ``[..., n, d]`` and ``xkv`` is ``[..., m, d_kv]``; ``mask`` is
    broadcastable to ``[..., n, m]``.
    """
    if p.wq.shape[1] % heads != 0:
        raise ConfigError(f"model dim {p.wq.shape[1]} is not divisible by {heads} heads")
    q = _split_heads(affine(xq, p.wq, p.bq), heads)
    k = _split_heads(affine(xkv, p.wk, p.bk), heads)
    v = _split_heads(affine(xkv, p.wv, p.bv), heads)
    if mask is not None:
        mask = np.expand_dims(np.asarray(mask, dtype=bool), -3)
    ctx, _ = attention(q, k, v, mask)
    return affine(_merge_heads(ctx), p.wo, p.bo)


# ---------------------------------------------------------------------------
# parameter sets
# ---------------------------------------------------------------------------

def derive_seed(root, label):
    """Sub-seed derived from a root seed and a label by hashing."""
    h = hashlib.sha256(f"{int(root)}:{label}".encode()).digest()
    return int.from_bytes(h[:8], "little")


class ParamSet:
    """Ordered, uniquely named collection of parameters."""

    def __init__(self, seed=0, dtype=np.float32):
        self.seed = seed
        self.dtype = dtype
        self._params: "OrderedDict[str, Parameter]" = OrderedDict()

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name):
        return self._params[name]

    def names(self):
        return list(self._params)

    def add(self, name, value):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, np.asarray(value, dtype=self.dtype))
        self._params[name] = p
        return p

    def uniform(self, name, shape, fan_in=None):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a per-name seeded generator."""
        fan_in = fan_in or shape[0]
        bound = 1.0 / math.sqrt(fan_in)
        rng = np.random.default_rng(derive_seed(self.seed, name))
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def ones(self, name, shape):
        return self.add(name, np.ones(shape))

    def linear(self, prefix, d_in, d_out):
        return (self.uniform(f"{prefix}.weight", (d_in, d_out), fan_in=d_in),
                self.uniform(f"{prefix}.bias", (d_out,), fan_in=d_in))

    def mha(self, prefix, d, d_kv=None):
        d_kv = d_kv or d
        wq, bq = self.linear(f"{prefix}.q", d, d)
        wk, bk = self.linear(f"{prefix}.k", d_kv, d)
        wv, bv = self.linear(f"{prefix}.v", d_kv, d)
        wo, bo = self.linear(f"{prefix}.o", d, d)
        return MHAParams(wq, bq, wk, bk, wv, bv, wo, bo)

    def zero_grad(self):
        for p in self:
            p.zero_grad()

    def manifest(self):
        return [(p.name, list(p.shape)) for p in self]

    def astype(self, dtype):
        """Cast values (and zero gradients) in place."""
        self.dtype = dtype
        for p in self:
            p.data = p.data.astype(dtype)
            p.zero_grad()
        return self

    def state(self):
        return OrderedDict((p.name, p.data.copy()) for p in self)

    def load_state(self, state):
        for name, value in state.items():
            p = self._params[name]
            value = np.asarray(value)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: stored shape {value.shape} != expected {p.shape}")
            p.data = value.astype(p.dtype)

    def grad_norm(self):
        return math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in self))


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: str = ""
    per_param: dict = field(default_factory=dict)
    ok: bool = True
    message: str = ""

    def passed(self, tol):
        return self.ok and self.max_rel_error < tol


def grad_check(fn, params, eps=1e-6, samples_per_param=6, seed=0, floor=1e-6, zero_tol=None):
    """Compare analytic gradients with central finite differences.

    ``fn`` is a zero-argument callable returning a scalar Tensor computed from
    ``params``.  For up to ``samples_per_param`` coordinates per parameter the
    relative error ``|a - n| / max(|a|, |n|, floor)`` is computed; the maximum
    is returned.  Non-finite values yield ``ok=False`` with the offending
    primitive named in ``message``.

    A coordinate whose analytic and numeric values are both below
    ``zero_tol`` counts as an exact zero.  The default is the rounding noise
    of a central difference, ``100 * machine_eps * max(1, |f|) / eps``;
    attention key biases, for example, have an identically zero gradient.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    try:
        with Tape() as tape:
            loss = fn()
        if not tape.nodes:
            # loss does not depend on any parameter
            analytic = {p.name: np.zeros_like(p.data) for p in params}
        else:
            tape.backward(loss, params)
            analytic = {p.name: p.grad.copy() for p in params}
    except NonFiniteError as exc:
        return GradCheckResult(math.inf, ok=False, message=f"forward/backward: {exc}")

    if zero_tol is None:
        dt = params[0].data.dtype if params else np.float64
        zero_tol = 100.0 * float(np.finfo(dt).eps) * max(1.0, abs(float(loss.data))) / eps
    rng = np.random.default_rng(seed)
    worst, worst_name, per = 0.0, "", {}
    for p in params:
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        coords = rng.choice(n, size=min(samples_per_param, n), replace=False)
        perr = 0.0
        for c in coords:
            orig = flat[c]
            try:
                flat[c] = orig + eps
                fp = float(fn().data)
                flat[c] = orig - eps
                fm = float(fn().data)
            except NonFiniteError as exc:
                flat[c] = orig
                return GradCheckResult(math.inf, p.name, per, ok=False,
                                       message=f"perturbing {p.name}[{c}]: {exc}")
            finally:
                flat[c] = orig
            num = (fp - fm) / (2 * eps)
            ana = float(analytic[p.name].reshape(-1)[c])
            if max(abs(ana), abs(num)) < zero_tol:
                err = 0.0
            else:
                err = abs(ana - num) / max(abs(ana), abs(num), floor)
            perr = max(perr, err)
        per[p.name] = perr
        if perr > worst:
            worst, worst_name = perr, p.name
    return GradCheckResult(worst, worst_name, per)
