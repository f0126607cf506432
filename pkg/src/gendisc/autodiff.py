"""Dense tensors, a dynamic reverse-mode tape, and finite-difference checking.

A :class:`Tape` is rebuilt for every document. Operations are module-level
functions that take :class:`Node` arguments, compute a numpy value and record
a closure that maps the output adjoint to input adjoints. ``Tape.backward``
walks the records in exact reverse order and *adds* the resulting gradients
into :attr:`Parameter.grad`, so calling it twice doubles every gradient.
"""

import json

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class NumericalError(ArithmeticError):
    """Raised on non-finite losses or gradients."""


class Parameter:
    """A trainable array with its gradient buffer and AdaGrad history."""

    def __init__(self, name, value, frozen=False):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.accum = np.zeros_like(self.value)
        self.frozen = frozen

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class SparseRows:
    """Row-sparse adjoint for a gather; densified unless it lands on a Parameter."""

    __slots__ = ("ids", "rows", "shape")

    def __init__(self, ids, rows, shape):
        self.ids = ids
        self.rows = rows
        self.shape = shape

    def dense(self):
        out = np.zeros(self.shape)
        np.add.at(out, self.ids, self.rows)
        return out


class Node:
    __slots__ = ("tape", "value", "index", "param")

    def __init__(self, tape, value, index, param=None):
        self.tape = tape
        self.value = value
        self.index = index
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        kind = f"param {self.param.name}" if self.param is not None else "node"
        return f"Node({kind}, shape={np.shape(self.value)})"


class Tape:
    def __init__(self):
        self._nodes = []
        self._records = []
        self._param_nodes = {}

    def __len__(self):
        return len(self._records)

    def _new(self, value, param=None):
        node = Node(self, value, len(self._nodes), param)
        self._nodes.append(node)
        return node

    def param(self, p):
        """Leaf bound to a Parameter; repeated calls return the same node."""
        node = self._param_nodes.get(id(p))
        if node is None:
            node = self._new(p.value, p)
            self._param_nodes[id(p)] = node
        return node

    def constant(self, value):
        return self._new(np.asarray(value, dtype=np.float64))

    def record(self, value, inputs, backward):
        out = self._new(value)
        self._records.append((out, inputs, backward))
        return out

    def backward(self, loss, seed=1.0):
        if np.ndim(loss.value) != 0:
            raise ShapeError("backward needs a scalar loss")
        if not np.isfinite(loss.value):
            raise NumericalError(f"non-finite loss {loss.value!r}")
        adj = {loss.index: np.float64(seed)}
        for out, inputs, fn in reversed(self._records):
            g = adj.pop(out.index, None)
            if g is None:
                continue
            for node, gi in zip(inputs, fn(g)):
                if gi is None:
                    continue
                if node.param is not None:
                    if node.param.frozen:
                        continue
                    if isinstance(gi, SparseRows):
                        np.add.at(node.param.grad, gi.ids, gi.rows)
                    else:
                        node.param.grad += gi
                    continue
                if isinstance(gi, SparseRows):
                    gi = gi.dense()
                prev = adj.get(node.index)
                adj[node.index] = gi if prev is None else prev + gi


def _tape(*nodes):
    for n in nodes:
        if isinstance(n, Node):
            return n.tape
    raise TypeError("at least one argument must be a Node")


def _check_vec_or_rows(v, n, what):
    if v.shape[-1] != n:
        raise ShapeError(f"{what}: expected trailing dim {n}, got shape {v.shape}")


# ---------------------------------------------------------------- operations


def affine(x, W, b):
    """W x + b. ``x`` may be a vector or a (rows, in) matrix of row vectors."""
    t = _tape(x, W, b)
    out_dim, in_dim = W.value.shape
    _check_vec_or_rows(x.value, in_dim, "affine input")
    if b.value.shape != (out_dim,):
        raise ShapeError(f"affine bias: expected ({out_dim},), got {b.value.shape}")
    xv, Wv = x.value, W.value
    y = xv @ Wv.T + b.value

    def back(g):
        if xv.ndim == 1:
            return g @ Wv, np.outer(g, xv), g
        return g @ Wv, g.T @ xv, g.sum(axis=0)

    return t.record(y, (x, W, b), back)


def matmul(a, B):
    t = _tape(a, B)
    av, Bv = a.value, B.value
    if av.shape[-1] != Bv.shape[0]:
        raise ShapeError(f"matmul: {av.shape} @ {Bv.shape}")

    def back(g):
        if av.ndim == 1:
            return g @ Bv.T, np.outer(av, g)
        return g @ Bv.T, av.T @ g

    return t.record(av @ Bv, (a, B), back)


def add(a, b):
    t = _tape(a, b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add: {a.value.shape} vs {b.value.shape}")
    return t.record(a.value + b.value, (a, b), lambda g: (g, g))


def add_row(M, v):
    """Add vector ``v`` to every row of ``M``."""
    t = _tape(M, v)
    _check_vec_or_rows(M.value, v.value.shape[0], "add_row")
    return t.record(M.value + v.value, (M, v), lambda g: (g, g.sum(axis=0)))


def scale(a, c):
    c = float(c)
    return a.tape.record(a.value * c, (a,), lambda g: (g * c,))


def neg(a):
    return scale(a, -1.0)


def sigmoid(v):
    s = 1.0 / (1.0 + np.exp(-v.value))
    return v.tape.record(s, (v,), lambda g: (g * s * (1.0 - s),))


def tanh(v):
    y = np.tanh(v.value)
    return v.tape.record(y, (v,), lambda g: (g * (1.0 - y * y),))


def elemwise_mul(u, v):
    t = _tape(u, v)
    if u.value.shape != v.value.shape:
        raise ShapeError(f"elemwise_mul: {u.value.shape} vs {v.value.shape}")
    uv, vv = u.value, v.value
    return t.record(uv * vv, (u, v), lambda g: (g * vv, g * uv))


def concat(*parts):
    """Concatenate along the last axis."""
    t = _tape(*parts)
    lead = {p.value.shape[:-1] for p in parts}
    if len(lead) != 1:
        raise ShapeError(f"concat: leading shapes differ {sorted(lead)}")
    sizes = [p.value.shape[-1] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(g[..., bounds[k]:bounds[k + 1]] for k in range(len(parts)))

    return t.record(np.concatenate([p.value for p in parts], axis=-1), tuple(parts), back)


def concat_to_rows(M, v):
    """[m_t; v] for every row m_t of ``M``."""
    t = _tape(M, v)
    rows = M.value.shape[0]
    k = M.value.shape[1]
    out = np.concatenate([M.value, np.broadcast_to(v.value, (rows, v.value.shape[0]))], axis=1)
    return t.record(out, (M, v), lambda g: (g[:, :k], g[:, k:].sum(axis=0)))


def mean(vectors):
    """Elementwise mean of a list of equally shaped vector nodes."""
    if not vectors:
        raise ShapeError("mean of an empty list")
    t = _tape(*vectors)
    shapes = {v.value.shape for v in vectors}
    if len(shapes) != 1:
        raise ShapeError(f"mean: shapes differ {sorted(shapes)}")
    n = len(vectors)
    out = sum(v.value for v in vectors) / n
    return t.record(out, tuple(vectors), lambda g: tuple(g / n for _ in range(n)))


def mean_rows(M):
    """Mean over the first axis of a (T, E) node."""
    T = M.value.shape[0]
    if T == 0:
        raise ShapeError("mean_rows of an empty matrix")
    return M.tape.record(M.value.mean(axis=0), (M,),
                         lambda g: (np.broadcast_to(g / T, M.value.shape).copy(),))


def _log_softmax_array(z):
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def log_softmax(z):
    """z - logsumexp(z) along the last axis."""
    y = _log_softmax_array(z.value)

    def back(g):
        p = np.exp(y)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return z.tape.record(y, (z,), back)


def logsumexp_array(v, axis=None):
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ShapeError("logsumexp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    if np.all(np.isneginf(m)):
        return np.squeeze(m, axis=axis) if axis is not None else float(m.squeeze())
    out = m + np.log(np.exp(v - m).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) if axis is not None else float(out.squeeze())


def logsumexp(v):
    val = np.float64(logsumexp_array(v.value))
    p = np.exp(v.value - val)
    return v.tape.record(val, (v,), lambda g: (g * p,))


def pick(v, index):
    """Select one entry of a vector, or entry ``index[t]`` of each row of a matrix."""
    vv = v.value
    if vv.ndim == 1:
        idx = int(index)

        def back(g):
            out = np.zeros_like(vv)
            out[idx] = g
            return (out,)

        return v.tape.record(np.float64(vv[idx]), (v,), back)
    idx = np.asarray(index)
    rows = np.arange(vv.shape[0])

    def back_rows(g):
        out = np.zeros_like(vv)
        out[rows, idx] = g
        return (out,)

    return v.tape.record(vv[rows, idx], (v,), back_rows)


def total(v):
    vv = v.value
    return v.tape.record(np.float64(vv.sum()), (v,), lambda g: (np.full_like(vv, g),))


def dot(u, v):
    t = _tape(u, v)
    uv, vv = u.value, v.value
    return t.record(np.float64(uv @ vv), (u, v), lambda g: (g * vv, g * uv))


def take_rows(M, ids):
    """Gather rows ``ids`` of ``M`` (embedding lookup)."""
    ids = np.asarray(ids, dtype=np.int64)
    Mv = M.value
    return M.tape.record(Mv[ids], (M,), lambda g: (SparseRows(ids, g, Mv.shape),))


def take_row(M, i):
    i = int(i)
    Mv = M.value
    return M.tape.record(Mv[i].copy(), (M,),
                         lambda g: (SparseRows(np.array([i]), g[None, :], Mv.shape),))


def lstm_sequence(X, Wi, Wf, Wc, Wo, bi, bf, bc, bo):
    """Run the fused peephole-LSTM kernel over the rows of ``X``; returns H (T, E)."""
    t = _tape(X, Wi)
    if X.value.shape[0] == 0:
        raise ShapeError("lstm_sequence over an empty sequence")
    E = bi.value.shape[0]
    D = X.value.shape[1]
    for W, cols in ((Wi, D + 2 * E), (Wf, D + 2 * E), (Wc, D + E), (Wo, D + 2 * E)):
        if W.value.shape != (E, cols):
            raise ShapeError(f"lstm weight: expected {(E, cols)}, got {W.value.shape}")
    ws = [np.ascontiguousarray(n.value) for n in (Wi, Wf, Wc, Wo)]
    bs = [n.value for n in (bi, bf, bc, bo)]
    H, C, Z, Zo, I, F, G, O = kernels.lstm_forward(np.ascontiguousarray(X.value), *ws, *bs)

    def back(g):
        return kernels.lstm_backward(np.ascontiguousarray(g), C, Z, Zo, I, F, G, O, *ws)

    return t.record(H, (X, Wi, Wf, Wc, Wo, bi, bf, bc, bo), back)


# ------------------------------------------------------------ verification


def grad_check(loss_fn, params, eps=1e-5, n_coords=40, seed=0):
    """Max relative error between tape gradients and central differences.

    ``loss_fn(tape)`` must build and return a scalar loss node from the current
    parameter values. Up to ``n_coords`` coordinates per parameter are sampled.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-6, 1e-4]")
    for p in params:
        p.zero_grad()
    tape = Tape()
    loss = loss_fn(tape)
    tape.backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if flat.size > n_coords:
            coords = rng.choice(flat.size, size=n_coords, replace=False)
        analytic = p.grad.reshape(-1)
        for k in coords:
            orig = flat[k]
            flat[k] = orig + eps
            up = float(loss_fn(Tape()).value)
            flat[k] = orig - eps
            down = float(loss_fn(Tape()).value)
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError(f"non-finite loss while probing {p.name}[{k}]")
            num = (up - down) / (2.0 * eps)
            a = analytic[k]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst


# ------------------------------------------------------------- checkpoints


def save_parameters(path, params, meta=None):
    """Write names, shapes, values and AdaGrad history to an ``.npz`` container."""
    arrays = {}
    for p in params:
        arrays[f"value/{p.name}"] = p.value
        arrays[f"accum/{p.name}"] = p.accum
    arrays["__meta__"] = np.array(json.dumps(meta or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_parameters(path, params=None):
    """Read a container written by :func:`save_parameters`.

    With ``params`` the arrays are copied into the given parameters (shapes must
    match); otherwise a ``{name: Parameter}`` dict is returned. ``meta`` is
    returned in both cases.
    """
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        names = [k.split("/", 1)[1] for k in data.files if k.startswith("value/")]
        loaded = {}
        for name in names:
            p = Parameter(name, data[f"value/{name}"])
            p.accum = np.array(data[f"accum/{name}"])
            loaded[name] = p
    if params is None:
        return loaded, meta
    for p in params:
        src = loaded.get(p.name)
        if src is None:
            raise KeyError(f"checkpoint has no parameter {p.name!r}")
        if src.value.shape != p.value.shape:
            raise ShapeError(f"{p.name}: checkpoint shape {src.value.shape} != {p.value.shape}")
        p.value[...] = src.value
        p.accum[...] = src.accum
    return params, meta
