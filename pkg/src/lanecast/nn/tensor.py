"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op records a backward closure on its output; calling ``backward()`` on a
scalar walks the tape in reverse topological order and accumulates gradients
into the ``grad`` buffer of every tensor built with ``requires_grad=True``.
A differentiation graph belongs to one thread from forward through backward;
independent graphs are safe to run concurrently.
"""

import os

import numpy as np

# Debug toggle: when true, every tensor creation asserts finite values.
CHECK_FINITE = os.environ.get("LANECAST_CHECK_FINITE", "") not in ("", "0")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if CHECK_FINITE and not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite values in tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        """Accumulate d(self)/dp into every requires_grad ancestor.

        ``self`` must be a scalar (size 1).  The recorded graph is meant to be
        consumed once per forward pass.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            return
        topo = _toposort(self)
        _accum(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _toposort(root):
    order = []
    visited = {id(root)}
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, False))
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        # op outputs get a lazy grad buffer, allocated on first accumulation
        out.requires_grad = True
        out.grad = None
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t, g):
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.array(g, dtype=np.float64)
        else:
            t.grad += g


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ---------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(out_data, (a, b), bwd)


# -- elementwise nonlinearities ------------------------------------------

def relu(x):
    x = _as_tensor(x)
    out_data = np.maximum(x.data, 0.0)

    def bwd(g):
        _accum(x, g * (x.data > 0.0))

    return _make(out_data, (x,), bwd)


def sigmoid(x):
    x = _as_tensor(x)
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        _accum(x, g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), bwd)


def tanh(x):
    x = _as_tensor(x)
    out_data = np.tanh(x.data)

    def bwd(g):
        _accum(x, g * (1.0 - out_data * out_data))

    return _make(out_data, (x,), bwd)


def log(x):
    x = _as_tensor(x)
    out_data = np.log(x.data)

    def bwd(g):
        _accum(x, g / x.data)

    return _make(out_data, (x,), bwd)


def softmax(x, axis=-1):
    """Numerically stabilized softmax along ``axis``."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(x, (g - dot) * out_data)

    return _make(out_data, (x,), bwd)


def maximum(a, b):
    """Elementwise max; at ties the gradient goes to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data >= b.data
    out_data = np.where(take_a, a.data, b.data)

    def bwd(g):
        _accum(a, _unbroadcast(g * take_a, a.data.shape))
        _accum(b, _unbroadcast(g * ~take_a, b.data.shape))

    return _make(out_data, (a, b), bwd)


# -- reductions and reshaping --------------------------------------------

def tsum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.data.shape))
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        _accum(x, np.broadcast_to(g, x.data.shape))

    return _make(out_data, (x,), bwd)


def tmean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= x.data.shape[ax]
    return mul(tsum(x, axis, keepdims), 1.0 / n)


def reshape(x, shape):
    x = _as_tensor(x)
    out_data = x.data.reshape(shape)

    def bwd(g):
        _accum(x, g.reshape(x.data.shape))

    return _make(out_data, (x,), bwd)


def getitem(x, key):
    """Basic indexing (ints and slices); each input element appears at most once."""
    out_data = x.data[key]

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[key] += g
        _accum(x, gx)

    return _make(out_data, (x,), bwd)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(out_data, tuple(tensors), bwd)


def select_index(x, idx):
    """Pick ``x[b, idx[b]]`` along axis 1; works for (B, N) and (B, N, D)."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1 or idx.shape[0] != x.data.shape[0]:
        raise ValueError(f"index shape {idx.shape} does not match batch {x.data.shape}")
    rows = np.arange(x.data.shape[0])
    out_data = x.data[rows, idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, idx), g)
        _accum(x, gx)

    return _make(out_data, (x,), bwd)


# -- fused ops with hand-written gradients --------------------------------

def conv1d(x, w, b, stride=1, padding=0):
    """Cross-correlation over the middle (time) axis.

    x: (B, L, Cin), w: (Cout, Cin, k), b: (Cout,) -> (B, Lout, Cout) with
    Lout = (L + 2*padding - k) / stride + 1.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    B, L, cin = x.data.shape
    cout, cin_w, k = w.data.shape
    if cin != cin_w:
        raise ValueError(f"conv1d channel mismatch: input has {cin}, weight expects {cin_w}")
    if L + 2 * padding < k:
        raise ValueError(f"conv1d length {L} too short for kernel {k} with padding {padding}")
    if (L + 2 * padding - k) % stride != 0:
        raise ValueError(f"conv1d length {L}+2*{padding} not compatible with k={k}, s={stride}")
    lout = (L + 2 * padding - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0))) if padding else x.data
    # windows: (B, lout, Cin, k)
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride]
    cols = win.reshape(B * lout, cin * k)
    w2 = w.data.reshape(cout, cin * k)
    out_data = (cols @ w2.T + b.data).reshape(B, lout, cout)

    def bwd(g):
        g2 = g.reshape(B * lout, cout)
        _accum(b, g2.sum(axis=0))
        _accum(w, (g2.T @ cols).reshape(cout, cin, k))
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(B, lout, cin, k)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j:j + (lout - 1) * stride + 1:stride, :] += dcols[:, :, :, j]
            _accum(x, dxp[:, padding:padding + L, :] if padding else dxp)

    return _make(out_data, (x, w, b), bwd)


def lstm(x, w, b):
    """Fused LSTM over (B, L, D) returning the final hidden state (B, H).

    ``w`` is (D + H, 4H) over the concatenated (input ⊕ hidden) with gates in
    i, f, g, o order; the cell starts from zeros.  Forward and backward are
    hand-rolled BPTT so one op covers the whole sequence.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    B, L, D = x.data.shape
    H = b.data.shape[0] // 4
    if w.data.shape != (D + H, 4 * H):
        raise ValueError(f"lstm weight shape {w.data.shape} mismatches input {D}+hidden {H}")

    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    cats = np.empty((L, B, D + H))
    gates = np.empty((L, B, 4 * H))
    cells = np.empty((L + 1, B, H))
    cells[0] = 0.0
    tanh_c = np.empty((L, B, H))
    h = np.zeros((B, H))
    for t in range(L):
        cats[t, :, :D] = x.data[:, t, :]
        cats[t, :, D:] = h
        z = cats[t] @ w.data + b.data
        z[:, :2 * H] = sig(z[:, :2 * H])
        z[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        z[:, 3 * H:] = sig(z[:, 3 * H:])
        gates[t] = z
        i, f, g, o = z[:, :H], z[:, H:2 * H], z[:, 2 * H:3 * H], z[:, 3 * H:]
        cells[t + 1] = f * cells[t] + i * g
        tanh_c[t] = np.tanh(cells[t + 1])
        h = o * tanh_c[t]

    def bwd(grad_h):
        dw = np.zeros_like(w.data)
        db = np.zeros_like(b.data)
        dx = np.zeros_like(x.data) if x.requires_grad else None
        dh = grad_h
        dc = np.zeros((B, H))
        dz = np.empty((B, 4 * H))
        for t in range(L - 1, -1, -1):
            i, f = gates[t, :, :H], gates[t, :, H:2 * H]
            g, o = gates[t, :, 2 * H:3 * H], gates[t, :, 3 * H:]
            dc = dc + dh * o * (1.0 - tanh_c[t] * tanh_c[t])
            dz[:, :H] = (dc * g) * i * (1.0 - i)
            dz[:, H:2 * H] = (dc * cells[t]) * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = (dc * i) * (1.0 - g * g)
            dz[:, 3 * H:] = (dh * tanh_c[t]) * o * (1.0 - o)
            dw += cats[t].T @ dz
            db += dz.sum(axis=0)
            dcat = dz @ w.data.T
            if dx is not None:
                dx[:, t, :] = dcat[:, :D]
            dh = dcat[:, D:]
            dc = dc * f
        _accum(w, dw)
        _accum(b, db)
        if dx is not None:
            _accum(x, dx)

    return _make(h, (x, w, b), bwd)


def pointset_min_dist(points, ref):
    """Min Euclidean distance from each point to a fixed reference point set.

    points: tensor (..., h, 2); ref: ndarray (..., M, 2) with matching leading
    dims (broadcastable).  Returns (..., h).  The gradient flows through the
    nearest reference point as a fixed selection (smallest index at ties).
    """
    points = _as_tensor(points)
    ref = np.asarray(ref, dtype=np.float64)
    diff = points.data[..., :, None, :] - ref[..., None, :, :]
    d2 = (diff * diff).sum(axis=-1)
    nearest = d2.argmin(axis=-1)
    sel = np.take_along_axis(d2, nearest[..., None], axis=-1)[..., 0]
    out_data = np.sqrt(sel)

    def bwd(g):
        delta = np.take_along_axis(diff, nearest[..., None, None], axis=-2)[..., 0, :]
        denom = np.maximum(out_data, 1e-12)
        _accum(points, (g / denom)[..., None] * delta)

    return _make(out_data, (points,), bwd)


def smooth_l1(pred, target, reduction="mean"):
    """Smooth L1: 0.5*d^2 for |d| < 1, |d| - 0.5 otherwise.

    ``reduction="mean"`` averages over all elements; ``"none"`` keeps the
    elementwise values for custom reductions.
    """
    pred = _as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.data.shape != t.shape:
        raise ValueError(f"smooth_l1 shape mismatch: {pred.data.shape} vs {t.shape}")
    d = pred.data - t
    absd = np.abs(d)
    elem = np.where(absd < 1.0, 0.5 * d * d, absd - 0.5)
    if reduction == "none":
        def bwd_none(g):
            _accum(pred, g * np.clip(d, -1.0, 1.0))

        return _make(elem, (pred,), bwd_none)
    if reduction != "mean":
        raise ValueError(f"unknown reduction {reduction!r}")
    n = elem.size

    def bwd(g):
        _accum(pred, (g / n) * np.clip(d, -1.0, 1.0))

    return _make(np.asarray(elem.mean()), (pred,), bwd)


def cross_entropy(probs, target_index, from_logits=False, eps=1e-12):
    """Mean over the batch of -log p[target]; ``probs`` is (B, N).

    The model's attention head already applies softmax, so probabilities are
    the default input; pass ``from_logits=True`` to softmax first.  ``eps``
    floors the log argument.
    """
    probs = _as_tensor(probs)
    idx = np.asarray(target_index, dtype=np.intp)
    if idx.ndim == 0:
        idx = idx[None]
    if probs.data.ndim != 2:
        raise ValueError(f"cross_entropy expects (B, N) input, got {probs.data.shape}")
    if np.any(idx < 0) or np.any(idx >= probs.data.shape[1]):
        raise IndexError(f"target index out of range for {probs.data.shape[1]} classes")
    if from_logits:
        probs = softmax(probs, axis=-1)
    picked = select_index(probs, idx)
    return -tmean(log(add(picked, eps)))
