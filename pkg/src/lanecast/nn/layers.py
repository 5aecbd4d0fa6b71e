"""Network layers, parameter bookkeeping, serialization, and Adam.

Initialization follows the usual uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
scheme for linear and conv weights and biases; LSTM gate weights use the same
rule with fan_in = input + hidden, and the forget-gate bias starts at +1.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, add, conv1d, lstm, matmul


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Conv1dLayer:
    """1-D cross-correlation over the time axis: (B, L, Cin) -> (B, Lout, Cout)."""

    def __init__(self, in_ch, units, kernel, stride=1, padding=0, rng=None):
        self.in_ch = in_ch
        self.units = units
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_ch * kernel
        self.w = _uniform(rng, (units, in_ch, kernel), fan_in)
        self.b = _uniform(rng, (units,), fan_in)

    def forward(self, x):
        return conv1d(x, self.w, self.b, self.stride, self.padding)

    def params(self):
        return {"w": self.w, "b": self.b}


class LstmLayer:
    """Single-layer LSTM returning the final hidden state: (B, L, D) -> (B, H).

    Gate weights are fused over (input ⊕ hidden) in i, f, g, o order.
    """

    def __init__(self, in_dim, hidden, rng=None):
        self.in_dim = in_dim
        self.hidden = hidden
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_dim + hidden
        self.w = _uniform(rng, (fan_in, 4 * hidden), fan_in)
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        self.b = Tensor(bias, requires_grad=True)

    def forward(self, x):
        if x.data.ndim != 3 or x.data.shape[2] != self.in_dim:
            raise ValueError(f"lstm expects (B, L, {self.in_dim}), got {x.data.shape}")
        return lstm(x, self.w, self.b)

    def params(self):
        return {"w": self.w, "b": self.b}


class LinearLayer:
    """Affine map: (B, in) @ w.T + b with w of shape (out, in)."""

    def __init__(self, in_dim, out_dim, rng=None):
        self.in_dim = in_dim
        self.out_dim = out_dim
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = _uniform(rng, (out_dim, in_dim), in_dim)
        self.b = _uniform(rng, (out_dim,), in_dim)

    def forward(self, x):
        if x.data.ndim != 2 or x.data.shape[1] != self.in_dim:
            raise ValueError(f"linear expects (B, {self.in_dim}), got {x.data.shape}")
        return add(matmul(x, _transposed(self.w)), self.b)

    def params(self):
        return {"w": self.w, "b": self.b}


def _transposed(w):
    """View a (out, in) weight as (in, out) inside the graph."""
    from .tensor import _accum, _make

    def bwd(g):
        _accum(w, g.T)

    return _make(w.data.T, (w,), bwd)


# -- parameter registry and serialization ---------------------------------

class ParamDict:
    """Ordered name -> Tensor mapping for a whole model."""

    def __init__(self):
        self._items = {}

    def register(self, prefix, layer_params):
        for name, t in layer_params.items():
            key = f"{prefix}.{name}"
            if key in self._items:
                raise ValueError(f"duplicate parameter name {key}")
            self._items[key] = t

    def add(self, name, tensor):
        if name in self._items:
            raise ValueError(f"duplicate parameter name {name}")
        self._items[name] = tensor

    def items(self):
        return self._items.items()

    def names(self):
        return list(self._items)

    def tensors(self):
        return list(self._items.values())

    def __getitem__(self, name):
        return self._items[name]

    def __len__(self):
        return len(self._items)

    def zero_grad(self):
        for t in self._items.values():
            t.zero_grad()

    def n_elements(self):
        return sum(t.data.size for t in self._items.values())

    def state_bytes(self):
        """Manifest (name, shape, byte offset) + little-endian f64 blob."""
        manifest = []
        chunks = []
        offset = 0
        for name, t in self._items.items():
            arr = np.ascontiguousarray(t.data, dtype="<f8")
            manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.nbytes
        return manifest, b"".join(chunks)

    def load_bytes(self, manifest, blob):
        by_name = {m["name"]: m for m in manifest}
        if set(by_name) != set(self._items):
            missing = sorted(set(self._items) - set(by_name))
            extra = sorted(set(by_name) - set(self._items))
            raise ValueError(f"parameter set mismatch: missing={missing}, unexpected={extra}")
        for name, t in self._items.items():
            m = by_name[name]
            shape = tuple(m["shape"])
            if shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}: file {shape} vs model {t.data.shape}")
            n = int(np.prod(shape, dtype=np.int64)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f8", count=n, offset=m["offset"]).reshape(shape)
            t.data = np.ascontiguousarray(arr)
            t.grad = np.zeros_like(t.data)

    def save(self, path):
        manifest, blob = self.state_bytes()
        header = json.dumps({"params": manifest}, separators=(",", ":")).encode()
        with open(path, "wb") as f:
            f.write(header + b"\n")
            f.write(blob)

    def load(self, path):
        with open(path, "rb") as f:
            header = f.readline()
            blob = f.read()
        manifest = json.loads(header)["params"]
        self.load_bytes(manifest, blob)


# -- optimizer -------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam over a ParamDict; grads are zeroed after each step."""

    params: ParamDict
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, t in self.params.items():
            self.m[name] = np.zeros_like(t.data)
            self.v[name] = np.zeros_like(t.data)

    def step(self):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad[...] = 0.0
