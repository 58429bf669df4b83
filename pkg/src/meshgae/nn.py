"""Parameters, MLP building blocks, Adam, and the binary checkpoint format."""
import struct
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import CheckpointError, ConfigError, DimensionError

LN_EPS = 1e-5
ELU_ALPHA = 1.0
MAGIC = b"GAE1"


class ParamStore:
    """Ordered name -> parameter map with per-entry Adam state."""

    def __init__(self):
        self._params = {}
        self._m = {}
        self._v = {}
        self.step = 0

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        t = ag.Tensor(value, requires_grad=True, name=name)
        t.grad = np.zeros_like(value)
        self._params[name] = t
        self._m[name] = np.zeros_like(value)
        self._v[name] = np.zeros_like(value)
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def size(self):
        """Total number of scalar parameters."""
        return int(np.sum([t.data.size for t in self._params.values()]))

    def scope(self, prefix):
        return ParamScope(self, prefix)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def grad_norm(self):
        return float(np.sqrt(np.sum([(t.grad * t.grad).sum() for t in self._params.values()])))

    def state(self):
        """Copy of all parameter values (for best-checkpoint bookkeeping)."""
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, state):
        for k, v in state.items():
            self._params[k].data = v.copy()

    def vector(self):
        return np.concatenate([t.data.ravel() for t in self._params.values()])


class ParamScope:
    """Prefixed view into a :class:`ParamStore`."""

    def __init__(self, store, prefix):
        self.store = store
        self.prefix = prefix

    def __getitem__(self, name):
        return self.store[self.prefix + name]

    def add(self, name, value):
        return self.store.add(self.prefix + name, value)

    def scope(self, prefix):
        return ParamScope(self.store, self.prefix + prefix)


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    layer_norm: bool = True

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ConfigError("an MLP needs at least an input and an output width")

    @property
    def d_in(self):
        return self.layer_widths[0]

    @property
    def d_out(self):
        return self.layer_widths[-1]

    @property
    def residual(self):
        return self.d_in == self.d_out

    def n_params(self):
        w = self.layer_widths
        n = sum(a * b + b for a, b in zip(w[:-1], w[1:]))
        return n + (2 * w[-1] if self.layer_norm else 0)


def init_mlp(scope, spec, rng):
    """Glorot-uniform weights, biases uniform in +-1/sqrt(fan_in), unit gain / zero shift.

    Biases are not zero: unpooling leaves rows of exact zeros, and with zero
    biases those rows would stay constant through every MLP and hit layer
    normalisation at zero variance, where it amplifies gradients by 1/sqrt(eps).
    """
    w = spec.layer_widths
    for i, (a, b) in enumerate(zip(w[:-1], w[1:])):
        lim = np.sqrt(6.0 / (a + b))
        scope.add(f"lin{i}.w", rng.uniform(-lim, lim, size=(a, b)))
        blim = 1.0 / np.sqrt(a)
        scope.add(f"lin{i}.b", rng.uniform(-blim, blim, size=b))
    if spec.layer_norm:
        scope.add("ln.g", np.ones(w[-1]))
        scope.add("ln.b", np.zeros(w[-1]))


def layer_norm_apply(x, gain, bias, eps=LN_EPS):
    return ag.layer_norm(ag.as_tensor(x), ag.as_tensor(gain), ag.as_tensor(bias), eps)


def mlp_apply(spec, scope, x):
    """Row-batched MLP: affine layers with ELU in between, optional layer
    norm on the output, and a residual add when widths allow."""
    x = ag.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != spec.d_in:
        raise DimensionError(f"MLP expects width {spec.d_in}, got input of shape {x.shape}")
    h = ag.linear(x, scope["lin0.w"], scope["lin0.b"])
    h = mlp_tail(spec, scope, h)
    if spec.residual:
        h = h + x
    return h


def mlp_tail(spec, scope, h):
    """Everything after the first affine layer (whose output is ``h``), minus
    the residual."""
    n_lin = len(spec.layer_widths) - 1
    for i in range(1, n_lin):
        h = ag.elu(h, ELU_ALPHA)
        h = ag.linear(h, scope[f"lin{i}.w"], scope[f"lin{i}.b"])
    if spec.layer_norm:
        h = ag.layer_norm(h, scope["ln.g"], scope["ln.b"], LN_EPS)
    return h


def adam_update(params, lr, betas=(0.9, 0.999), eps=1e-8):
    # lr == 0 is accepted as the identity update
    if lr < 0:
        raise ConfigError(f"learning rate must be non-negative, got {lr}")
    b1, b2 = betas
    params.step += 1
    t = params.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        m = params._m[name]
        v = params._v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_grad_norm(params, max_norm):
    total = params.grad_norm()
    if total > max_norm:
        s = max_norm / (total + 1e-12)
        for _, p in params.items():
            p.grad *= s
    return total


# ---------------------------------------------------------------------------
# checkpoint I/O


def dumps_params(params):
    out = [MAGIC, struct.pack("<I", len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", t.data.ndim))
        out.append(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
        out.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(out)


def loads_params(buf):
    """Parse checkpoint bytes into an ordered ``{name: array}`` dict."""
    if buf[:4] != MAGIC:
        raise CheckpointError("bad magic bytes, not a GAE1 checkpoint")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError("checkpoint truncated")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (ln,) = struct.unpack("<H", take(2))
        name = take(ln).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(dims)
    if pos != len(buf):
        raise CheckpointError("trailing bytes after last parameter")
    return out


def save_params(params, path):
    with open(path, "wb") as f:
        f.write(dumps_params(params))


def load_params(path, into=None):
    """Read a checkpoint. With ``into`` given, copy values into that store after
    checking the name and shape sets agree; otherwise build a fresh store."""
    with open(path, "rb") as f:
        values = loads_params(f.read())
    if into is None:
        store = ParamStore()
        for k, v in values.items():
            store.add(k, v)
        return store
    missing = [k for k in into.names() if k not in values]
    extra = [k for k in values if k not in into]
    if missing or extra:
        raise CheckpointError(f"parameter set mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for k, v in values.items():
        if v.shape != into[k].data.shape:
            raise CheckpointError(f"shape mismatch for {k!r}: checkpoint {v.shape}, model {into[k].data.shape}")
    for k, v in values.items():
        into[k].data = v.copy()
    return into
