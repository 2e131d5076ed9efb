"""Dense float64 matrix numerics with reverse-mode automatic differentiation.

Every value is a 2-D, C-contiguous float64 array ("matrix"); column vectors
are (n, 1) matrices and scalars are (1, 1) matrices.  Differentiable
computations are assembled from the registered primitives below.  Each
primitive validates shapes, computes its value eagerly with numpy, and
records its differentiable inputs together with a vector-Jacobian product
closure.  `backward` walks the recorded graph once in reverse topological
order; `finite_diff_grad` is an independent central-difference oracle used
to cross-check gradients.

Unregistered numpy ufuncs applied to a Tensor raise immediately
(`__array_ufunc__ = None`), so an op missing from the registry fails at
graph construction time instead of producing a silently wrong gradient.
"""

import threading

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""


class DomainError(ValueError):
    """Raised when an operand value is outside a primitive's domain."""


_state = threading.local()


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording (thread-local)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


def _as_matrix(value):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ShapeError("matrices must be 2-D, got shape %s" % (arr.shape,))
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """A matrix value, optionally attached to the autodiff graph.

    `_partials` is None for constants, an empty tuple for trainable leaves,
    and a tuple of (parent, vjp) pairs for primitive outputs.  `vjp` maps
    the output cotangent to that parent's cotangent contribution.
    """

    __slots__ = ("value", "grad", "requires_grad", "_partials")
    __array_ufunc__ = None

    def __init__(self, value, requires_grad=False, partials=None):
        if not (isinstance(value, np.ndarray) and value.ndim == 2
                and value.dtype == np.float64):
            value = _as_matrix(value)
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self._partials = partials

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return "Tensor(%r, requires_grad=%r)" % (self.value, self.requires_grad)

    def item(self):
        if self.value.shape != (1, 1):
            raise ShapeError("item() needs a (1, 1) matrix, got %s" % (self.value.shape,))
        return float(self.value[0, 0])

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def as_tensor(x):
    """Lift a matrix-like value to a constant Tensor (no-op on Tensors)."""
    if isinstance(x, Tensor):
        return x
    return Tensor(_as_matrix(x))


def constant(x):
    return as_tensor(x)


def zeros(rows, cols=1):
    return Tensor(np.zeros((rows, cols)))


def ones(rows, cols=1):
    return Tensor(np.ones((rows, cols)))


def eye(n):
    return Tensor(np.eye(n))


def _make(value, partials):
    """Wrap a primitive result, keeping only parents that need gradients."""
    if _grad_enabled():
        live = tuple((p, fn) for p, fn in partials if p.requires_grad)
        if live:
            return Tensor(value, requires_grad=True, partials=live)
    return Tensor(value)


def _check_same_shape(op, a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError("%s needs equal shapes, got %s and %s"
                         % (op, a.value.shape, b.value.shape))


# ---------------------------------------------------------------------------
# primitives

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError("matmul inner dims differ: %s vs %s"
                         % (a.value.shape, b.value.shape))
    out = a.value @ b.value
    return _make(out, ((a, lambda g: g @ b.value.T),
                       (b, lambda g: a.value.T @ g)))


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("add", a, b)
    return _make(a.value + b.value, ((a, lambda g: g), (b, lambda g: g)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("sub", a, b)
    return _make(a.value - b.value, ((a, lambda g: g), (b, lambda g: -g)))


def mul(a, b):
    """Hadamard (elementwise) product; shapes must match exactly."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("mul", a, b)
    return _make(a.value * b.value, ((a, lambda g: g * b.value),
                                     (b, lambda g: g * a.value)))


def scale(a, k):
    a = as_tensor(a)
    k = float(k)
    return _make(a.value * k, ((a, lambda g: g * k),))


def sigmoid(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-a.value))
    return _make(out, ((a, lambda g: g * (out * (1.0 - out))),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, ((a, lambda g: g * (1.0 - out * out)),))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return _make(out, ((a, lambda g: g * out),))


def log(a):
    a = as_tensor(a)
    if np.any(a.value <= 0.0):
        raise DomainError("log needs strictly positive entries")
    out = np.log(a.value)
    return _make(out, ((a, lambda g: g / a.value),))


def clip(a, lo, hi):
    """Clamp entries to [lo, hi]; gradient is zero where the clamp binds."""
    a = as_tensor(a)
    out = np.clip(a.value, lo, hi)
    inside = ((a.value > lo) & (a.value < hi)).astype(np.float64)
    return _make(out, ((a, lambda g: g * inside),))


def transpose(a):
    a = as_tensor(a)
    return _make(np.ascontiguousarray(a.value.T),
                 ((a, lambda g: np.ascontiguousarray(g.T)),))


def reshape(a, rows, cols):
    a = as_tensor(a)
    if a.value.size != rows * cols:
        raise ShapeError("cannot reshape %s to (%d, %d)" % (a.value.shape, rows, cols))
    shape = a.value.shape
    return _make(a.value.reshape(rows, cols).copy(),
                 ((a, lambda g: g.reshape(shape).copy()),))


def concat_rows(parts):
    """Stack matrices vertically; all parts must share a column count."""
    parts = [as_tensor(p) for p in parts]
    cols = parts[0].value.shape[1]
    offsets = [0]
    for p in parts:
        if p.value.shape[1] != cols:
            raise ShapeError("concat_rows column mismatch: %s vs %d columns"
                             % (p.value.shape, cols))
        offsets.append(offsets[-1] + p.value.shape[0])
    out = np.concatenate([p.value for p in parts], axis=0)

    def part_vjp(i):
        return lambda g: g[offsets[i]:offsets[i + 1], :]

    return _make(out, tuple((p, part_vjp(i)) for i, p in enumerate(parts)))


def slice_rows(a, start, stop):
    a = as_tensor(a)
    rows = a.value.shape[0]
    if not (0 <= start <= stop <= rows):
        raise ShapeError("slice_rows [%d:%d] out of range for %s"
                         % (start, stop, a.value.shape))
    out = a.value[start:stop, :].copy()
    shape = a.value.shape

    def vjp(g):
        full = np.zeros(shape)
        full[start:stop, :] = g
        return full

    return _make(out, ((a, vjp),))


def take_cols(a, idx):
    """Gather columns by index; duplicate indices accumulate in the VJP."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("take_cols needs a 1-D index list")
    if idx.size and (idx.min() < 0 or idx.max() >= a.value.shape[1]):
        raise ShapeError("take_cols index out of range for %s" % (a.value.shape,))
    out = np.ascontiguousarray(a.value[:, idx])
    shape = a.value.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, (slice(None), idx), g)
        return full

    return _make(out, ((a, vjp),))


def put_cols(a, idx, width):
    """Scatter a's columns into a zero matrix of the given width.

    Inverse of take_cols for unique indices. Placement is plain fancy
    assignment, so surviving columns keep their exact bits regardless of the
    target width.
    """
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1 or idx.size != a.value.shape[1]:
        raise ShapeError("put_cols needs one index per column, got %d for %s"
                         % (idx.size, a.value.shape))
    if idx.size and (idx.min() < 0 or idx.max() >= width):
        raise ShapeError("put_cols index out of range for width %d" % (width,))
    if idx.size != np.unique(idx).size:
        raise ShapeError("put_cols indices must be unique")
    out = np.zeros((a.value.shape[0], width))
    out[:, idx] = a.value
    return _make(out, ((a, lambda g: np.ascontiguousarray(g[:, idx])),))


def tile_cols(a, n):
    """Broadcast an (r, 1) column across n columns."""
    a = as_tensor(a)
    if a.value.shape[1] != 1:
        raise ShapeError("tile_cols needs an (r, 1) column, got %s" % (a.value.shape,))
    out = np.repeat(a.value, n, axis=1)
    return _make(out, ((a, lambda g: g.sum(axis=1, keepdims=True)),))


def tile_rows(a, n):
    """Broadcast a (1, c) row across n rows."""
    a = as_tensor(a)
    if a.value.shape[0] != 1:
        raise ShapeError("tile_rows needs a (1, c) row, got %s" % (a.value.shape,))
    out = np.repeat(a.value, n, axis=0)
    return _make(out, ((a, lambda g: g.sum(axis=0, keepdims=True)),))


def sum_all(a):
    """Sum every entry into a (1, 1) matrix."""
    a = as_tensor(a)
    out = np.array([[a.value.sum()]])
    shape = a.value.shape
    return _make(out, ((a, lambda g: np.full(shape, g[0, 0])),))


def kron(a, b):
    """Kronecker product: out[i*rb+k, j*cb+l] = a[i, j] * b[k, l]."""
    a, b = as_tensor(a), as_tensor(b)
    ra, ca = a.value.shape
    rb, cb = b.value.shape
    out = np.kron(a.value, b.value)

    def vjp_a(g):
        g4 = g.reshape(ra, rb, ca, cb)
        return np.einsum("ikjl,kl->ij", g4, b.value)

    def vjp_b(g):
        g4 = g.reshape(ra, rb, ca, cb)
        return np.einsum("ikjl,ij->kl", g4, a.value)

    return _make(out, ((a, vjp_a), (b, vjp_b)))


def select(mask, a, b):
    """Entrywise choice: mask entry 1 takes `a`, 0 takes `b`, bit-exactly.

    `mask` is a constant 0/1 matrix of the same shape as the operands.
    Used to carry state through padded steps without perturbing it.
    """
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("select", a, b)
    m = _as_matrix(mask)
    if m.shape != a.value.shape:
        raise ShapeError("select mask shape %s does not match operands %s"
                         % (m.shape, a.value.shape))
    out = np.where(m == 1.0, a.value, b.value)
    return _make(out, ((a, lambda g: g * m), (b, lambda g: g * (1.0 - m))))


# ---------------------------------------------------------------------------
# backward pass

def backward(root):
    """Accumulate d(root)/d(leaf) for every reachable leaf.

    `root` must be a (1, 1) tensor.  Returns a dict mapping leaf Tensor to
    its gradient matrix; also stores it on each leaf's `.grad`.
    """
    if root.value.shape != (1, 1):
        raise ShapeError("backward root must be (1, 1), got %s" % (root.value.shape,))
    if not root.requires_grad:
        return {}

    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._partials:
            for parent, _ in node._partials:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

    grads = {id(root): np.ones((1, 1))}
    leaf_grads = {}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._partials is None or node._partials == ():
            # trainable leaf
            leaf_grads[node] = leaf_grads[node] + g if node in leaf_grads else g
            continue
        for parent, vjp in node._partials:
            pg = vjp(g)
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    for leaf, g in leaf_grads.items():
        leaf.grad = g
    return leaf_grads


# ---------------------------------------------------------------------------
# parameter registry

class ParamSet:
    """Ordered, named collection of trainable leaf tensors.

    Iteration, flattening, and serialization all follow insertion order, so
    a ParamSet built the same way twice is interchangeable.
    """

    def __init__(self):
        self._entries = {}

    def add(self, name, value):
        if name in self._entries:
            raise ValueError("duplicate parameter name %r" % name)
        t = Tensor(_as_matrix(value), requires_grad=True, partials=())
        self._entries[name] = t
        return t

    def names(self):
        return list(self._entries)

    def __getitem__(self, name):
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries.items())

    def flatten(self):
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([t.value.ravel() for t in self._entries.values()])

    def unflatten(self, vec):
        vec = np.asarray(vec, dtype=np.float64).ravel()
        total = sum(t.value.size for t in self._entries.values())
        if vec.size != total:
            raise ShapeError("unflatten got %d values, expected %d" % (vec.size, total))
        pos = 0
        for t in self._entries.values():
            n = t.value.size
            t.value = vec[pos:pos + n].reshape(t.value.shape).copy()
            pos += n
        return self

    def copy_values(self):
        return {name: t.value.copy() for name, t in self._entries.items()}

    def load_values(self, values):
        for name, t in self._entries.items():
            v = _as_matrix(values[name])
            if v.shape != t.value.shape:
                raise ShapeError("parameter %r has shape %s, checkpoint has %s"
                                 % (name, t.value.shape, v.shape))
            t.value = v.copy()


def grad(f, params):
    """Gradient of the scalar-valued `f(params)` with respect to `params`.

    Returns a ParamSet with the same names and shapes holding gradients
    (zero matrices for parameters the output does not depend on).
    """
    out = f(params)
    if not isinstance(out, Tensor):
        raise TypeError("grad target must return a Tensor")
    leaf_grads = backward(out)
    result = ParamSet()
    for name, t in params:
        g = leaf_grads.get(t)
        result.add(name, g if g is not None else np.zeros(t.value.shape))
    return result


def finite_diff_grad(f, params, h=1e-5):
    """Central-difference gradient oracle matching `grad`'s return layout."""
    result = ParamSet()
    with no_grad():
        for name, t in params:
            g = np.zeros(t.value.shape)
            flat = t.value.ravel()
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = f(params).item()
                flat[k] = orig - h
                down = f(params).item()
                flat[k] = orig
                g.ravel()[k] = (up - down) / (2.0 * h)
            result.add(name, g)
    return result


def grad_gap(got, want):
    """Max elementwise |got - want| / max(1, |want|) across two ParamSets."""
    worst = 0.0
    for name, t in want:
        diff = np.abs(got[name].value - t.value)
        denom = np.maximum(1.0, np.abs(t.value))
        gap = float((diff / denom).max()) if diff.size else 0.0
        worst = max(worst, gap)
    return worst


# ---------------------------------------------------------------------------
# random source

def derive_seed(seed, *tags):
    """Deterministic integer seed for a named substream of `seed`."""
    ss = np.random.SeedSequence((int(seed),) + tuple(int(t) for t in tags))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class Rng:
    """Seeded random source (PCG64) with deterministic child streams."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def child(self, tag):
        """Independent stream derived from (seed, tag); order-insensitive."""
        return Rng(derive_seed(self.seed, tag))

    def uniform(self, lo, hi, rows, cols=1):
        return self._gen.uniform(lo, hi, size=(rows, cols))

    def normal(self, rows, cols=1, scale=1.0):
        return self._gen.normal(0.0, scale, size=(rows, cols))

    def integers(self, lo, hi):
        """One integer in [lo, hi] inclusive."""
        return int(self._gen.integers(lo, hi + 1))

    def random(self):
        return float(self._gen.random())

    def permutation(self, n):
        return self._gen.permutation(n)
