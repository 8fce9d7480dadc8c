"""Reverse-mode automatic differentiation on dense numpy buffers.

Deliberately minimal: exactly the operations the veracity models need.
Tensors wrap numpy arrays and record backward closures as they are
combined; calling ``backward`` on a scalar loss walks the recorded graph
once in reverse topological order and accumulates gradients on every
tensor that requires them.

Also provides the RMSProp update rule, a finite-difference gradient
checker, and a checksummed binary checkpoint format for named parameter
sets.
"""

from __future__ import annotations

import hashlib
import struct
from contextlib import contextmanager

import numpy as np


class AutogradError(Exception):
    """Base error for graph construction and backward problems."""


class NonFiniteError(AutogradError):
    """Raised in checked mode when an op produces NaN or Inf."""


class CheckpointError(Exception):
    """Raised when a checkpoint file is malformed or corrupted."""


_CHECKED = False


def set_checked(flag: bool) -> None:
    """Globally enable per-op finiteness validation (slow, for tests)."""
    global _CHECKED
    _CHECKED = bool(flag)


@contextmanager
def checked_mode():
    global _CHECKED
    prev = _CHECKED
    _CHECKED = True
    try:
        yield
    finally:
        _CHECKED = prev


def _validate_finite(data: np.ndarray, op: str) -> None:
    if _CHECKED and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


class Tensor:
    """Dense numeric buffer with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # operator sugar; all shape/broadcast rules live in the module functions
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def backward(self) -> None:
        """Populate ``grad`` for every reachable tensor requiring it.

        Only valid on scalars. Visits each recorded op exactly once, in
        reverse topological order; gradients accumulate (call
        ``zero_grad`` between steps).
        """
        if self.data.size != 1:
            raise AutogradError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not _tracks(parent):
                        continue
                    if id(parent) in grads:
                        grads[id(parent)] += pg
                    else:
                        grads[id(parent)] = pg
            if node.requires_grad and node._backward is None:
                node.grad = g if node.grad is None else node.grad + g


def _tracks(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


class Graph:
    """Parameter registry for one model instance.

    Forward passes built from the ops below record their own structure;
    the graph's job is to own named parameters, zero their gradients
    between steps, and drive backward from a loss.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}

    def parameter(self, name: str, values: np.ndarray) -> Tensor:
        if name in self.params:
            raise AutogradError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(values, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def backward(self, loss: Tensor) -> None:
        loss.backward()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise AutogradError(
                f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, t in self.params.items():
            src = np.asarray(arrays[name], dtype=t.data.dtype)
            if src.shape != t.data.shape:
                raise AutogradError(
                    f"shape mismatch for {name!r}: {src.shape} vs {t.data.shape}"
                )
            t.data = src.copy()


# ---------------------------------------------------------------------------
# op helpers


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, backward, op):
    _validate_finite(data, op)
    if any(_tracks(p) for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape of the operand it belongs to."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# core ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(out, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise AutogradError(
            f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise AutogradError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), backward, "matmul")


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise AutogradError(f"transpose expects a 2-D tensor, got {a.data.shape}")
    out = a.data.T.copy()

    def backward(g):
        return (g.T,)

    return _make(out, (a,), backward, "transpose")


def concat(tensors, axis=-1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, ts, backward, "concat")


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _make(out, (a,), backward, "narrow")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0)

    def backward(g):
        return (g * (a.data > 0),)

    return _make(out, (a,), backward, "relu")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = out.astype(x.dtype, copy=False)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), backward, "sigmoid")


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), backward, "tanh")


def maximum(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = np.maximum(a.data, b.data)
    take_a = a.data >= b.data  # ties route to the first operand

    def backward(g):
        return (
            _unbroadcast(g * take_a, a.data.shape),
            _unbroadcast(g * ~take_a, b.data.shape),
        )

    return _make(out, (a, b), backward, "maximum")


def reduce_max(a, axis: int) -> Tensor:
    """Max over one axis; gradient routes to the first argmax on ties."""
    a = _as_tensor(a)
    out = a.data.max(axis=axis)
    hit = np.expand_dims(a.data.argmax(axis=axis), axis)

    def backward(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, hit, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _make(out, (a,), backward, "max")


def reduce_sum(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.full_like(a.data, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    return _make(out, (a,), backward, "sum")


def mean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    out = a.data.mean(axis=axis)
    n = a.data.size if axis is None else a.data.shape[axis]

    def backward(g):
        if axis is None:
            return (np.full_like(a.data, g / n),)
        return (np.broadcast_to(np.expand_dims(g / n, axis), a.data.shape).copy(),)

    return _make(out, (a,), backward, "mean")


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), backward, "softmax")


def masked_softmax(logits, mask) -> Tensor:
    """Softmax over the last axis restricted to ``mask`` == 1 entries.

    Masked entries get probability exactly 0 (not merely small); the rest
    renormalize. A row with no valid entries is an error.
    """
    a = _as_tensor(logits)
    m = np.asarray(mask, dtype=a.data.dtype)
    m = np.broadcast_to(m, a.data.shape)
    if np.any(m.sum(axis=-1) == 0):
        raise AutogradError("masked_softmax: a row has no valid labels")
    neg = np.where(m > 0, a.data, -np.inf)
    shifted = a.data - neg.max(axis=-1, keepdims=True)
    e = np.exp(shifted) * m
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), backward, "masked_softmax")


def dropout(a, p: float, rng: np.random.Generator, train: bool = True) -> Tensor:
    """Inverted dropout at train time; identity at eval time."""
    a = _as_tensor(a)
    if not train or p <= 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise AutogradError(f"dropout rate must be in [0, 1), got {p}")
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    out = a.data * keep

    def backward(g):
        return (g * keep,)

    return _make(out, (a,), backward, "dropout")


def embedding_lookup(table, ids) -> Tensor:
    """Gather rows of ``table`` (V, D) by integer ``ids`` (any shape)."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise AutogradError("embedding_lookup ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise AutogradError("embedding_lookup ids out of range")
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(out, (table,), backward, "embedding_lookup")


def cross_entropy(p, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under rows of ``p``."""
    p = _as_tensor(p)
    targets = np.asarray(targets)
    if p.data.ndim != 2 or targets.ndim != 1 or targets.shape[0] != p.data.shape[0]:
        raise AutogradError(
            f"cross_entropy expects p (B, L) and targets (B,), got {p.data.shape} / {targets.shape}"
        )
    rows = np.arange(p.data.shape[0])
    tiny = np.finfo(p.data.dtype).tiny
    picked = np.maximum(p.data[rows, targets], tiny)
    out = np.asarray(-np.mean(np.log(picked)), dtype=p.data.dtype)

    def backward(g):
        gp = np.zeros_like(p.data)
        gp[rows, targets] = -g / (picked * p.data.shape[0])
        return (gp,)

    return _make(out, (p,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# optimizer


def rmsprop_step(value, grad, accum, lr=0.001, decay=0.9, epsilon=1e-8):
    """One in-place RMSProp update: s <- decay*s + (1-decay)*g^2; v -= lr*g/sqrt(s+eps)."""
    accum *= decay
    accum += (1.0 - decay) * grad * grad
    update = lr * grad / np.sqrt(accum + epsilon)
    if _CHECKED and not np.all(np.isfinite(update)):
        raise NonFiniteError("non-finite RMSProp update")
    value -= update
    return value, accum


class RMSProp:
    """RMSProp over a parameter registry, one accumulator per parameter."""

    def __init__(self, params: dict[str, Tensor], lr=0.001, decay=0.9, epsilon=1e-8):
        self.params = params
        self.lr = lr
        self.decay = decay
        self.epsilon = epsilon
        self.accum = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self) -> None:
        for name, t in self.params.items():
            if t.grad is None:
                continue
            rmsprop_step(t.data, t.grad.astype(t.data.dtype, copy=False),
                         self.accum[name], self.lr, self.decay, self.epsilon)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None


# ---------------------------------------------------------------------------
# gradient checking


def finite_difference_check(loss_fn, params, eps=1e-4, samples_per_param=8, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must be a deterministic closure over ``params`` returning a
    scalar Tensor. For each parameter a handful of components are probed;
    use 64-bit parameters for meaningful results.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if isinstance(params, dict):
        params = list(params.values())

    for t in params:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {id(t): (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for t in params}

    worst = 0.0
    for t in params:
        flat = t.data.reshape(-1)
        n = flat.shape[0]
        k = min(samples_per_param, n)
        picks = rng.choice(n, size=k, replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn().item()
            flat[i] = orig - eps
            lo = loss_fn().item()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * eps)
            an = analytic[id(t)].reshape(-1)[i]
            denom = max(abs(an), abs(fd), 1e-6)
            worst = max(worst, abs(an - fd) / denom)
    return worst


# ---------------------------------------------------------------------------
# checkpoint format: named tensors, shape headers, raw little-endian
# buffers, trailing sha256 of everything before it.

_CKPT_MAGIC = b"NTCKPT01"
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR_KIND = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [_CKPT_MAGIC, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        code = _CODE_FOR_KIND.get(np.dtype(arr.dtype.name))
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(_DTYPE_CODES[code], copy=False).tobytes())
    payload = b"".join(chunks)
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(digest)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_CKPT_MAGIC) + 4 + 32:
        raise CheckpointError("checkpoint file truncated")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch (file corrupted)")
    if payload[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    off = len(_CKPT_MAGIC)
    (count,) = struct.unpack_from("<I", payload, off)
    off += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", payload, off)
        off += 2
        name = payload[off : off + name_len].decode("utf-8")
        off += name_len
        code, ndim = struct.unpack_from("<BB", payload, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", payload, off)
        off += 4 * ndim
        dtype = _DTYPE_CODES.get(code)
        if dtype is None:
            raise CheckpointError(f"unknown dtype code {code} for tensor {name!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        buf = payload[off : off + nbytes]
        off += nbytes
        out[name] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    if off != len(payload):
        raise CheckpointError("trailing bytes after final tensor")
    return out
