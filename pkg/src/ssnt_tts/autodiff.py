"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive is a small numpy kernel plus a closure that maps the output
gradient to input gradients.  Operations performed while a :class:`Tape` is
active (and recording) are appended to it in execution order, so reversing
the tape is a valid topological traversal.

    >>> w = Tensor([1.0, 2.0], requires_grad=True, name="w")
    >>> with Tape() as tape:
    ...     loss = (w * w).sum()
    ...     grads = backward(loss)
    >>> grads["w"].tolist()
    [2.0, 4.0]
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit

__all__ = [
    "AutodiffError",
    "ShapeError",
    "Tensor",
    "Tape",
    "ParameterStore",
    "apply_primitive",
    "backward",
    "grad_check",
    "current_tape",
    "PRIMITIVES",
]


class AutodiffError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


_TAPE_STACK: List["Tape"] = []


def current_tape() -> Optional["Tape"]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of primitive applications plus the RNG used by dropout.

    ``record=False`` gives an evaluation context: ops run, dropout still
    draws from ``rng``, nothing is stored.
    """

    def __init__(self, seed=None, record: bool = True):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.record = record
        self.records: list = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def add(self, kind: str, inputs, out: "Tensor", grad_fn) -> None:
        self.records.append((kind, inputs, out, grad_fn))


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # operator sugar; each maps onto one primitive
    def __add__(self, other):
        return apply_primitive("add", [self, other])

    def __radd__(self, other):
        return apply_primitive("add", [other, self])

    def __sub__(self, other):
        return apply_primitive("sub", [self, other])

    def __rsub__(self, other):
        return apply_primitive("sub", [other, self])

    def __mul__(self, other):
        return apply_primitive("mul", [self, other])

    def __rmul__(self, other):
        return apply_primitive("mul", [other, self])

    def __matmul__(self, other):
        return apply_primitive("matmul", [self, other])

    def __neg__(self):
        return apply_primitive("neg", [self])

    def __getitem__(self, index):
        return apply_primitive("slice", [self], {"index": index})

    def sum(self, axis=None):
        return apply_primitive("sum", [self], {"axis": axis})

    def tanh(self):
        return apply_primitive("tanh", [self])

    def sigmoid(self):
        return apply_primitive("sigmoid", [self])

    def relu(self):
        return apply_primitive("relu", [self])

    def exp(self):
        return apply_primitive("exp", [self])

    def log(self):
        return apply_primitive("log", [self])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_primitive("reshape", [self], {"shape": shape})

    @property
    def T(self):
        return apply_primitive("transpose", [self])


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot combine shapes {a.shape} and {b.shape}") from None


# Each kernel returns (output array, grad_fn).  grad_fn(g) -> tuple of input grads.

def _k_add(a, b, **_):
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return a + b, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))


def _k_broadcast_add(a, b, **_):
    _broadcast_shape("broadcast_add", a, b)
    sa, sb = a.shape, b.shape
    return a + b, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))


def _k_sub(a, b, **_):
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return a - b, lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))


def _k_mul(a, b, **_):
    _broadcast_shape("mul", a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _k_neg(a, **_):
    return -a, lambda g: (-g,)


def _k_matmul(a, b, **_):
    if b.ndim not in (1, 2) or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a @ b
    k = a.shape[-1]

    def grad_fn(g):
        if b.ndim == 2:
            ga = g @ b.T
            gb = a.reshape(-1, k).T @ g.reshape(-1, b.shape[1])
        else:
            ga = np.multiply.outer(g, b)
            gb = a.reshape(-1, k).T @ np.reshape(g, -1)
        return ga, gb

    return out, grad_fn


def _k_tanh(a, **_):
    out = np.tanh(a)
    return out, lambda g: (g * (1.0 - out * out),)


def _k_sigmoid(a, **_):
    out = expit(a)
    return out, lambda g: (g * out * (1.0 - out),)


def _k_log_sigmoid(a, **_):
    out = log_expit(a)
    return out, lambda g: (g * expit(-a),)


def _k_relu(a, **_):
    mask = a > 0
    return a * mask, lambda g: (g * mask,)


def _k_exp(a, **_):
    out = np.exp(a)
    return out, lambda g: (g * out,)


def _k_log(a, **_):
    with np.errstate(divide="ignore"):
        out = np.log(a)
    return out, lambda g: (g / a,)


def _k_concat(*arrays, axis=0, **_):
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError:
        shapes = [x.shape for x in arrays]
        raise ShapeError(f"concat(axis={axis}): incompatible shapes {shapes}") from None
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return out, grad_fn


def _k_stack(*arrays, axis=0, **_):
    try:
        out = np.stack(arrays, axis=axis)
    except ValueError:
        shapes = [x.shape for x in arrays]
        raise ShapeError(f"stack(axis={axis}): incompatible shapes {shapes}") from None
    n = len(arrays)

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return out, grad_fn


def _k_slice(a, index=None, axis=None, start=None, stop=None, **_):
    if index is None:
        if axis is None:
            raise ShapeError("slice: need either index or axis/start/stop")
        if not -a.ndim <= axis < a.ndim:
            raise ShapeError(f"slice: axis {axis} out of range for shape {a.shape}")
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(start, stop)
        index = tuple(sl)
    try:
        out = a[index]
    except IndexError as exc:
        raise ShapeError(f"slice: bad index {index!r} for shape {a.shape}: {exc}") from None
    out = np.array(out, dtype=np.float64)
    shape = a.shape

    def grad_fn(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return out, grad_fn


def _k_sum(a, axis=None, **_):
    out = np.sum(a, axis=axis)
    shape = a.shape

    def grad_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return np.asarray(out, dtype=np.float64), grad_fn


def _k_logsumexp(a, axis=-1, **_):
    if a.shape[axis] == 0:
        raise ShapeError(f"logsumexp: empty axis {axis} in shape {a.shape}")
    m = np.max(a, axis=axis, keepdims=True)
    finite_m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        lse = np.log(np.sum(np.exp(a - finite_m), axis=axis, keepdims=True)) + finite_m
    out = np.squeeze(lse, axis=axis)

    def grad_fn(g):
        # all -inf slices have lse = -inf; their weights are defined as zero
        safe = np.where(np.isfinite(lse), lse, 0.0)
        w = np.where(np.isfinite(lse), np.exp(a - safe), 0.0)
        return (w * np.expand_dims(g, axis),)

    return out, grad_fn


def _k_embedding_gather(table, ids=None, **_):
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_gather: table must be 2-D, got {table.shape}")
    out = table[ids]

    def grad_fn(g):
        full = np.zeros_like(table)
        np.add.at(full, ids, g)
        return (full,)

    return out, grad_fn


def _k_dropout(a, rate=0.0, rng=None, **_):
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return a.copy(), lambda g: (g,)
    if rng is None:
        raise AutodiffError("dropout: no active tape to draw a mask from")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return a * mask, lambda g: (g * mask,)


def _k_reshape(a, shape=None, **_):
    try:
        out = a.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    orig = a.shape
    return out, lambda g: (g.reshape(orig),)


def _k_transpose(a, **_):
    return a.T.copy(), lambda g: (g.T,)


PRIMITIVES: Dict[str, Callable] = {
    "add": _k_add,
    "broadcast_add": _k_broadcast_add,
    "sub": _k_sub,
    "mul": _k_mul,
    "neg": _k_neg,
    "matmul": _k_matmul,
    "tanh": _k_tanh,
    "sigmoid": _k_sigmoid,
    "log_sigmoid": _k_log_sigmoid,
    "relu": _k_relu,
    "exp": _k_exp,
    "log": _k_log,
    "concat": _k_concat,
    "stack": _k_stack,
    "slice": _k_slice,
    "sum": _k_sum,
    "logsumexp": _k_logsumexp,
    "embedding_gather": _k_embedding_gather,
    "dropout": _k_dropout,
    "reshape": _k_reshape,
    "transpose": _k_transpose,
}


def apply_primitive(kind: str, inputs: Sequence, attrs: Optional[dict] = None) -> Tensor:
    """Run primitive ``kind`` on ``inputs`` and record it on the active tape."""
    try:
        kernel = PRIMITIVES[kind]
    except KeyError:
        raise AutodiffError(f"unknown primitive {kind!r}") from None
    attrs = dict(attrs or {})
    tensors = [_as_tensor(x) for x in inputs]
    tape = current_tape()
    if kind == "dropout":
        attrs.setdefault("rng", tape.rng if tape is not None else None)
    out_data, grad_fn = kernel(*[t.data for t in tensors], **attrs)
    needs_grad = any(t.requires_grad for t in tensors)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(out_data, dtype=np.float64)
    out.grad = None
    out.name = None
    out.requires_grad = needs_grad and tape is not None and tape.record
    if out.requires_grad:
        tape.add(kind, tensors, out, grad_fn)
    return out


def backward(loss: Tensor, params: Optional["ParameterStore"] = None,
             tape: Optional[Tape] = None) -> Dict[str, np.ndarray]:
    """Reverse the tape from a scalar ``loss``.

    Named leaves get their ``.grad`` set.  Returns ``name -> gradient``; when
    ``params`` is given every parameter appears, unreachable ones with zeros.
    """
    tape = tape or current_tape()
    if loss.data.size != 1:
        raise AutodiffError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise AutodiffError(f"backward: loss is not finite ({float(loss.data)})")
    if tape is None or not tape.records:
        raise AutodiffError("backward: tape is empty")

    grads = {id(loss): np.ones_like(loss.data)}
    produced = {id(rec[2]) for rec in tape.records}
    leaves: Dict[int, Tensor] = {}
    for kind, inputs, out, grad_fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        in_grads = grad_fn(g)
        for t, gi in zip(inputs, in_grads):
            if not t.requires_grad:
                continue
            if np.isnan(gi).any():
                raise AutodiffError(f"backward: NaN gradient produced by {kind!r}")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = t

    result: Dict[str, np.ndarray] = {}
    if params is not None:
        for name, p in params.items():
            p.grad = np.zeros_like(p.data)
            result[name] = p.grad
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        t.grad = np.array(g, dtype=np.float64).reshape(t.shape)
        if t.name is not None:
            result[t.name] = t.grad
    return result


class ParameterStore:
    """Named trainable tensors; iteration is sorted by name."""

    def __init__(self, arrays: Optional[Dict[str, np.ndarray]] = None):
        self._params: Dict[str, Tensor] = {}
        for name, arr in (arrays or {}).items():
            self.add(name, arr)

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def keys(self):
        return sorted(self._params)

    def items(self):
        return [(k, self._params[k]) for k in sorted(self._params)]

    def to_dict(self) -> Dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.items()}

    def copy(self) -> "ParameterStore":
        return ParameterStore(self.to_dict())

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())


def _forward_value(f: Callable[[], Tensor], seed) -> float:
    with Tape(seed, record=False):
        return float(f().data)


def grad_check(f: Callable[[], Tensor], params: ParameterStore, h: float = 1e-5,
               tol: Optional[float] = None, seed=0) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` builds the scalar loss from ``params`` and must be deterministic for
    a fixed tape seed.  Parameter values are restored afterwards.  If ``tol``
    is given, exceeding it raises :class:`AutodiffError` naming the worst entry.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    v1, v2 = _forward_value(f, seed), _forward_value(f, seed)
    if v1 != v2 and not (math.isnan(v1) and math.isnan(v2)):
        raise AutodiffError(f"grad_check: f is not deterministic ({v1!r} vs {v2!r})")

    with Tape(seed) as tape:
        loss = f()
        analytic = backward(loss, params, tape)

    worst, where = 0.0, None
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = _forward_value(f, seed)
            flat[k] = orig - h
            fm = _forward_value(f, seed)
            flat[k] = orig
            fd = (fp - fm) / (2.0 * h)
            a = a_flat[k]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            if not math.isfinite(err):
                err = math.inf
            if err > worst:
                worst, where = err, (name, k, a, fd)
    if tol is not None and worst > tol:
        name, k, a, fd = where
        raise AutodiffError(
            f"grad_check: relative error {worst:.3e} > {tol:g} at {name}[{k}] "
            f"(analytic {a:.6e}, numeric {fd:.6e})")
    return worst
