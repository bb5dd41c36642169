"""Dense float64 tensors with a reverse-mode differentiation tape.

Every primitive records a closure mapping the output adjoint to input
adjoints on the single active :class:`Tape`. :func:`backward` replays the
records in exact reverse order and adds the resulting gradients into the
``.grad`` of leaf tensors, so repeated backward calls accumulate.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

DTYPE = np.float64


class ShapeError(ValueError):
    pass


@dataclass
class _Record:
    out: "Tensor"
    inputs: tuple["Tensor", ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    def __init__(self):
        self.records: list[_Record] = []
        self._release: list[Callable[[], None]] = []
        self.enabled = True

    def record(self, out, inputs, vjp):
        out.tape_id = len(self.records)
        self.records.append(_Record(out, inputs, vjp))

    def on_release(self, fn: Callable[[], None]):
        """Run ``fn`` when the recorded graph is consumed or discarded."""
        self._release.append(fn)

    def clear(self):
        for rec in self.records:
            rec.out.tape_id = None
        self.records.clear()
        callbacks, self._release = self._release, []
        for fn in callbacks:
            fn()

    def __len__(self):
        return len(self.records)


_TAPE = Tape()


def active_tape() -> Tape:
    return _TAPE


def is_recording() -> bool:
    return _TAPE.enabled


@contextlib.contextmanager
def no_grad():
    prev = _TAPE.enabled
    _TAPE.enabled = False
    try:
        yield
    finally:
        _TAPE.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "tape_id")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tape_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs: Sequence[Tensor], vjp) -> Tensor:
    track = _TAPE.enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        _TAPE.record(out, tuple(inputs), vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    av, bv = a.data, b.data
    return _make(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    av, bv = a.data, b.data
    out = av / bv
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


_relu_patterns: list[bytes] | None = None


@contextlib.contextmanager
def record_relu_patterns():
    """Collect the sign pattern of every relu input evaluated in the block.

    Two evaluations share a pattern exactly when no relu crossed its kink
    between them, i.e. the function is smooth along the segment joining
    them (for the piecewise-linear part).
    """
    global _relu_patterns
    prev, _relu_patterns = _relu_patterns, []
    try:
        yield _relu_patterns
    finally:
        _relu_patterns = prev


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    if _relu_patterns is not None:
        _relu_patterns.append(np.packbits(pos).tobytes())
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    v = a.data
    return _make(np.log(v), (a,), lambda g: (g / v,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


# ---------------------------------------------------------------------------
# reductions and shape


def sum_(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis), (a,), vjp)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError(f"mean over empty axis of shape {a.shape}")
    return scale(sum_(a, axis), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(old),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (g.T,))


def index(a, idx) -> Tensor:
    """Basic or integer-array indexing along any axis (gather)."""
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), vjp)


def take_rows(a, rows: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; faster than :func:`index` for repeats."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    n = a.shape[0]

    def vjp(g):
        scatter = sp.csr_matrix(
            (np.ones(len(rows)), (rows, np.arange(len(rows)))), shape=(n, len(rows))
        )
        return (np.asarray(scatter @ g),)

    return _make(a.data[rows], (a,), vjp)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in ts]}")
    out = np.stack([t.data for t in ts], axis=axis)
    return _make(out, ts, lambda g: tuple(np.moveaxis(g, axis, 0)))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.data, b.data
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def spmm(m: sp.spmatrix, x) -> Tensor:
    """Product of a constant sparse matrix with a dense tensor."""
    x = as_tensor(x)
    if m.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: incompatible shapes {m.shape} and {x.shape}")
    mt = m.T.tocsr()
    return _make(np.asarray(m @ x.data), (x,), lambda g: (np.asarray(mt @ g),))


def dot(a, b) -> Tensor:
    """Inner product along the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"dot: incompatible shapes {a.shape} and {b.shape}")
    return sum_(mul(a, b), axis=-1)


def norm(a, axis=-1) -> Tensor:
    return sqrt(sum_(mul(a, a), axis=axis))


def normalize_rows(a) -> Tensor:
    """Scale each vector along the last axis to unit length."""
    a = as_tensor(a)
    n = np.sqrt((a.data * a.data).sum(axis=-1))
    if np.any(n == 0):
        raise ValueError("degenerate cosine input: zero-norm vector")
    return div(a, reshape(norm(a), a.shape[:-1] + (1,)))


def cosine_similarity(a, b) -> Tensor:
    """Cosine of the angle between ``a`` and ``b`` along the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine: incompatible shapes {a.shape} and {b.shape}")
    return dot(normalize_rows(a), normalize_rows(b))


# ---------------------------------------------------------------------------
# softmax family and losses


def softmax(a) -> Tensor:
    """Softmax along the last axis, max-subtracted."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), vjp)


def segment_softmax(a, starts: np.ndarray) -> Tensor:
    """Softmax over contiguous column segments of a 2-D tensor.

    ``starts`` holds the first column of every segment (sorted, starting
    at 0); each row is normalized independently within each segment.
    """
    a = as_tensor(a)
    starts = np.asarray(starts, dtype=np.int64)
    lengths = np.diff(np.append(starts, a.shape[1]))
    seg_max = np.maximum.reduceat(a.data, starts, axis=1)
    e = np.exp(a.data - np.repeat(seg_max, lengths, axis=1))
    seg_sum = np.add.reduceat(e, starts, axis=1)
    out = e / np.repeat(seg_sum, lengths, axis=1)

    def vjp(g):
        inner = np.add.reduceat(g * out, starts, axis=1)
        return (out * (g - np.repeat(inner, lengths, axis=1)),)

    return _make(out, (a,), vjp)


def logsumexp(a) -> Tensor:
    """Log-sum-exp over the last axis, max-subtracted."""
    a = as_tensor(a)
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=-1, keepdims=True)
    out = (np.log(s) + m)[..., 0]
    w = e / s
    return _make(out, (a,), lambda g: (np.expand_dims(g, -1) * w,))


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise binary cross-entropy on logits (targets are constants).

    Uses ``max(x, 0) - x*y + log1p(exp(-|x|))`` so large logits never
    overflow.
    """
    x = as_tensor(logits)
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=DTYPE)
    if x.shape != y.shape:
        raise ShapeError(f"bce_with_logits: incompatible shapes {x.shape} and {y.shape}")
    xv = x.data
    out = np.maximum(xv, 0) - xv * y + np.log1p(np.exp(-np.abs(xv)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * xv))
    return _make(out, (x,), lambda g: (g * (sig - y),))


def mse(pred, target) -> Tensor:
    d = sub(pred, target)
    return mean(mul(d, d))


# ---------------------------------------------------------------------------
# differentiation


def backward(loss: Tensor) -> None:
    """Propagate d(loss) into ``.grad`` of every tracked leaf, then clear the tape."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = _TAPE
    if not loss.requires_grad:
        tape.clear()
        return
    if loss.tape_id is None:
        # loss is itself a leaf
        loss.grad = (loss.grad if loss.grad is not None else 0.0) + np.ones(loss.shape)
        tape.clear()
        return
    adj: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for rec in reversed(tape.records):
        g = adj.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.tape_id is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                prev = adj.get(key)
                adj[key] = gi if prev is None else prev + gi
    tape.clear()


@dataclass
class GradCheckReport:
    max_rel_error: float
    kink_crossings: int
    components: int


def grad_check_report(
    f: Callable[[], Tensor] | Callable[[Tensor], Tensor],
    x: Tensor | Mapping[str, Tensor],
    eps: float = 1e-3,
) -> GradCheckReport:
    """Like :func:`grad_check`, also counting stencils that cross a relu kink."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(x, Tensor):
        params = {"x": x}
        call = lambda: f(x)  # noqa: E731
    else:
        params = dict(x)
        call = f
    saved = {k: (p.grad, p.requires_grad) for k, p in params.items()}
    for p in params.values():
        p.grad = None
        p.requires_grad = True
    _TAPE.clear()
    try:
        with record_relu_patterns() as base:
            loss = call()
        if loss.data.size != 1:
            raise ValueError("grad_check needs a scalar function")
        base = list(base)
        backward(loss)
        analytic = {k: (p.grad if p.grad is not None else np.zeros(p.shape)) for k, p in params.items()}
        worst, crossings, count = 0.0, 0, 0
        with no_grad():
            for k, p in params.items():
                flat = p.data.reshape(-1)
                a_flat = analytic[k].reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + eps
                    with record_relu_patterns() as up_pat:
                        up = call().item()
                    flat[i] = orig - eps
                    with record_relu_patterns() as down_pat:
                        down = call().item()
                    flat[i] = orig
                    if up_pat != base or down_pat != base:
                        crossings += 1
                    numeric = (up - down) / (2 * eps)
                    worst = max(worst, abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i])))
                    count += 1
    finally:
        for k, p in params.items():
            p.grad, p.requires_grad = saved[k]
    return GradCheckReport(worst, crossings, count)


def grad_check(
    f: Callable[[], Tensor] | Callable[[Tensor], Tensor],
    x: Tensor | Mapping[str, Tensor],
    eps: float = 1e-3,
) -> float:
    """Max over components of ``|analytic - central difference| / max(1, |analytic|)``.

    ``x`` is either a single tensor (``f`` takes it as argument) or a
    mapping of named tensors that ``f`` closes over (``f`` takes none).
    """
    return grad_check_report(f, x, eps).max_rel_error


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
) -> AdamState:
    """Bias-corrected Adam update, in place on ``params``; parameters
    without a gradient are left untouched."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"adam: gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


class Adam:
    """Adam over a named parameter mapping, reading ``p.grad``."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, **kw):
        self.params = dict(params)
        self.state = AdamState(lr=lr, **kw)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        adam_step(self.params, {k: p.grad for k, p in self.params.items()}, self.state)
