"""Dense float64 tensors with reverse-mode autodiff, a counter-based RNG, and SGD.

Every model in this package trains through the small op vocabulary here:
matmul, broadcast add/mul, relu, log-softmax, embedding gather, reductions,
and dropout-mask multiplies. All values are checked finite on construction;
a NaN or Inf anywhere is a hard error rather than a silent poison.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor",
    "RngStream",
    "SgdConfig",
    "CategoricalDistribution",
    "softmax",
    "softmax_probs",
    "cross_entropy",
    "dropout_mask",
    "embedding",
    "take_per_row",
    "backward",
    "sgd_step",
    "zero_grads",
    "derive_seed",
]


def _as_f64(data) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite values in tensor data")
    return arr


class Tensor:
    """A dense float64 array plus an optional same-shape gradient buffer.

    Tensors produced by ops record their parents and a backward closure so
    `backward` can push gradients to every requires_grad node. Data is
    row-major and treated as immutable once written; grad accumulation is
    the only sanctioned mutation (`sgd_step` rebinds `.data`).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ---- graph ops -------------------------------------------------------

    def __add__(self, other):
        other = _coerce(other)

        def bw(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        return _from_op(self.data + other.data, (self, other), bw)

    __radd__ = __add__

    def __neg__(self):
        return _from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = _coerce(other)

        def bw(g):
            return _unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)

        return _from_op(self.data - other.data, (self, other), bw)

    def __rsub__(self, other):
        return _coerce(other).__sub__(self)

    def __mul__(self, other):
        other = _coerce(other)

        def bw(g):
            return (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            )

        return _from_op(self.data * other.data, (self, other), bw)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor) or not np.isscalar(scalar):
            raise TypeError("tensor division only supports scalar divisors")
        return self * (1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    def matmul(self, other):
        return matmul(self, other)

    def relu(self):
        keep = self.data > 0.0
        return _from_op(np.where(keep, self.data, 0.0), (self,), lambda g: (g * keep,))

    def log_softmax(self):
        """Log-probabilities along the last axis, max-subtracted for stability."""
        x = self.data
        m = x.max(axis=-1, keepdims=True)
        shifted = x - m
        lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        out = shifted - lse
        probs = np.exp(out)

        def bw(g):
            return (g - probs * g.sum(axis=-1, keepdims=True),)

        return _from_op(out, (self,), bw)

    def sum(self):
        def bw(g):
            return (np.broadcast_to(g, self.shape).astype(np.float64),)

        return _from_op(self.data.sum(), (self,), bw)

    def mean(self):
        return self.sum() * (1.0 / self.size)

    def backward(self) -> None:
        backward(self)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _from_op(data, parents, backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _as_f64(data)
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    else:
        out._parents = ()
        out._backward_fn = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient g back down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.reshape(g, shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for the 1-D/2-D cases used by the models here."""
    a = _coerce(a)
    b = _coerce(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ValueError("matmul supports 1-D and 2-D operands only")

    def bw(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        if a.ndim == 2 and b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        if a.ndim == 1 and b.ndim == 2:
            return b.data @ g, np.outer(a.data, g)
        return g * b.data, g * a.data

    return _from_op(a.data @ b.data, (a, b), bw)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of `table` [V, E] at integer `ids` and flatten trailing axes.

    ids [T] -> [T, E]; ids [T, W] -> [T, W*E]. Backward scatter-adds into the
    table gradient, so repeated ids accumulate correctly.
    """
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("embedding ids must be integers")
    V, E = table.data.shape
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise ValueError("token id out of range")
    gathered = table.data[ids]
    out_shape = (ids.shape[0], -1) if ids.ndim == 2 else gathered.shape

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g.reshape(ids.shape + (E,)))
        return (gt,)

    return _from_op(gathered.reshape(out_shape), (table,), bw)


def take_per_row(mat: Tensor, idx) -> Tensor:
    """Select one entry per row of a [T, V] tensor: out[t] = mat[t, idx[t]]."""
    idx = np.asarray(idx)
    T, V = mat.data.shape
    if idx.shape != (T,):
        raise ValueError("index vector must have one entry per row")
    if idx.size and (idx.min() < 0 or idx.max() >= V):
        raise ValueError("token id out of range")
    rows = np.arange(T)

    def bw(g):
        gm = np.zeros_like(mat.data)
        gm[rows, idx] = g
        return (gm,)

    return _from_op(mat.data[rows, idx], (mat,), bw)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every requires_grad tensor reachable from `loss`.

    Gradients accumulate across calls; callers zero buffers between steps.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")
    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
        if node._backward_fn is None:
            continue
        for parent, pg in zip(node._parents, node._backward_fn(g)):
            if not parent.requires_grad:
                continue
            acc = flow.get(id(parent))
            flow[id(parent)] = pg.astype(np.float64) if acc is None else acc + pg

    # backward is only valid when the loss actually reaches its parameters
    # through recorded ops; unreachable params simply keep grad=None.


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---- counter-based RNG ----------------------------------------------------

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class RngStream:
    """Counter-based random stream: (seed, counter) fully determine every draw.

    Draw position c maps to the 64-bit word mix64(seed + (c+1)*gamma), so any
    position can be reached directly; `at(counter)` jumps without generating.
    Uniforms consume one counter step per value, normals two per pair
    (Box-Muller), so consumption is an exact function of the request shape.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        if counter < 0:
            raise ValueError("counter must be non-negative")
        self.counter = int(counter)

    def at(self, counter: int) -> "RngStream":
        """A new stream over the same sequence, positioned at `counter`."""
        return RngStream(self.seed, counter)

    def _words(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix64(np.uint64(self.seed) + idx * _GAMMA)

    def uniform(self, shape=()) -> np.ndarray:
        """IID draws from [0, 1)."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self._words(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return u.reshape(shape) if shape else u[0]

    def normal(self, shape=()) -> np.ndarray:
        """IID standard normals via Box-Muller on uniform pairs."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        m = (n + 1) // 2
        u = (self._words(2 * m) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u = u.reshape(2, m)
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        theta = (2.0 * np.pi) * u[1]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else z[0]

    def integers(self, high: int, shape=()) -> np.ndarray:
        """IID draws from {0, ..., high-1}."""
        if high < 1:
            raise ValueError("high must be >= 1")
        u = self.uniform(shape if shape else (1,))
        out = np.minimum((u * high).astype(np.int64), high - 1)
        return out.reshape(shape) if shape else int(out[0])

    def permutation(self, n: int) -> np.ndarray:
        """A uniformly random permutation of range(n)."""
        return np.argsort(self.uniform((n,)), kind="stable")


def derive_seed(seed: int, *tags) -> int:
    """Stable 63-bit sub-seed from a base seed and a tag path.

    Used to give each consumer (init, dropout, data noise, ...) its own
    independent stream so adding a draw in one place never shifts another.
    """
    text = "|".join([str(int(seed)), *map(str, tags)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


# ---- distributions ---------------------------------------------------------


@dataclass(frozen=True)
class CategoricalDistribution:
    """A probability vector over V classes (entries >= 0, sum 1 within 1e-9)."""

    probs: np.ndarray

    def __post_init__(self):
        p = _as_f64(self.probs)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("probs must be a non-empty vector")
        if p.min() < 0.0:
            raise ValueError("negative probability")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1 within 1e-9")
        object.__setattr__(self, "probs", p)

    @property
    def n_classes(self) -> int:
        return self.probs.size


def softmax_probs(logits) -> np.ndarray:
    """Row-stochastic softmax along the last axis, max-subtracted for stability."""
    x = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ValueError("logits need at least one class")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite logits")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(logits):
    """Softmax as categorical distributions.

    A logit vector yields one CategoricalDistribution; a [T, V] batch yields a
    list of T of them, row order preserved.
    """
    p = softmax_probs(logits)
    if p.ndim == 1:
        return CategoricalDistribution(p)
    if p.ndim == 2:
        return [CategoricalDistribution(row) for row in p]
    raise ValueError("softmax supports vectors and 2-D batches")


def cross_entropy(target, log_probs) -> float:
    """-sum_x target(x) * log_probs(x) for one prediction site."""
    t = target.probs if isinstance(target, CategoricalDistribution) else _as_f64(target)
    lp = np.asarray(log_probs, dtype=np.float64)
    if t.shape != lp.shape or t.ndim != 1:
        raise ValueError("target and log_probs must be equal-length vectors")
    if abs(t.sum() - 1.0) > 1e-9:
        raise ValueError("target must sum to 1")
    return float(-(t * lp).sum())


def dropout_mask(shape, rate: float, rng: RngStream) -> Tensor:
    """Inverted-dropout mask: entries 0 with probability `rate`, else 1/(1-rate).

    Each entry has expectation 1, so eval-mode forwards need no rescaling.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    u = rng.uniform(shape)
    return Tensor(np.where(u < rate, 0.0, 1.0 / (1.0 - rate)))


# ---- SGD -------------------------------------------------------------------


@dataclass(frozen=True)
class SgdConfig:
    """Learning-rate policy for plain SGD: constant, or cosine over total_steps."""

    learning_rate: float
    schedule: str = "constant"
    total_steps: int | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule: {self.schedule!r}")
        if self.schedule == "cosine" and (self.total_steps is None or self.total_steps < 1):
            raise ValueError("cosine schedule requires total_steps >= 1")

    def lr_at(self, step: int) -> float:
        if step < 0:
            raise ValueError("step must be >= 0")
        if self.schedule == "constant":
            return self.learning_rate
        frac = min(step, self.total_steps) / self.total_steps
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * frac))


def sgd_step(params, grads, config: SgdConfig, step: int):
    """params <- params - lr(step) * grads, in place; returns params."""
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    lr = config.lr_at(step)
    for p, g in zip(params, grads):
        ga = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if ga.shape != p.data.shape:
            raise ValueError(f"gradient shape {ga.shape} != param shape {p.data.shape}")
        p.data = p.data - lr * ga
    return params
