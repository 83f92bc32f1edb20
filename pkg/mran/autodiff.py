"""
Autodiff - dense float64 tensors with tape-based reverse-mode differentiation.

Every op records itself on the active Graph (entered with ``with Graph() as graph:``)
when at least one input requires a gradient. Outside a graph nothing is recorded,
which is how evaluation and finite-difference probes run.
"""
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional, Sequence, Tuple, Union
import itertools

import numpy as np

from mran.errors import ConfigError, DimensionError, UsageError, ValidationError

ArrayLike = Union[np.ndarray, Sequence, float]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_node_ids = itertools.count()
_active_graph: ContextVar[Optional["Graph"]] = ContextVar("mran_active_graph", default=None)


class Tensor:
    """Dense row-major float64 value, optionally carrying a gradient buffer"""

    __slots__ = ("values", "requires_grad", "grad", "node_id", "name")

    def __init__(self, values: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.values) if requires_grad else None
        self.node_id = next(_node_ids)
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return detach(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, factor: float) -> "Tensor":
        return scale(self, factor)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


@dataclass
class _Record:
    output: Tensor
    parents: Tuple[Tensor, ...]
    backward_fn: BackwardFn


class Graph:
    """Tape of recorded ops in construction order (a valid topological order)"""

    def __init__(self):
        self.records: list[_Record] = []
        self._index: dict[int, int] = {}
        self._tokens = []

    def __enter__(self) -> "Graph":
        self._tokens.append(_active_graph.set(self))
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        _active_graph.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.records)

    def record(self, output: Tensor, parents: Tuple[Tensor, ...], backward_fn: BackwardFn):
        self._index[output.node_id] = len(self.records)
        self.records.append(_Record(output, parents, backward_fn))

    def parents_of(self, node_id: int) -> Tuple[int, ...]:
        record = self.records[self._index[node_id]]
        return tuple(p.node_id for p in record.parents)

    def backward(self, loss: Tensor):
        backward(loss, self)


def current_graph() -> Optional[Graph]:
    return _active_graph.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them, even inside an active graph"""
    token = _active_graph.set(None)
    try:
        yield
    finally:
        _active_graph.reset(token)


def _emit(values: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    graph = _active_graph.get()
    if graph is None or not any(p.requires_grad for p in parents):
        return Tensor(values)
    out = Tensor(values, requires_grad=True)
    graph.record(out, parents, backward_fn)
    return out


def backward(loss: Tensor, graph: Graph):
    """
    Accumulate d(loss)/d(node) into every requires_grad tensor reachable from loss.

    Gradients ADD into existing buffers; callers zero parameters between steps.
    """
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss.node_id not in graph._index:
        raise UsageError("loss was not recorded on this graph")

    loss.grad += 1.0
    for record in reversed(graph.records[: graph._index[loss.node_id] + 1]):
        if not record.output.grad.any():
            continue
        for parent, grad in zip(record.parents, record.backward_fn(record.output.grad)):
            if grad is not None and parent.requires_grad:
                parent.grad += grad


def zero_grad(params: Iterable[Tensor]):
    for param in params:
        param.zero_grad()


# ----------------------------------------------------------------------------
# Ops
# ----------------------------------------------------------------------------

def _as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def detach(x: Tensor) -> Tensor:
    return Tensor(x.values)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.values, b.values
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if x.values.ndim != 2 or b.values.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match rows of {x.shape}")
    return _emit(x.values + b.values, (x, b), lambda g: (g, g.sum(axis=0)))


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0.0
    return _emit(np.where(mask, x.values, 0.0), (x,), lambda g: (g * mask,))


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) so eval mode is the identity"""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _emit(x.values * mask, (x,), lambda g: (g * mask,))


def concat(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat: leading dimensions differ {a.shape} vs {b.shape}")
    split = a.shape[-1]
    return _emit(
        np.concatenate([a.values, b.values], axis=-1),
        (a, b),
        lambda g: (g[..., :split], g[..., split:]),
    )


def log_softmax(x: Tensor) -> Tensor:
    if x.shape[-1] < 2:
        raise DimensionError(f"log_softmax needs at least 2 classes, got {x.shape}")
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)
    return _emit(out, (x,), lambda g: (g - probs * g.sum(axis=-1, keepdims=True),))


def nll_soft(logp: Tensor, target: Union[Tensor, np.ndarray]) -> Tensor:
    """Mean over rows of the cross-entropy -sum_c target[c] * logp[c]"""
    target_values = _as_tensor(target).values
    if target_values.shape != logp.shape:
        raise DimensionError(f"nll_soft: target {target_values.shape} vs log-probs {logp.shape}")
    if (target_values < 0.0).any() or not np.allclose(target_values.sum(axis=-1), 1.0, rtol=0.0, atol=1e-9):
        raise ValidationError("nll_soft: every target row must be a probability distribution")
    rows = max(1, logp.size // logp.shape[-1])
    value = -(target_values * logp.values).sum() / rows
    return _emit(np.array(value), (logp,), lambda g: (-g * target_values / rows,))


def l1_distance(a: Tensor, b: Tensor) -> Tensor:
    """Mean over rows of sum_c |a - b|, with sign(0) = 0 in the gradient"""
    _same_shape("l1_distance", a, b)
    diff = a.values - b.values
    rows = max(1, a.size // a.shape[-1])
    sign = np.sign(diff) / rows
    return _emit(np.array(np.abs(diff).sum() / rows), (a, b), lambda g: (g * sign, -g * sign))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit(a.values + b.values, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit(a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product"""
    _same_shape("mul", a, b)
    av, bv = a.values, b.values
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _emit(x.values * factor, (x,), lambda g: (g * factor,))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _emit(np.array(x.values.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def interpolate(a: Tensor, b: Tensor, lam: Union[float, np.ndarray]) -> Tensor:
    """
    lam * a + (1 - lam) * b; an array lam holds one coefficient per row.

    Evaluated as b + lam (a - b), so equal rows and lam = 0 reproduce b exactly; lam = 1 returns a exactly.
    """
    _same_shape("interpolate", a, b)
    if np.ndim(lam) == 0:
        lam = float(lam)
    else:
        lam = np.asarray(lam, dtype=np.float64)
        if lam.shape != a.shape[:1]:
            raise DimensionError(f"interpolate: per-row coefficients {lam.shape} vs rows of {a.shape}")
        lam = lam.reshape((-1,) + (1,) * (a.values.ndim - 1))
    values = np.where(lam == 1.0, a.values, b.values + lam * (a.values - b.values))
    return _emit(values, (a, b), lambda g: (lam * g, (1.0 - lam) * g))


# ----------------------------------------------------------------------------
# Verification oracle
# ----------------------------------------------------------------------------

def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """
    Compare the analytic gradient of f at x with central differences.

    Returns the max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    f must be deterministic; x must require a gradient.
    """
    if step <= 0.0:
        raise ConfigError(f"finite-difference step must be positive, got {step}")
    if not x.requires_grad:
        raise UsageError("finite_diff_check needs a tensor with requires_grad=True")

    x.zero_grad()
    with Graph() as graph:
        loss = f(x)
    graph.backward(loss)
    analytic = x.grad.copy()
    x.zero_grad()

    numeric = np.zeros_like(analytic)
    flat = x.values.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = f(x).item()
            flat[i] = original - step
            minus = f(x).item()
            flat[i] = original
            numeric.flat[i] = (plus - minus) / (2.0 * step)

    if analytic.size == 0:
        return 0.0
    error = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(error.max())
