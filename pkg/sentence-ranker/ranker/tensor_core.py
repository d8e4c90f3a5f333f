"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every operation in this module computes its values eagerly. When a
``GraphTape`` is active (``with GraphTape() as tape:``) and at least one
input requires a gradient, the operation also appends an ``OpRecord`` to
the tape; ``backward(loss, tape)`` then walks the tape in reverse and
accumulates ``dL/dleaf`` into every leaf's ``grad``. Outside a tape the
same code runs as plain inference and records nothing.
"""

from __future__ import annotations

import itertools
import logging
from contextlib import contextmanager
from contextvars import ContextVar, Token
from dataclasses import dataclass, field
from typing import (
    Callable,
    Dict,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from .constants import DEFAULT_FD_STEP, LAYER_NORM_EPS
from .errors import ContractError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence, float, int]
Mask = Optional[np.ndarray]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_node_ids = itertools.count(1)
_tape_ids = itertools.count(1)
_active_tape: ContextVar[Optional["GraphTape"]] = ContextVar(
    "ranker_active_tape", default=None
)


@dataclass(eq=False)
class OpRecord:
    """Provenance of a non-leaf tensor: the op, its inputs and its gradient rule."""

    op: str
    inputs: Tuple["Tensor", ...]
    output: "Tensor"
    tape_id: int
    backward_fn: BackwardFn = field(repr=False)


class Tensor:
    """A node of the computation graph backed by a float64 numpy array."""

    __slots__ = ("values", "requires_grad", "node_id", "op_record", "name", "_grad")

    def __init__(
        self,
        values: ArrayLike,
        *,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ) -> None:
        arr = np.array(values, dtype=np.float64)
        if any(dim <= 0 for dim in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.values: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self.op_record: Optional[OpRecord] = None
        self.name = name
        self._grad: Optional[np.ndarray] = None

    @classmethod
    def _wrap(cls, values: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        arr = np.asarray(values, dtype=np.float64)
        out.values = arr if arr.flags.c_contiguous else arr.copy()
        out.requires_grad = False
        out.node_id = next(_node_ids)
        out.op_record = None
        out.name = None
        out._grad = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def grad(self) -> np.ndarray:
        """Gradient accumulator; all zeros until a backward pass reaches this tensor."""
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value: ArrayLike) -> None:
        arr = np.array(value, dtype=np.float64)
        if arr.shape != self.values.shape:
            raise ShapeError(
                f"gradient shape {arr.shape} does not match tensor shape {self.shape}"
            )
        self._grad = arr

    @property
    def is_leaf(self) -> bool:
        return self.op_record is None

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.values.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def parameter(values: ArrayLike, name: Optional[str] = None) -> Tensor:
    """Create a trainable leaf."""
    return Tensor(values, requires_grad=True, name=name)


def constant(values: ArrayLike) -> Tensor:
    """Create a leaf that never receives a gradient."""
    return Tensor(values, requires_grad=False)


class GraphTape:
    """Ordered list of op records; activating it makes operations record themselves."""

    def __init__(self) -> None:
        self.tape_id = next(_tape_ids)
        self.records: List[OpRecord] = []
        self._token: Optional[Token] = None

    def __enter__(self) -> "GraphTape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc_info: object) -> None:
        if self._token is not None:
            _active_tape.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.records)


def active_tape() -> Optional[GraphTape]:
    return _active_tape.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording: ops inside the block compute values only."""
    token = _active_tape.set(None)
    try:
        yield
    finally:
        _active_tape.reset(token)


def _as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else constant(value)


def _result(
    op: str,
    inputs: Sequence[Tensor],
    values: np.ndarray,
    backward_fn: BackwardFn,
) -> Tensor:
    out = Tensor._wrap(values)
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        record = OpRecord(op, tuple(inputs), out, tape.tape_id, backward_fn)
        out.op_record = record
        tape.records.append(record)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


def _check_mask(mask: Mask, shape: Tuple[int, ...]) -> Optional[np.ndarray]:
    if mask is None:
        return None
    keep = np.asarray(mask, dtype=bool)
    try:
        keep = np.broadcast_to(keep, shape)
    except ValueError as exc:
        raise ShapeError(f"mask shape {keep.shape} does not fit scores {shape}") from exc
    if not keep.any(axis=-1).all():
        raise ContractError("every key is masked for at least one query row")
    return keep


# --------------------------------------------------------------------------
# elementwise arithmetic
# --------------------------------------------------------------------------


def add(a: Tensor, b: Union[Tensor, ArrayLike]) -> Tensor:
    b = _as_tensor(b)
    _broadcast_shape("add", a, b)
    a_shape, b_shape = a.shape, b.shape

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return _result("add", (a, b), a.values + b.values, backward_fn)


def sub(a: Tensor, b: Union[Tensor, ArrayLike]) -> Tensor:
    b = _as_tensor(b)
    _broadcast_shape("sub", a, b)
    a_shape, b_shape = a.shape, b.shape

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)

    return _result("sub", (a, b), a.values - b.values, backward_fn)


def mul(a: Tensor, b: Union[Tensor, ArrayLike]) -> Tensor:
    b = _as_tensor(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.values, b.values

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _result("mul", (a, b), av * bv, backward_fn)


def scale(x: Tensor, factor: float) -> Tensor:
    c = float(factor)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g * c,)

    return _result("scale", (x,), x.values * c, backward_fn)


def add_scalar(x: Tensor, value: float) -> Tensor:
    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g,)

    return _result("add_scalar", (x,), x.values + float(value), backward_fn)


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    active = x.values > 0.0

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g * active,)

    return _result("relu", (x,), np.where(active, x.values, 0.0), backward_fn)


# --------------------------------------------------------------------------
# linear algebra and shape manipulation
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.values, b.values

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return g @ bv.T, av.T @ g

    return _result("matmul", (a, b), av @ bv, backward_fn)


def transpose(x: Tensor) -> Tensor:
    if x.values.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {x.shape}")

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g.T,)

    return _result("transpose", (x,), x.values.T, backward_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    new_shape = tuple(int(d) for d in shape)
    if int(np.prod(new_shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {new_shape}")
    old_shape = x.shape

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g.reshape(old_shape),)

    return _result("reshape", (x,), x.values.reshape(new_shape), backward_fn)


def take_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows (first-axis entries) of ``x``; repeated indices accumulate on backward."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("take_rows needs a non-empty 1-D index list")
    if idx.min() < 0 or idx.max() >= x.shape[0]:
        raise ShapeError(f"take_rows: index out of range for {x.shape[0]} rows")
    x_shape = x.shape

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        gx = np.zeros(x_shape)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result("take_rows", (x,), x.values[idx], backward_fn)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols needs at least one tensor")
    rows = parts[0].shape[0]
    for part in parts:
        if part.values.ndim != 2 or part.shape[0] != rows:
            raise ShapeError(
                f"concat_cols: shapes {[p.shape for p in parts]} do not share rows"
            )
    bounds = np.cumsum([p.shape[1] for p in parts])[:-1]

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(np.split(g, bounds, axis=1))

    values = np.concatenate([p.values for p in parts], axis=1)
    return _result("concat_cols", tuple(parts), values, backward_fn)


# --------------------------------------------------------------------------
# reductions
# --------------------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    x_shape = x.shape

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (np.broadcast_to(g, x_shape).copy(),)

    return _result("sum", (x,), np.asarray(x.values.sum()), backward_fn)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


# --------------------------------------------------------------------------
# softmax family and normalisation
# --------------------------------------------------------------------------


def _shifted_scores(x: np.ndarray, keep: Optional[np.ndarray]) -> np.ndarray:
    scores = x if keep is None else np.where(keep, x, -np.inf)
    return scores - scores.max(axis=-1, keepdims=True)


def softmax_rows(x: Tensor, mask: Mask = None) -> Tensor:
    """Row-wise softmax with per-row max subtraction; masked entries get probability 0."""
    keep = _check_mask(mask, x.shape)
    e = np.exp(_shifted_scores(x.values, keep))
    p = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result("softmax_rows", (x,), p, backward_fn)


def log_softmax_rows(x: Tensor, mask: Mask = None) -> Tensor:
    keep = _check_mask(mask, x.shape)
    shifted = _shifted_scores(x.values, keep)
    e = np.exp(shifted)
    total = e.sum(axis=-1, keepdims=True)
    p = e / total
    out = shifted - np.log(total)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        g_kept = g if keep is None else np.where(keep, g, 0.0)
        return (g_kept - p * g_kept.sum(axis=-1, keepdims=True),)

    return _result("log_softmax_rows", (x,), out, backward_fn)


def logsumexp_rows(x: Tensor, mask: Mask = None) -> Tensor:
    """Stable ``log(sum(exp(row)))`` over the kept entries of each row; returns one value per row."""
    keep = _check_mask(mask, x.shape)
    scores = x.values if keep is None else np.where(keep, x.values, -np.inf)
    row_max = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - row_max)
    total = e.sum(axis=-1, keepdims=True)
    p = e / total
    out = (row_max + np.log(total))[..., 0]

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g[..., None] * p,)

    return _result("logsumexp_rows", (x,), out, backward_fn)


def layer_norm(
    x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS
) -> Tensor:
    """Normalize each row to zero mean and unit variance, then apply ``gain`` and ``bias``."""
    if x.values.ndim != 2:
        raise ShapeError(f"layer_norm expects a matrix, got {x.shape}")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} and bias {bias.shape} must be ({d},)"
        )
    centered = x.values - x.values.mean(axis=1, keepdims=True)
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    gv = gain.values

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        d_hat = g * gv
        dx = inv_std * (
            d_hat
            - d_hat.mean(axis=1, keepdims=True)
            - x_hat * (d_hat * x_hat).mean(axis=1, keepdims=True)
        )
        return dx, (g * x_hat).sum(axis=0), g.sum(axis=0)

    return _result("layer_norm", (x, gain, bias), x_hat * gv + bias.values, backward_fn)


# --------------------------------------------------------------------------
# reverse pass
# --------------------------------------------------------------------------


def backward(loss: Tensor, tape: GraphTape) -> None:
    """Accumulate ``dloss/dleaf`` into every leaf reachable on ``tape``.

    Intermediate gradients are recomputed on each call while leaf gradients
    accumulate, so two calls without ``zero_grad`` double the leaf grads.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    record = loss.op_record
    if record is None or record.tape_id != tape.tape_id:
        raise ContractError("loss was not produced on this tape")

    for rec in tape.records:
        rec.output._grad = None
    loss._grad = np.ones_like(loss.values)

    for rec in reversed(tape.records):
        g = rec.output._grad
        if g is None:
            continue
        for inp, g_in in zip(rec.inputs, rec.backward_fn(g)):
            if g_in is None or not inp.requires_grad:
                continue
            if inp._grad is None:
                inp._grad = np.zeros_like(inp.values)
            inp._grad += g_in


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()


# --------------------------------------------------------------------------
# gradient verification
# --------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients with central differences."""

    max_rel_error: float
    coords_checked: int
    worst_param: Optional[str] = None
    worst_index: Optional[int] = None
    failure: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    def to_dict(self) -> Dict[str, object]:
        return {
            "max_rel_error": self.max_rel_error,
            "coords_checked": self.coords_checked,
            "worst_param": self.worst_param,
            "worst_index": self.worst_index,
            "failure": self.failure,
        }


def _loss_value(f: Callable[[Mapping[str, Tensor]], Tensor], params: Mapping[str, Tensor]) -> float:
    return float(np.asarray(f(params).values).reshape(-1)[0])


def finite_diff_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    step: float = DEFAULT_FD_STEP,
    *,
    max_coords: Optional[int] = 256,
    seed: int = 0,
    abs_floor: float = 1e-8,
    grad_hook: Optional[Callable[[Mapping[str, Tensor]], None]] = None,
) -> GradCheckReport:
    """Return the max relative error between analytic and central-difference gradients.

    ``f`` builds a scalar loss from ``params``; it is evaluated once on a tape
    for the analytic gradient and then without a tape for every perturbation.
    Coordinates where both derivatives are below ``abs_floor`` count as equal.
    ``grad_hook`` may rewrite the analytic gradients before comparison.
    """
    if step <= 0:
        raise ContractError(f"finite-difference step must be positive, got {step}")

    zero_grads(params.values())
    with GraphTape() as tape:
        loss = f(params)
    if not np.all(np.isfinite(loss.values)):
        return GradCheckReport(float("inf"), 0, failure="non-finite loss at base point")
    if loss.op_record is not None:
        backward(loss, tape)
    if grad_hook is not None:
        grad_hook(params)
    analytic = {name: t.grad.copy() for name, t in params.items()}

    coords: List[Tuple[str, int]] = [
        (name, i) for name, t in params.items() for i in range(t.size)
    ]
    if max_coords is not None and len(coords) > max_coords:
        picks = np.random.default_rng(seed).choice(len(coords), max_coords, replace=False)
        coords = [coords[i] for i in sorted(picks)]

    report = GradCheckReport(0.0, 0)
    for name, index in coords:
        flat = params[name].values.reshape(-1)
        original = flat[index]
        flat[index] = original + step
        plus = _loss_value(f, params)
        flat[index] = original - step
        minus = _loss_value(f, params)
        flat[index] = original
        report.coords_checked += 1

        if not (np.isfinite(plus) and np.isfinite(minus)):
            report.failure = f"non-finite loss when perturbing {name}[{index}]"
            report.worst_param, report.worst_index = name, index
            report.max_rel_error = float("inf")
            return report

        numeric = (plus - minus) / (2.0 * step)
        exact = float(analytic[name].reshape(-1)[index])
        if max(abs(exact), abs(numeric)) < abs_floor:
            rel = 0.0
        else:
            rel = abs(exact - numeric) / (abs(exact) + abs(numeric) + 1e-12)
        if rel > report.max_rel_error:
            report.max_rel_error = rel
            report.worst_param, report.worst_index = name, index

    logger.debug(
        "gradient check: %d coordinates, max relative error %.3e at %s[%s]",
        report.coords_checked,
        report.max_rel_error,
        report.worst_param,
        report.worst_index,
    )
    return report
