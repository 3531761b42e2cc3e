"""
Dense tensors with tape based reverse-mode differentiation, and ADAM.

Values are numpy arrays wrapped in `Tensor`. Operations run eagerly;
while a `Tape` is active, every operation having a trainable input is
recorded on it together with its vector-Jacobian product, so that
`backward` can replay the tape in reverse order.

    >>> w = Tensor([[1.0, 2.0]], requires_grad=True)
    >>> with Tape():
    ...     loss = tsum(w * w)
    >>> backward(loss, {"w": w})["w"]
    array([[2., 4.]])
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DegenerateBatchError, DimensionError, OptimizerError, TracingError

DEFAULT_DTYPE = np.float64
_GELU_C = math.sqrt(2.0 / math.pi)

_active_tapes: List["Tape"] = []


class Tensor:
    """Immutable n-dimensional value, optionally trainable."""

    __slots__ = ("_tape", "data", "name", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.name = name
        self._tape = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def traced(self) -> bool:
        """Whether operations on the tensor are recorded on a tape."""
        return self._tape is not None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" '{self.name}'" if self.name else ""
        return f"<Tensor{label} shape={self.shape}{' trainable' if self.requires_grad else ''}>"

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

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def astensor(value) -> Tensor:
    """Wraps anything array-like as a constant tensor, leaves tensors alone."""
    return value if isinstance(value, Tensor) else Tensor(value)


class Node(NamedTuple):
    """One recorded operation: its output, its inputs and their vector-Jacobian product."""

    output: Tensor
    parents: Tuple[Tensor, ...]
    vjp: Callable


class Tape:
    """
    Records operations executed inside its `with` block.

    Nodes are kept in recording order, which is a topological order
    of the computation, so backward just walks them in reverse.
    Tapes nest; operations are recorded on the innermost one.
    """

    def __init__(self):
        self.nodes: List[Node] = []

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc_info):
        _active_tapes.remove(self)

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor, wrt: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
        """Gradients of a scalar loss recorded on this tape, keyed like `wrt`."""
        if loss._tape is not self:
            raise TracingError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise TracingError(f"loss must be a scalar, got shape {loss.shape}")
        adjoints = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            grad = adjoints.pop(id(node.output), None)
            if grad is None:
                continue
            for parent, parent_grad in zip(node.parents, node.vjp(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                adjoints[key] = adjoints[key] + parent_grad if key in adjoints else parent_grad
        return {name: adjoints.get(id(tensor), np.zeros_like(tensor.data)) for name, tensor in wrt.items()}


def backward(loss: Tensor, wrt: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    """
    Reverse-mode gradients of `loss` for every tensor in `wrt`.

    Tensors the loss does not depend on get a zero gradient.
    """
    if not isinstance(loss, Tensor) or loss._tape is None:
        raise TracingError("backward needs a loss computed while a Tape was active")
    return loss._tape.backward(loss, wrt)


def _result(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor(data, dtype=data.dtype if data.dtype.kind == "f" else None)
    tape = _active_tapes[-1] if _active_tapes else None
    if tape is not None and any(parent.requires_grad for parent in parents):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(Node(out, tuple(parents), vjp))
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Elementwise


def add(a, b) -> Tensor:
    """Elementwise sum, with broadcasting."""
    a, b = astensor(a), astensor(b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    """Elementwise difference, with broadcasting."""
    a, b = astensor(a), astensor(b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    """Elementwise product, with broadcasting."""
    a, b = astensor(a), astensor(b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    """Elementwise quotient, with broadcasting."""
    a, b = astensor(a), astensor(b)
    return _result(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def scale(a, factor: float) -> Tensor:
    """Product by a constant."""
    a = astensor(a)
    return _result(a.data * factor, (a,), lambda g: (g * factor,))


def gelu(x) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    x = astensor(x)
    inner = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(inner)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * dinner),)

    return _result(0.5 * x.data * (1.0 + t), (x,), vjp)


def tsum(x) -> Tensor:
    """Sum of every entry, as a scalar tensor."""
    x = astensor(x)
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


# Shape


def reshape(x, shape: Sequence[int]) -> Tensor:
    """Same data in another shape."""
    x = astensor(x)
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes: Sequence[int]) -> Tensor:
    """Permutes the axes."""
    x = astensor(x)
    inverse = np.argsort(axes)
    return _result(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inverse),))


# Linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading ones."""
    a, b = astensor(a), astensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from e

    def vjp(g):
        return (
            _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape),
            _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape),
        )

    return _result(data, (a, b), vjp)


def embedding(table, ids) -> Tensor:
    """Gathers rows of `table` for the integer array `ids`."""
    table = astensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def vjp(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return _result(table.data[ids], (table,), vjp)


# Normalisation


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row maximum."""
    x = astensor(x)
    shifted = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = shifted / shifted.sum(axis=-1, keepdims=True)
    return _result(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalises each row to zero mean and unit variance, then applies gain and bias."""
    x, gain, bias = astensor(x), astensor(gain), astensor(bias)
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise DimensionError(f"layer_norm of width {width} got gain {gain.shape} and bias {bias.shape}")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normalized = centered * inv_std
    leading = tuple(range(x.ndim - 1))

    def vjp(g):
        dnorm = g * gain.data
        dx = inv_std * (
            dnorm - dnorm.mean(axis=-1, keepdims=True) - normalized * (dnorm * normalized).mean(axis=-1, keepdims=True)
        )
        return dx, (g * normalized).sum(axis=leading), g.sum(axis=leading)

    return _result(normalized * gain.data + bias.data, (x, gain, bias), vjp)


def dropout(x, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; the identity when not training or rate is 0."""
    x = astensor(x)
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout while training needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep, dtype=x.data.dtype))


# Loss


def weighted_cross_entropy(logits, targets, weights) -> Tensor:
    """
    Weighted mean over positions of the softmax cross entropy.

    `logits` has the vocabulary on its last axis; `targets` and `weights`
    have one entry per remaining position.
    The result is sum(w * -log p[target]) / sum(w).
    """
    logits = astensor(logits)
    vocab_size = logits.shape[-1]
    flat = logits.data.reshape(-1, vocab_size)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    weights = np.asarray(weights, dtype=flat.dtype).reshape(-1)
    if targets.shape[0] != flat.shape[0] or weights.shape[0] != flat.shape[0]:
        raise DimensionError(
            f"{flat.shape[0]} positions of logits but {targets.shape[0]} targets and {weights.shape[0]} weights"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= vocab_size):
        raise DimensionError(f"target ids must lie in [0, {vocab_size})")
    if (weights < 0).any():
        raise ConfigError("loss weights must be non-negative")
    total = weights.sum()
    if not total > 0:
        raise DegenerateBatchError("every position has zero loss weight")

    shifted = flat - flat.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    positions = np.arange(flat.shape[0])
    loss = -(weights * log_probs[positions, targets]).sum() / total

    def vjp(g):
        share = weights / total
        grad = np.exp(log_probs) * share[:, None]
        grad[positions, targets] -= share
        return ((g * grad).reshape(logits.shape),)

    return _result(np.asarray(loss, dtype=flat.dtype), (logits,), vjp)


# Optimisation


@dataclass(frozen=True)
class AdamState:
    """Moments and hyper-parameters of an ADAM optimizer."""

    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: Mapping[str, np.ndarray] = field(default_factory=dict)
    second_moment: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")

    @classmethod
    def initial(cls, params: Mapping[str, np.ndarray], **hyper) -> "AdamState":
        """Zero moments for every parameter."""
        return cls(
            first_moment={name: np.zeros_like(value) for name, value in params.items()},
            second_moment={name: np.zeros_like(value) for name, value in params.items()},
            **hyper,
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    learning_rate: Optional[float] = None,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One bias-corrected ADAM update.

    Returns new parameter arrays and a new state; inputs are left untouched.
    `learning_rate` overrides the state's rate for this step (schedules).
    """
    lr = state.learning_rate if learning_rate is None else learning_rate
    if not lr > 0:
        raise ConfigError(f"learning_rate must be positive, got {lr}")
    step_count = state.step_count + 1
    correction1 = 1.0 - state.beta1**step_count
    correction2 = 1.0 - state.beta2**step_count
    new_params, first, second = {}, {}, {}
    for name, value in params.items():
        grad = grads[name]
        if grad.shape != value.shape:
            raise DimensionError(f"gradient of '{name}' has shape {grad.shape}, parameter {value.shape}")
        if not np.isfinite(grad).all():
            raise OptimizerError(name)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        m = (1.0 - state.beta1) * grad if m is None else state.beta1 * m + (1.0 - state.beta1) * grad
        v = (1.0 - state.beta2) * grad * grad if v is None else state.beta2 * v + (1.0 - state.beta2) * grad * grad
        first[name] = m
        second[name] = v
        new_params[name] = value - lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    new_state = AdamState(
        learning_rate=state.learning_rate,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
        step_count=step_count,
        first_moment=first,
        second_moment=second,
    )
    return new_params, new_state


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    """Euclidean norm of all the gradients taken together."""
    return math.sqrt(sum(float((g * g).sum()) for g in grads.values()))


def clip_by_global_norm(
    grads: Mapping[str, np.ndarray], max_norm: Optional[float]
) -> Tuple[Dict[str, np.ndarray], float]:
    """Rescales gradients so their joint L2 norm is at most `max_norm`. Returns them and the original norm."""
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return dict(grads), norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm


# Gradient checking


class GradientCheck(NamedTuple):
    """Analytic and finite difference gradient of one parameter entry."""

    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def error(self) -> float:
        """Relative difference of the two gradients, 0 when both are 0."""
        scale = max(abs(self.analytic), abs(self.numeric))
        return abs(self.analytic - self.numeric) / scale if scale else 0.0


def check_gradients(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    step: float = 1e-3,
    entries: int = 6,
    seed: int = 0,
) -> List[GradientCheck]:
    """
    Compares reverse-mode gradients with central finite differences.

    For every parameter, checks the entries with the largest analytic
    gradient plus as many randomly chosen ones, `entries` in total.
    """
    rng = np.random.default_rng(seed)
    leaves = {name: Tensor(value, requires_grad=True, name=name) for name, value in params.items()}
    with Tape():
        loss = loss_fn(leaves)
    analytic = backward(loss, leaves)

    def evaluate(name, index, delta):
        perturbed = params[name].copy()
        perturbed[index] += delta
        constants = {key: Tensor(perturbed if key == name else value) for key, value in params.items()}
        return loss_fn(constants).item()

    checks = []
    for name, value in params.items():
        grad = analytic[name]
        largest = np.argsort(-np.abs(grad), axis=None)[: entries // 2]
        randoms = rng.choice(value.size, size=min(value.size, entries - len(largest)), replace=False)
        for flat_index in dict.fromkeys([*largest.tolist(), *randoms.tolist()]):
            index = np.unravel_index(flat_index, value.shape)
            numeric = (evaluate(name, index, step) - evaluate(name, index, -step)) / (2 * step)
            checks.append(GradientCheck(name, tuple(int(i) for i in index), float(grad[index]), numeric))
    return checks


def gradient_errors(checks: Sequence[GradientCheck], floor: float = 1e-8) -> Dict[str, float]:
    """
    Relative error of each checked tensor, `|a - n| / max(|a|, |n|)` over its checked entries.

    Tensors whose gradients differ by less than `floor` in norm count as exact.
    """
    grouped: Dict[str, List[GradientCheck]] = {}
    for check in checks:
        grouped.setdefault(check.name, []).append(check)
    errors = {}
    for name, group in grouped.items():
        analytic = np.array([check.analytic for check in group])
        numeric = np.array([check.numeric for check in group])
        diff = float(np.linalg.norm(analytic - numeric))
        scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
        errors[name] = 0.0 if diff < floor else diff / scale
    return errors


# vim: et ts=4 sw=4
