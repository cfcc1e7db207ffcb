'''
@file: numcore.py
@author: airside-tech

Small reverse-mode differentiation core over 2-D float64 arrays.

Every operation is recorded on a Tape together with a closure that maps the
output adjoint to input adjoints. backward() walks the records in exact
reverse order. Parameter gradients accumulate across backward calls until
zero_grad() is called.

'''

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from errors import NonFiniteError, ShapeError, TapeStateError
from graph import SparseMatrix

logger = logging.getLogger("stc_mixhop.numcore")

ACTIVATIONS = ("relu", "sigmoid", "softmax_rows")


class Tensor2:
    '''
    Dense 2-D real matrix with an optional gradient accumulator.
    '''

    def __init__(self, values, requires_grad: bool = False, name: str | None = None) -> None:
        array = np.array(values, dtype=np.float64)
        if array.ndim == 0:
            array = array.reshape(1, 1)
        elif array.ndim == 1:
            array = array.reshape(1, -1)
        elif array.ndim != 2:
            raise ShapeError(f"Tensor2 needs at most 2 dimensions, got {array.ndim}")
        self.values = array
        self.requires_grad = requires_grad
        # true for parameters and for anything computed from them
        self.needs_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(array) if requires_grad else None

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.values)

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def __repr__(self) -> str:
        label = f"{self.name}, " if self.name else ""
        return f"Tensor2({label}{self.rows}x{self.cols}, requires_grad={self.requires_grad})"


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a: Tensor2, b: Tensor2, op: str) -> None:
    for dim in (0, 1):
        if a.shape[dim] != b.shape[dim] and b.shape[dim] != 1 and a.shape[dim] != 1:
            raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}")


@dataclass
class _Record:
    output: Tensor2
    inputs: tuple[Tensor2, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    '''
    Ordered record of the operations of one forward pass.

    A tape created with enabled=False computes values only (evaluation mode).
    '''

    def __init__(self, enabled: bool = True) -> None:
        self.enabled = enabled
        self.records: list[_Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def apply(self, values: np.ndarray, inputs: Sequence[Tensor2],
              backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor2:
        """Wrap `values` as the output of an operation on `inputs` and record it."""
        out = Tensor2(values)
        if self.enabled and any(t.needs_grad for t in inputs):
            out.needs_grad = True
            self.records.append(_Record(out, tuple(inputs), backward))
        return out

    # ------------------------------------------------------------------
    # linear algebra
    # ------------------------------------------------------------------

    def spmm(self, operator: SparseMatrix, x: Tensor2) -> Tensor2:
        """Sparse-dense product S X. Gradient: dX = S^T dY."""
        if operator.n != x.rows:
            raise ShapeError(f"spmm: operator is {operator.n}x{operator.n}, input has {x.rows} rows")
        transposed = operator.csr.T.tocsr()
        return self.apply(operator.matmul(x.values), (x,),
                          lambda g: (np.asarray(transposed @ g),))

    def matmul(self, a: Tensor2, b: Tensor2) -> Tensor2:
        if a.cols != b.rows:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
        return self.apply(a.values @ b.values, (a, b),
                          lambda g: (g @ b.values.T, a.values.T @ g))

    def affine(self, x: Tensor2, w: Tensor2, b: Tensor2) -> Tensor2:
        """X W + b with b broadcast over rows."""
        if x.cols != w.rows:
            raise ShapeError(f"affine: {x.shape} @ {w.shape}")
        if b.shape != (1, w.cols):
            raise ShapeError(f"affine: bias must be 1x{w.cols}, got {b.shape}")
        return self.apply(x.values @ w.values + b.values, (x, w, b),
                          lambda g: (g @ w.values.T, x.values.T @ g, g.sum(axis=0, keepdims=True)))

    # ------------------------------------------------------------------
    # elementwise
    # ------------------------------------------------------------------

    def add(self, a: Tensor2, b: Tensor2) -> Tensor2:
        _check_broadcast(a, b, "add")
        return self.apply(a.values + b.values, (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    def sub(self, a: Tensor2, b: Tensor2) -> Tensor2:
        _check_broadcast(a, b, "sub")
        return self.apply(a.values - b.values, (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))

    def mul(self, a: Tensor2, b: Tensor2) -> Tensor2:
        _check_broadcast(a, b, "mul")
        return self.apply(a.values * b.values, (a, b),
                          lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)))

    def scale(self, a: Tensor2, factor: float) -> Tensor2:
        return self.apply(a.values * factor, (a,), lambda g: (g * factor,))

    def clamp(self, a: Tensor2, low: float, high: float) -> Tensor2:
        inside = (a.values >= low) & (a.values <= high)
        return self.apply(np.clip(a.values, low, high), (a,), lambda g: (g * inside,))

    def activation(self, x: Tensor2, kind: str, mask: np.ndarray | None = None) -> Tensor2:
        """
        relu / sigmoid elementwise, or softmax over each row.

        For softmax_rows an optional boolean `mask` (same shape) marks the
        entries that take part; masked-out entries get weight 0.
        """
        if kind == "relu":
            active = x.values > 0
            return self.apply(np.where(active, x.values, 0.0), (x,), lambda g: (g * active,))
        if kind == "sigmoid":
            out = _sigmoid(x.values)
            return self.apply(out, (x,), lambda g: (g * out * (1.0 - out),))
        if kind == "softmax_rows":
            out = _softmax_rows(x.values, mask)
            return self.apply(out, (x,),
                              lambda g: (out * (g - (g * out).sum(axis=1, keepdims=True)),))
        raise ShapeError(f"unknown activation '{kind}', expected one of {ACTIVATIONS}")

    # ------------------------------------------------------------------
    # structure
    # ------------------------------------------------------------------

    def concat_cols(self, parts: Sequence[Tensor2]) -> Tensor2:
        if len({p.rows for p in parts}) > 1:
            raise ShapeError(f"concat_cols: row counts differ {[p.rows for p in parts]}")
        bounds = np.cumsum([0] + [p.cols for p in parts])
        return self.apply(np.hstack([p.values for p in parts]), tuple(parts),
                          lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))))

    def concat_rows(self, parts: Sequence[Tensor2]) -> Tensor2:
        if len({p.cols for p in parts}) > 1:
            raise ShapeError(f"concat_rows: column counts differ {[p.cols for p in parts]}")
        bounds = np.cumsum([0] + [p.rows for p in parts])
        return self.apply(np.vstack([p.values for p in parts]), tuple(parts),
                          lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts))))

    def slice_rows(self, x: Tensor2, start: int, stop: int) -> Tensor2:
        def backward(g):
            full = np.zeros_like(x.values)
            full[start:stop] = g
            return (full,)
        return self.apply(x.values[start:stop], (x,), backward)

    def slice_cols(self, x: Tensor2, start: int, stop: int) -> Tensor2:
        def backward(g):
            full = np.zeros_like(x.values)
            full[:, start:stop] = g
            return (full,)
        return self.apply(x.values[:, start:stop], (x,), backward)

    def gather_rows(self, x: Tensor2, index: np.ndarray) -> Tensor2:
        """Rows x[index]; an index of -1 yields a zero row."""
        index = np.asarray(index, dtype=np.int64)
        present = index >= 0
        out = np.zeros((len(index), x.cols))
        out[present] = x.values[index[present]]

        def backward(g):
            full = np.zeros_like(x.values)
            np.add.at(full, index[present], g[present])
            return (full,)
        return self.apply(out, (x,), backward)

    # ------------------------------------------------------------------
    # reductions
    # ------------------------------------------------------------------

    def rowdot(self, a: Tensor2, b: Tensor2) -> Tensor2:
        """Row-wise inner products, n x 1."""
        if a.shape != b.shape:
            raise ShapeError(f"rowdot: {a.shape} vs {b.shape}")
        return self.apply((a.values * b.values).sum(axis=1, keepdims=True), (a, b),
                          lambda g: (g * b.values, g * a.values))

    def sum_all(self, x: Tensor2) -> Tensor2:
        return self.apply(np.array([[x.values.sum()]]), (x,), lambda g: (np.full_like(x.values, g[0, 0]),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    ez = np.exp(z[~positive])
    out[~positive] = ez / (1.0 + ez)
    return out


def _softmax_rows(z: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        mask = np.ones_like(z, dtype=bool)
    shifted = np.where(mask, z, -np.inf)
    row_max = shifted.max(axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    weights = np.where(mask, np.exp(shifted - row_max), 0.0)
    total = weights.sum(axis=1, keepdims=True)
    return np.divide(weights, total, out=np.zeros_like(weights), where=total > 0)


def backward(tape: Tape, loss: Tensor2) -> None:
    """
    Populate .grad of every requires_grad tensor reachable from `loss`.

    Gradients are added to whatever the tensors already hold.
    """
    if not tape.enabled:
        raise TapeStateError("tape was created with recording disabled")
    if not any(record.output is loss for record in tape.records):
        raise TapeStateError("loss was not produced by a forward pass recorded on this tape")
    if loss.shape != (1, 1):
        raise ShapeError(f"loss must be 1x1, got {loss.shape}")

    adjoints: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    leaves: dict[int, Tensor2] = {}
    for record in reversed(tape.records):
        grad_out = adjoints.pop(id(record.output), None)
        if grad_out is None:
            continue
        for tensor, grad in zip(record.inputs, record.backward(grad_out)):
            if grad is None or not tensor.needs_grad:
                continue
            key = id(tensor)
            adjoints[key] = adjoints[key] + grad if key in adjoints else np.array(grad, dtype=np.float64)
            if tensor.requires_grad:
                leaves[key] = tensor

    for key, tensor in leaves.items():
        tensor.grad = tensor.grad + adjoints[key]


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float | dict[str, float] = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """
    One bias-corrected Adam update, in place on `params`.

    Args:
        params: name -> parameter array (modified in place)
        grads: name -> gradient array
        state: moment estimates and step counter (t is incremented first)
        lr: one learning rate, or a per-parameter mapping

    Raises:
        NonFiniteError: a gradient holds NaN or inf; nothing is updated
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for '{name}'",
                                 {"param": name, "step": state.t + 1, "bad_entries": int((~np.isfinite(grad)).sum())})

    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, value in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        rate = lr[name] if isinstance(lr, dict) else lr
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        value -= rate * m_hat / (np.sqrt(v_hat) + eps)
    return state


class Adam:
    '''
    Adam over named Tensor2 parameters with optional per-parameter learning rates.
    '''

    def __init__(self, params: dict[str, Tensor2], lr: float | dict[str, float] = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()

    def step(self) -> None:
        adam_step(
            {name: t.values for name, t in self.params.items()},
            {name: t.grad for name, t in self.params.items()},
            self.state, self.lr, self.beta1, self.beta2, self.eps,
        )


def numerical_gradient(loss_fn: Callable[[], float], tensor: Tensor2, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function with respect to `tensor.values`."""
    grad = np.zeros_like(tensor.values)
    for idx in np.ndindex(*tensor.shape):
        original = tensor.values[idx]
        tensor.values[idx] = original + eps
        upper = loss_fn()
        tensor.values[idx] = original - eps
        lower = loss_fn()
        tensor.values[idx] = original
        grad[idx] = (upper - lower) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-wise relative error max|a - n| / max(max|a|, max|n|)."""
    if analytic.size == 0:
        return 0.0
    scale = max(float(np.abs(analytic).max()), float(np.abs(numeric).max()), floor)
    return float(np.abs(analytic - numeric).max() / scale)
