"""Dense 2-D float64 matrices with reverse-mode automatic differentiation.

Every value in the model is a :class:`Tensor` wrapping a 2-D numpy array.
Differentiable operations executed while a :class:`Tape` is active are
recorded on it; ``Tape.backward`` replays the records in exact reverse
recording order and accumulates gradients into the ``grad`` field of every
``requires_grad`` leaf. Without an active tape the same functions compute
eagerly and record nothing, which is how constants (adjacency matrices,
frozen assignments) stay off the gradient path.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_STATE = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_STATE, "tape", None)


class Tensor:
    """A rows x cols matrix of float64 values, optionally trainable.

    ``requires_grad=True`` marks a leaf parameter: after a backward pass its
    ``grad`` holds dLoss/dTensor, accumulated across passes until the caller
    resets it. Tensors produced by recorded operations are never leaves.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.is_leaf = True

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zero(self) -> np.ndarray:
        """The accumulated gradient, or a zero matrix if none reached this leaf."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def detach(self) -> "Tensor":
        """A constant copy that shares no history with any tape."""
        return Tensor(self.data.copy())

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def zeros(rows: int, cols: int) -> Tensor:
    return Tensor(np.zeros((rows, cols)))


def eye(n: int) -> Tensor:
    return Tensor(np.eye(n))


# A backward rule receives the gradient flowing into its output plus a
# ``push(tensor, grad)`` callback used to hand gradients to the op's inputs.
BackwardRule = Callable[[np.ndarray, Callable[["Tensor", np.ndarray], None]], None]


class Tape:
    """Ordered record of operations for one forward pass.

    Used as a context manager::

        with Tape() as tape:
            out = matmul(x, w)
            ...
        tape.backward(loss)

    Records are appended in execution order, so the list is already
    topologically sorted; the backward pass walks it strictly in reverse.
    One tape belongs to one worker; nesting tapes on a thread is an error.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, BackwardRule]] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise ContractError("a tape is already active on this thread")
        _STATE.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _STATE.tape = None

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Tensor, backward: BackwardRule) -> None:
        output.is_leaf = False
        self._records.append((output, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate dLoss/dLeaf into every requires_grad leaf.

        Repeated calls accumulate further; callers reset grads between
        optimizer steps.
        """
        if loss.data.shape != (1, 1):
            raise ContractError(f"loss must be 1x1, got shape {loss.data.shape}")
        flowing: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        leaves: dict[int, tuple[Tensor, np.ndarray]] = {}

        def push(t: Tensor, g: np.ndarray) -> None:
            if t.is_leaf:
                if t.requires_grad:
                    hit = leaves.get(id(t))
                    leaves[id(t)] = (t, g if hit is None else hit[1] + g)
                return
            hit_g = flowing.get(id(t))
            flowing[id(t)] = g if hit_g is None else hit_g + g

        for output, rule in reversed(self._records):
            g = flowing.pop(id(output), None)
            if g is None:
                continue
            rule(g, push)

        for t, g in leaves.values():
            t.grad = g.copy() if t.grad is None else t.grad + g


def backward(loss: Tensor, tape: Tape) -> None:
    """Run the reverse pass of ``tape`` from the scalar ``loss``."""
    tape.backward(loss)


def _record(out: Tensor, rule: BackwardRule) -> Tensor:
    tape = _active_tape()
    if tape is not None:
        tape.record(out, rule)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product a @ b; backward is g@b.T into a and a.T@g into b."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def rule(g, push, a=a, b=b):
        push(a, g @ b.data.T)
        push(b, a.data.T @ g)

    return _record(out, rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a single-row operand broadcasts over the other's rows."""
    if a.shape != b.shape:
        if not (a.cols == b.cols and (a.rows == 1 or b.rows == 1)):
            raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not align")
    out = Tensor(a.data + b.data)

    def rule(g, push, a=a, b=b):
        ga = g.sum(axis=0, keepdims=True) if a.rows == 1 and g.shape[0] > 1 else g
        gb = g.sum(axis=0, keepdims=True) if b.rows == 1 and g.shape[0] > 1 else g
        push(a, ga)
        push(b, gb)

    return _record(out, rule)


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * c)

    def rule(g, push, x=x, c=c):
        push(x, g * c)

    return _record(out, rule)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    out = Tensor(np.where(mask, x.data, 0.0))

    def rule(g, push, x=x, mask=mask):
        push(x, g * mask)

    return _record(out, rule)


def transpose(x: Tensor) -> Tensor:
    out = Tensor(x.data.T.copy())

    def rule(g, push, x=x):
        push(x, g.T)

    return _record(out, rule)


def row_softmax(x: Tensor) -> Tensor:
    """Softmax over each row, stabilised by per-row max subtraction.

    Output rows sum to 1; backward applies the softmax Jacobian-vector
    product row by row: dx = s * (g - sum(g * s, row)).
    """
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s)

    def rule(g, push, x=x, s=s):
        dot = (g * s).sum(axis=1, keepdims=True)
        push(x, s * (g - dot))

    return _record(out, rule)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack the rows of ``parts`` in order; all parts share a column count."""
    if not parts:
        raise ContractError("concat_rows needs at least one tensor")
    width = parts[0].cols
    for p in parts:
        if p.cols != width:
            raise ShapeError(
                f"concat_rows: column counts differ, {parts[0].shape} vs {p.shape}"
            )
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    offsets = np.cumsum([0] + [p.rows for p in parts])

    def rule(g, push, parts=tuple(parts), offsets=offsets):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if hi > lo:
                push(p, g[lo:hi])

    return _record(out, rule)


def mean_rows(x: Tensor) -> Tensor:
    """Column-wise mean, a 1 x d row; the input must have at least one row."""
    if x.rows == 0:
        raise ShapeError(f"mean_rows: no rows to average, shape {x.shape}")
    out = Tensor(x.data.mean(axis=0, keepdims=True))

    def rule(g, push, x=x):
        push(x, np.repeat(g / x.rows, x.rows, axis=0))

    return _record(out, rule)


def sum_rows(x: Tensor) -> Tensor:
    """Column-wise sum, a 1 x d row.

    Accumulates strictly in ascending row order so the result is
    bit-identical to a plain sequential loop (numpy's reductions may
    reassociate additions).
    """
    if x.rows <= 1:
        out = Tensor(x.data.sum(axis=0, keepdims=True))
    else:
        acc = np.zeros((1, x.cols))
        for r in range(x.rows):
            np.add(acc, x.data[r], out=acc)
        out = Tensor(acc)

    def rule(g, push, x=x):
        push(x, np.repeat(g, x.rows, axis=0))

    return _record(out, rule)


def take_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows of ``x`` at ``indices`` (may be empty); backward scatters."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.rows):
        raise ShapeError(f"take_rows: index out of range for shape {x.shape}")
    out = Tensor(x.data[idx].reshape(len(idx), x.cols))

    def rule(g, push, x=x, idx=idx):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        push(x, gx)

    return _record(out, rule)


def take_cols(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather columns of ``x`` at ``indices``; backward scatters."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.cols):
        raise ShapeError(f"take_cols: index out of range for shape {x.shape}")
    out = Tensor(x.data[:, idx].reshape(x.rows, len(idx)))

    def rule(g, push, x=x, idx=idx):
        gx = np.zeros_like(x.data)
        np.add.at(gx.T, idx, g.T)
        push(x, gx)

    return _record(out, rule)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Zero entries with probability ``p`` and rescale survivors by 1/(1-p).

    Identity in eval mode or at p == 0; the caller owns the generator, so a
    fixed seed reproduces the mask sequence exactly.
    """
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    out = Tensor(x.data * keep)

    def rule(g, push, x=x, keep=keep):
        push(x, g * keep)

    return _record(out, rule)


def cross_entropy_with_logits(logits: Tensor, label: int) -> Tensor:
    """Cross-entropy of a 1 x C logit row: logsumexp(logits) - logits[label].

    Stable for extreme logits via max subtraction; backward is the classic
    softmax-minus-one-hot rule.
    """
    if logits.rows != 1:
        raise ShapeError(f"logits must be a single row, got {logits.shape}")
    if not 0 <= label < logits.cols:
        raise ContractError(f"label {label} outside [0, {logits.cols})")
    row = logits.data[0]
    m = row.max()
    lse = m + np.log(np.exp(row - m).sum())
    out = Tensor([[lse - row[label]]])

    def rule(g, push, logits=logits, label=label, row=row, m=m):
        s = np.exp(row - m)
        s /= s.sum()
        s[label] -= 1.0
        push(logits, g[0, 0] * s.reshape(1, -1))

    return _record(out, rule)
