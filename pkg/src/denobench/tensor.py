"""Dense float32 tensors and the tape that records operations on them.

The engine is deliberately small: a Tensor is a numpy array plus a grad
buffer, and a Tape is an append-only list of executed operations. Because
operators append nodes in execution order, the tape is already topologically
sorted and the backward pass is a single reversed sweep. There is no global
registry; callers pass a tape explicitly to every operator, so evaluation
without recording is just ``tape=None`` and two tapes never interact.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = ["ShapeError", "Tensor", "TapeNode", "Tape", "backward"]


class ShapeError(ValueError):
    """An operator rejected the shape or rank of one of its inputs."""


class Tensor:
    """Rank <= 4 dense float32 array.

    Rank-4 tensors are interpreted as (N, C, H, W) image batches throughout
    the package. ``grad`` stays None until a backward pass (or ``zero_grad``)
    allocates it; gradients accumulate additively across backward calls.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim > 4:
            raise ShapeError(f"tensors are limited to rank 4, got rank {arr.ndim}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        """Allocate (or reset) the grad buffer to zeros."""
        self.grad = np.zeros_like(self.data)

    def detach_copy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


class TapeNode:
    """One recorded operation: inputs, output, and a vector-Jacobian callback.

    ``backward_fn`` maps the adjoint of the output to a tuple of adjoints
    aligned with ``inputs`` (None marks an input that needs no gradient).
    """

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(
        self,
        op: str,
        inputs: Sequence[Tensor],
        output: Tensor,
        backward_fn: Callable[[np.ndarray], tuple],
    ):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Append-only record of operations, in execution (topological) order."""

    __slots__ = ("nodes", "_produced")

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._produced: set[int] = set()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(
        self,
        op: str,
        inputs: Sequence[Tensor],
        output: Tensor,
        backward_fn: Callable[[np.ndarray], tuple],
    ) -> None:
        self.nodes.append(TapeNode(op, inputs, output, backward_fn))
        self._produced.add(id(output))

    def needs_grad(self, t: Tensor) -> bool:
        """True if a gradient must flow to ``t``.

        Either the tensor is a trainable leaf, or it was produced by an
        earlier node on this tape (so upstream inputs may still need it).
        Operators use this at record time to skip dead gradient branches.
        """
        return t.requires_grad or id(t) in self._produced


def backward(tape: Tape, loss: Tensor, seed: np.ndarray | None = None) -> None:
    """Reverse sweep over ``tape`` starting from ``loss``.

    Accumulates into ``.grad`` of every ``requires_grad`` tensor reached.
    ``loss`` must be scalar unless ``seed`` supplies an explicit output
    adjoint of the same shape (used for vector-Jacobian products in tests).
    Tensors the loss does not depend on are simply never visited; their grad
    buffers are untouched, which a prior ``zero_grad`` makes an exact zero.
    """
    if seed is None:
        if loss.data.size != 1:
            raise ValueError(
                f"backward needs a scalar loss, got shape {loss.data.shape}; "
                "pass seed= for vector-Jacobian products"
            )
        seed = np.ones_like(loss.data)
    else:
        seed = np.asarray(seed, dtype=np.float32)
        if seed.shape != loss.data.shape:
            raise ShapeError(
                f"seed shape {seed.shape} does not match output shape {loss.data.shape}"
            )

    grads: dict[int, np.ndarray] = {id(loss): seed.copy()}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue  # not on any path from the loss
        input_grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, input_grads):
            if gi is None:
                continue
            if t.requires_grad:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += gi
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
