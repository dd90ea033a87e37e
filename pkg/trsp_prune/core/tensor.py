"""
Tensors, parameters and the reverse-mode differentiation tape.

Operations only record themselves while a :class:`Tape` is active and at least one input is a
:class:`Parameter` or was itself recorded on that tape. Outside a tape everything runs as plain
numpy arithmetic, which is what evaluation and benchmarking use.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NumericalError, TapeError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_TAPE_STACK: List["Tape"] = []
_MAC_COUNTERS: List["MacCounter"] = []


class Tensor:
    """Dense float64 array, row-major."""

    __slots__ = ("data", "name", "_tape")

    def __init__(self, data, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.name = name
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        """Return the value of a single-element tensor as a Python float."""
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other: "Tensor") -> "Tensor":
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        from . import ops

        return ops.mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from . import ops

        return ops.matmul(self, other)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"{type(self).__name__}(shape={self.shape}{label})"


class Parameter(Tensor):
    """A trainable tensor with a gradient slot of identical shape."""

    __slots__ = ("grad",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


@dataclass
class TapeEntry:
    """One recorded operation."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """
    Ordered record of differentiable operations.

    Entries are appended as operations execute, so they are in topological order;
    :meth:`backward` walks them in exact reverse. A tape can be differentiated once.
    """

    def __init__(self):
        self._entries: List[TapeEntry] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc_info) -> None:
        _TAPE_STACK.remove(self)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, fn: BackwardFn) -> None:
        if self._consumed:
            raise TapeError("Cannot record on a tape that has already been differentiated")
        output._tape = self
        self._entries.append(TapeEntry(op, inputs, output, fn))

    def tracks(self, tensor: Tensor) -> bool:
        """Whether gradients flow into ``tensor`` on this tape."""
        return isinstance(tensor, Parameter) or tensor._tape is self

    def backward(self, loss: Tensor) -> None:
        """
        Accumulate d(loss)/d(param) into every reachable parameter's ``grad``.

        Args:
            loss: Single-element tensor recorded on this tape

        Raises:
            TapeError: If the tape was already differentiated, the loss is not a scalar or it
                was recorded elsewhere
        """
        if self._consumed:
            raise TapeError("backward() already ran on this tape")
        if loss.size != 1:
            raise TapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("Loss was not recorded on this tape")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        params: Dict[int, Parameter] = {}
        for entry in reversed(self._entries):
            upstream = grads.pop(id(entry.output), None)
            if upstream is None:
                continue
            for tensor, grad in zip(entry.inputs, entry.backward(upstream)):
                if grad is None or not self.tracks(tensor):
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
                if isinstance(tensor, Parameter):
                    params[key] = tensor

        for key, param in params.items():
            param.grad += grads[key]

        self._entries.clear()
        self._consumed = True


def backward(loss: Tensor) -> None:
    """Differentiate ``loss`` on the tape that recorded it."""
    if loss._tape is None:
        raise TapeError("Loss was not recorded on any tape; run the forward inside `with Tape()`")
    loss._tape.backward(loss)


def active_tape(inputs: Sequence[Tensor]) -> Optional[Tape]:
    if not _TAPE_STACK:
        return None
    tape = _TAPE_STACK[-1]
    for tensor in inputs:
        if tape.tracks(tensor):
            return tape
    return None


def emit(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    """Wrap an op result, abort on non-finite values and record it when differentiable."""
    if not np.isfinite(data).all():
        bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
        logger.error("Operation %s produced %d non-finite values", op, bad)
        raise NumericalError(op, f"{bad} non-finite entries")
    out = Tensor(data)
    tape = active_tape(inputs)
    if tape is not None:
        tape.record(op, inputs, out, fn)
    return out


@dataclass
class MacCounter:
    """Multiply-accumulate operations performed by matmul while the counter is open."""

    macs: int = 0


@contextmanager
def count_macs() -> Iterator[MacCounter]:
    counter = MacCounter()
    _MAC_COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _MAC_COUNTERS.remove(counter)


def add_macs(n: int) -> None:
    for counter in _MAC_COUNTERS:
        counter.macs += n
