"""
Adam optimizer over :class:`~trsp_prune.core.tensor.Parameter` objects.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .tensor import Parameter


@dataclass
class ParamGroup:
    """
    Parameters sharing one learning rate.

    Attributes:
        params: Parameters updated by this group
        lr: Learning rate for the group
    """

    params: List[Parameter]
    lr: float


@dataclass
class _Moments:
    m: np.ndarray
    v: np.ndarray
    frozen: Optional[np.ndarray] = field(default=None)


class Adam:
    """
    Adam with bias correction. ``step()`` applies the update and zeroes gradients.
    """

    def __init__(
        self,
        params: Iterable[Parameter] = (),
        lr: float = 2e-5,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        """
        Initialize the optimizer.

        Args:
            params: Parameters of the default group
            lr: Learning rate of the default group
            betas: Exponential decay rates of the first and second moments
            eps: Denominator floor
        """
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.groups: List[ParamGroup] = []
        self._state: Dict[int, _Moments] = {}
        params = list(params)
        if params:
            self.add_param_group(params, lr)

    def add_param_group(self, params: Iterable[Parameter], lr: float) -> None:
        group = ParamGroup(list(params), lr)
        for p in group.params:
            if id(p) in self._state:
                raise ValueError(f"Parameter {p.name or p!r} is already handled by this optimizer")
            self._state[id(p)] = _Moments(np.zeros_like(p.data), np.zeros_like(p.data))
        self.groups.append(group)

    def freeze(self, param: Parameter, mask: np.ndarray) -> None:
        """
        Keep the entries of ``param`` selected by ``mask`` fixed.

        Their gradients are discarded and their moments reset, so the update is exactly zero.
        """
        state = self._state[id(param)]
        mask = np.asarray(mask, dtype=bool)
        state.m[mask] = 0.0
        state.v[mask] = 0.0
        state.frozen = mask

    @property
    def params(self) -> List[Parameter]:
        return [p for group in self.groups for p in group.params]

    def step(self) -> None:
        self.t += 1
        beta1, beta2 = self.betas
        bias1 = 1.0 - beta1**self.t
        bias2 = 1.0 - beta2**self.t
        for group in self.groups:
            for p in group.params:
                state = self._state[id(p)]
                g = p.grad
                if state.frozen is not None:
                    g = np.where(state.frozen, 0.0, g)
                state.m = beta1 * state.m + (1.0 - beta1) * g
                state.v = beta2 * state.v + (1.0 - beta2) * (g * g)
                m_hat = state.m / bias1
                v_hat = state.v / bias2
                p.data -= group.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def adam_step(
    params: Iterable[Parameter],
    lr: float = 2e-5,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    optimizer: Optional[Adam] = None,
) -> Adam:
    """
    Apply one Adam update and return the optimizer carrying the moment state.

    Pass the returned optimizer back in to continue the same trajectory.
    """
    if optimizer is None:
        optimizer = Adam(params, lr=lr, betas=betas, eps=eps)
    optimizer.step()
    return optimizer
