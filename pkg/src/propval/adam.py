"""Adam optimizer over :class:`~propval.autodiff.Tensor` leaves."""

from __future__ import annotations

import copy
from typing import Iterable

import numpy as np

from .autodiff import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


class AdamState:
    """First/second moment buffers with bias correction.

    Moments are keyed by parameter identity, so parameters introduced later
    (e.g. a freshly created monthly replica) start with their own zero
    moments and their own bias-correction count.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self._slots: dict[int, tuple[Tensor, np.ndarray, np.ndarray, list[int]]] = {}

    def __deepcopy__(self, memo):
        # slots are keyed by identity, so re-key them against the copied tensors
        new = AdamState(self.lr, self.beta1, self.beta2, self.eps)
        new.step_count = self.step_count
        for p, m, v, count in self._slots.values():
            q = copy.deepcopy(p, memo)
            new._slots[id(q)] = (q, m.copy(), v.copy(), list(count))
        return new

    def moments(self, p: Tensor) -> tuple[np.ndarray, np.ndarray]:
        _, m, v, _ = self._slots[id(p)]
        return m, v

    def forget(self, params: Iterable[Tensor]) -> None:
        for p in params:
            self._slots.pop(id(p), None)

    def step(self, params: Iterable[Tensor]) -> None:
        params = list(params)
        for p in params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"non-finite gradient in parameter {p.name!r}")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        for p in params:
            slot = self._slots.get(id(p))
            if slot is None:
                slot = (p, np.zeros_like(p.data), np.zeros_like(p.data), [0])
                self._slots[id(p)] = slot
            _, m, v, count = slot
            count[0] += 1
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** count[0])
            v_hat = v / (1.0 - b2 ** count[0])
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.grad.fill(0.0)


def adam_step(state: AdamState, params: Iterable[Tensor]) -> None:
    """Apply one Adam update to ``params`` using their accumulated gradients."""
    state.step(params)
