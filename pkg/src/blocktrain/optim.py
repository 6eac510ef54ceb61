"""Mini-batch SGD with classical momentum, one state per worker."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ParamVector, frozen

__all__ = ["SgdState", "sgd_step"]


@dataclass(frozen=True)
class SgdState:
    """Velocity buffer plus hyperparameters; owned exclusively by one worker."""

    velocity: ParamVector
    learning_rate: float
    momentum: float = 0.0

    def __post_init__(self) -> None:
        if not (self.learning_rate > 0.0 and np.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")

    @staticmethod
    def initial(length: int, learning_rate: float, momentum: float = 0.0) -> "SgdState":
        return SgdState(ParamVector.zeros(length), learning_rate, momentum)


def sgd_step(
    params: ParamVector, grad: ParamVector, state: SgdState
) -> tuple[ParamVector, SgdState]:
    """One momentum step.

    ``velocity' = momentum * velocity - learning_rate * grad`` and
    ``params' = params + velocity'``.
    """
    if len(params) != len(grad) or len(params) != len(state.velocity):
        raise ValueError(
            f"length mismatch: params {len(params)}, grad {len(grad)}, "
            f"velocity {len(state.velocity)}"
        )
    velocity = state.momentum * state.velocity.values - state.learning_rate * grad.values
    new_params = ParamVector(frozen(params.values + velocity))
    new_state = SgdState(
        ParamVector(frozen(velocity)), state.learning_rate, state.momentum
    )
    return new_params, new_state
