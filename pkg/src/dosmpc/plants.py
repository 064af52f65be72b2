"""Built-in example plant: the two-input two-output unstable batch reactor,
stated in continuous time and discretized by zero-order hold."""
from __future__ import annotations

import numpy as np

from .lti import SystemModel, discretize

__all__ = ["batch_reactor_continuous", "batch_reactor"]

_A = np.array([
    [1.38, -0.2077, 6.715, -5.676],
    [-0.5814, -4.29, 0.0, 0.675],
    [1.067, 4.273, -6.654, 5.893],
    [0.048, 4.273, 1.343, -2.104],
])
_B = np.array([
    [0.0, 0.0],
    [5.679, 0.0],
    [1.136, -3.146],
    [1.136, 0.0],
])
_C = np.array([
    [1.0, 0.0, 1.0, -1.0],
    [0.0, 1.0, 0.0, 0.0],
])


def batch_reactor_continuous() -> SystemModel:
    """Continuous-time matrices; D defaults to zero."""
    return SystemModel(_A, _B, _C, np.zeros((2, 2)), dt=1.0)


def batch_reactor(dt: float = 0.1) -> SystemModel:
    """Discretized batch reactor (unstable open loop; n_x=4, n_u=2, n_y=2)."""
    return discretize(batch_reactor_continuous(), dt)
