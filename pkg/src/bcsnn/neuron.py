"""Leaky integrate-and-fire dynamics.

Discrete membrane update with reset-by-subtraction::

    spike[t]  = 1 if u[t] > theta else 0
    u[t + 1]  = beta * u[t] + I[t] - spike[t] * theta

The ``(1 - beta)`` input gain of the RC discretisation is folded into the
learnable synaptic weights, so ``I[t]`` enters unscaled.

The Heaviside spike is not differentiable. During the backward pass it is
replaced by the fast sigmoid ``(u - theta) / (1 + k |u - theta|)`` whose
derivative is ``1 / (1 + k |u - theta|)**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidParameterError

__all__ = [
    "LifParams",
    "LifState",
    "beta_from_tau",
    "lif_step",
    "heaviside",
    "fast_sigmoid",
    "surrogate_grad",
]


@dataclass(frozen=True)
class LifParams:
    """Decay factor, firing threshold and surrogate slope."""

    beta: float = 0.9
    theta: float = 1.0
    slope_k: float = 25.0

    def __post_init__(self):
        if not (0.0 < self.beta <= 1.0):
            raise InvalidParameterError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.theta > 0.0:
            raise InvalidParameterError(f"theta must be positive, got {self.theta}")
        if not self.slope_k >= 0.0:
            raise InvalidParameterError(f"slope_k must be nonnegative, got {self.slope_k}")

    @classmethod
    def from_tau(cls, tau: float, dt: float = 1.0, **kwargs) -> "LifParams":
        return cls(beta=beta_from_tau(tau, dt), **kwargs)


@dataclass
class LifState:
    """Membrane potential of every neuron in a population."""

    u_mem: np.ndarray

    @classmethod
    def rest(cls, shape, dtype=np.float64) -> "LifState":
        return cls(np.zeros(shape, dtype=dtype))


def beta_from_tau(tau: float, dt: float = 1.0) -> float:
    """Exact per-step decay ``exp(-dt / tau)`` of the passive membrane."""
    if not (tau > 0 and dt > 0):
        raise InvalidParameterError(f"tau and dt must be positive, got tau={tau}, dt={dt}")
    return math.exp(-dt / tau)


def heaviside(u, params: LifParams) -> np.ndarray:
    """Strict threshold crossing ``u > theta`` as 0/1 values in the input dtype."""
    u = np.asarray(u)
    return (u > params.theta).astype(u.dtype if u.dtype.kind == "f" else np.float64)


def lif_step(state: LifState, input_current, params: LifParams) -> tuple[LifState, np.ndarray]:
    """Advance every neuron by one time step.

    The spike is decided on the membrane *before* this update and the reset is
    applied within the same update.

    Returns:
        ``(new_state, spikes)`` where ``spikes`` holds exact 0.0 / 1.0 values.
    """
    u = np.asarray(state.u_mem)
    current = np.asarray(input_current)
    if u.shape != current.shape:
        raise DimensionError(f"state has shape {u.shape} but input has shape {current.shape}")
    spikes = heaviside(u, params)
    u_next = params.beta * u + current - spikes * params.theta
    return LifState(u_next), spikes


def fast_sigmoid(u, params: LifParams):
    """Continuous stand-in for the spike function."""
    x = np.asarray(u) - params.theta
    return x / (1.0 + params.slope_k * np.abs(x))


def surrogate_grad(u, params: LifParams):
    """Derivative of :func:`fast_sigmoid` with respect to the membrane."""
    x = np.asarray(u) - params.theta
    return 1.0 / (1.0 + params.slope_k * np.abs(x)) ** 2
