"""Deterministic propagation of the modified SEIR system.

One model time unit is integrated with a single 4th-order Runge-Kutta
step by default (a sub-step count is exposed for stiff rate regimes).
The output is the mean vector handed to the Dirichlet state transition,
so components are clamped away from 0 and 1 and renormalized.

States are arrays [S, E, I, R] on the simplex; any number of leading
axes is supported, so whole particle populations propagate in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Clamp bounds for propagated states: Dirichlet means must be strictly
# inside the simplex or the transition density degenerates.
STATE_FLOOR = 1e-10


@dataclass(frozen=True)
class EpidemicRates:
    """Rates of the modified SEIR flow.

    modifier scales the transmission term (1 = baseline, smaller values
    encode intervention-suppressed transmission).  Fields broadcast, so
    modifier may be an array aligned with a population of states.
    """

    alpha: float
    beta: float
    gamma: float
    modifier: float | np.ndarray = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.gamma > 0):
            raise ValueError("alpha, beta, gamma must be strictly positive")
        mod = np.asarray(self.modifier)
        if not np.all((mod > 0) & (mod <= 1)):
            raise ValueError("modifier must lie in (0, 1]")


def validate_state(state: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Check simplex constraints on [S, E, I, R] state array(s)."""
    s = np.asarray(state, dtype=float)
    if s.shape[-1] != 4:
        raise ValueError("state must have 4 components [S, E, I, R]")
    if not np.all(np.abs(s.sum(axis=-1) - 1.0) <= tol):
        raise ValueError("state components must sum to 1")
    if not np.all((s >= 0) & (s <= 1)):
        raise ValueError("state components must lie in [0, 1]")
    return s


def _flow(state: np.ndarray, rates: EpidemicRates) -> np.ndarray:
    """Time derivative of [S, E, I, R] under the modified SEIR system."""
    s = state[..., 0]
    e = state[..., 1]
    i = state[..., 2]
    infection = rates.modifier * rates.beta * s * i
    progression = rates.alpha * e
    recovery = rates.gamma * i
    return np.stack(
        [-infection, infection - progression, progression - recovery, recovery],
        axis=-1,
    )


def rk4_step(state: np.ndarray, rates: EpidemicRates, n_substeps: int = 1) -> np.ndarray:
    """Propagate state(s) one time unit with classical RK4.

    The flow's components sum to zero, so RK4 conserves the simplex sum
    exactly up to float rounding.  Output components are clamped to
    [STATE_FLOOR, 1 - STATE_FLOOR] and renormalized.
    """
    if n_substeps < 1:
        raise ValueError("n_substeps must be >= 1")
    th = np.asarray(state, dtype=float)
    h = 1.0 / n_substeps
    for _ in range(n_substeps):
        k1 = _flow(th, rates)
        k2 = _flow(th + 0.5 * h * k1, rates)
        k3 = _flow(th + 0.5 * h * k2, rates)
        k4 = _flow(th + h * k3, rates)
        th = th + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(th)):
        raise FloatingPointError(
            "RK4 produced non-finite state; rate combination is pathological"
        )
    th = np.clip(th, STATE_FLOOR, 1.0 - STATE_FLOOR)
    return th / th.sum(axis=-1, keepdims=True)


def propagate_path(
    initial: np.ndarray,
    rates_per_step: list[EpidemicRates],
    steps: int,
    n_substeps: int = 1,
) -> np.ndarray:
    """Iterate rk4_step, returning the sequence of post-step states.

    rates_per_step[j] applies over the step producing output j; the
    returned array has shape (steps, 4).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if len(rates_per_step) != steps:
        raise ValueError("need exactly one EpidemicRates per step")
    th = validate_state(initial)
    out = np.empty((steps, 4))
    for j in range(steps):
        try:
            th = rk4_step(th, rates_per_step[j], n_substeps=n_substeps)
        except FloatingPointError as exc:
            raise FloatingPointError(f"step {j}: {exc}") from exc
        out[j] = th
    return out
