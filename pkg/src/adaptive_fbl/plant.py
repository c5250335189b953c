"""True system dynamics, the benchmark system, and the reference model.

The plant family is the single-input integrator chain

    xdot_i = x_{i+1}                 (i < n)
    xdot_n = w* . phi(x) + u + d(t, x)

with known regressor phi, unknown ideal weights w*, and an external
disturbance d. The built-in benchmark is a second-order system with

    phi(theta, thetadot) = [sin(theta), |thetadot|*theta, exp(theta*thetadot)]
    w* = [1, -1, 0.5]
    d  = cos(theta) + thetadot   switched on for 10 <= t <= 30, else 0
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteValueError

BENCHMARK_NAME = "benchmark_5717148"
BENCHMARK_IDEAL_WEIGHTS = np.array([1.0, -1.0, 0.5])
DISTURBANCE_START = 10.0
DISTURBANCE_END = 30.0


def integrator_chain(n: int) -> tuple[np.ndarray, np.ndarray]:
    """State matrix (superdiagonal ones) and input vector [0,...,0,1]."""
    if n < 1:
        raise ValueError("system order must be >= 1")
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    return a, b


@dataclass(frozen=True)
class Plant:
    """True dynamics: ideal weights, regressor, and disturbance function.

    Immutable after construction; safe to share across threads.
    """

    order: int
    ideal_weights: np.ndarray
    regressor: Callable[[np.ndarray], np.ndarray]
    disturbance: Callable[[float, np.ndarray], float]
    name: str = "custom"


@dataclass(frozen=True)
class ReferenceModel:
    """Reference trajectory t -> (x_ref, xdot_n_ref).

    Component i+1 of x_ref must be the time derivative of component i.
    """

    trajectory: Callable[[float], tuple[np.ndarray, float]]


def eval_regressor(plant: Plant, x: np.ndarray) -> np.ndarray:
    """Evaluate phi(x), raising NonFiniteValueError on overflow.

    A non-finite regressor means the state escaped the modelled envelope;
    the simulation must abort with a diagnostic rather than continue.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (plant.order,):
        raise ValueError(f"state must have length {plant.order}, got shape {x.shape}")
    phi = np.asarray(plant.regressor(x), dtype=float)
    if phi.shape != plant.ideal_weights.shape:
        raise ValueError(
            f"regressor returned {phi.shape}, expected {plant.ideal_weights.shape}"
        )
    if not np.all(np.isfinite(phi)):
        raise NonFiniteValueError(f"regressor overflow at state {x.tolist()}")
    return phi


def plant_derivative(plant: Plant, t: float, x: np.ndarray, u: float) -> np.ndarray:
    """Time derivative of the state under control input u."""
    x = np.asarray(x, dtype=float)
    phi = eval_regressor(plant, x)
    d = plant.disturbance(t, x)
    if not math.isfinite(d):
        raise NonFiniteValueError(f"disturbance non-finite at t={t:g}")
    xdot = np.empty(plant.order)
    xdot[:-1] = x[1:]
    xdot[-1] = float(plant.ideal_weights @ phi) + u + d
    return xdot


def eval_reference(ref: ReferenceModel, t: float) -> tuple[np.ndarray, float]:
    """Reference state and the derivative of its last component at time t."""
    x_ref, xdot_n_ref = ref.trajectory(t)
    return np.asarray(x_ref, dtype=float), float(xdot_n_ref)


def _benchmark_regressor(x: np.ndarray) -> np.ndarray:
    theta, theta_dot = float(x[0]), float(x[1])
    with np.errstate(over="ignore"):
        return np.array(
            [
                math.sin(theta),
                abs(theta_dot) * theta,
                np.exp(theta * theta_dot),
            ]
        )


def _benchmark_disturbance(t: float, x: np.ndarray) -> float:
    if DISTURBANCE_START <= t <= DISTURBANCE_END:
        return math.cos(float(x[0])) + float(x[1])
    return 0.0


def _zero_disturbance(t: float, x: np.ndarray) -> float:
    return 0.0


def benchmark_plant(disturbed: bool = True) -> Plant:
    """The built-in second-order benchmark system.

    With disturbed=False the external disturbance is identically zero;
    otherwise it follows the 10 s to 30 s activation window.
    """
    return Plant(
        order=2,
        ideal_weights=BENCHMARK_IDEAL_WEIGHTS.copy(),
        regressor=_benchmark_regressor,
        disturbance=_benchmark_disturbance if disturbed else _zero_disturbance,
        name=BENCHMARK_NAME,
    )


def sine_reference(amplitude: float = 0.5, omega: float = 1.0, order: int = 2) -> ReferenceModel:
    """Sinusoidal reference amplitude*sin(omega*t) and its derivative chain."""
    if amplitude <= 0 or omega <= 0:
        raise ValueError("amplitude and omega must be positive")

    def nth_derivative(t: float, k: int) -> float:
        # quarter-phase case analysis keeps zeros exact
        base = (math.sin, math.cos)[k % 2](omega * t)
        sign = -1.0 if k % 4 in (2, 3) else 1.0
        return amplitude * omega**k * sign * base

    def trajectory(t: float) -> tuple[np.ndarray, float]:
        x_ref = np.array([nth_derivative(t, k) for k in range(order)])
        return x_ref, nth_derivative(t, order)

    return ReferenceModel(trajectory=trajectory)


# selectable by name from the config file; custom regressors and
# trajectories are code-level extensions, not config
PLANTS = {BENCHMARK_NAME: benchmark_plant}
REFERENCES = {"sine": sine_reference}
