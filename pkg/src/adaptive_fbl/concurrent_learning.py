"""Online weight estimation driven by recorded data.

The estimate follows

    wdot = -gamma * phi(x) * (e.T P b) - gamma * sum_j phi_j * eps_j

where the sum runs over a finite stack of records (phi_j, xdot_n_j, u_j)
captured while the disturbance is inactive, and

    eps_j = w . phi_j - (xdot_n_j - u_j)

is the prediction error of the current estimate against record j. The
stored regressor phi_j appears inside the sum, which is what lets the
recorded data drive the weight error to zero without persistent
excitation: once the stacked regressors span weight space, the sum term
is a full-rank linear feedback on the weight error.

Records are selected to maximize the smallest singular value of the
stacked regressor matrix, so the convergence rate only improves as the
run proceeds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class Record(NamedTuple):
    phi: np.ndarray
    xdot_n: float
    u: float


@dataclass
class LearnerConfig:
    """Tuning knobs for the weight estimator."""

    gamma_w: float = 3.0
    stack_capacity: int = 35
    record_period: float = 0.05
    cl_enabled: bool = True

    def __post_init__(self):
        if self.gamma_w <= 0:
            raise ValueError("gamma_w must be positive")
        if self.stack_capacity < 1:
            raise ValueError("stack_capacity must be >= 1")
        if self.record_period <= 0:
            raise ValueError("record_period must be positive")


def stack_sigma_min(phi_matrix: np.ndarray) -> float:
    """Smallest singular value of the stacked regressors, as a map onto
    weight space: zero until the columns span all of it."""
    return _stack_metrics(phi_matrix)[1]


def _stack_metrics(phi_matrix: np.ndarray) -> tuple[int, float]:
    """(rank, sigma_min) of the stacked regressor matrix.

    sigma_min is the m-th singular value (zero while rank < m), so it is
    exactly the square root of the smallest eigenvalue of sum phi_j phi_j.T.
    Replacement quality compares rank first: building span dominates
    polishing the already-spanned directions.
    """
    m, p = phi_matrix.shape
    sv = np.linalg.svd(phi_matrix, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0, 0.0
    tol = max(m, p) * np.finfo(float).eps * sv[0]
    rank = int(np.sum(sv > tol))
    sigma_min = float(sv[-1]) if p >= m else 0.0
    return rank, sigma_min


class HistoryStack:
    """Bounded store of (phi, xdot_n, u) records with rank-seeking replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.records: list[Record] = []
        self.min_singular_value = 0.0
        self._phi_matrix: np.ndarray | None = None
        self._residual_rhs: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def phi_matrix(self) -> np.ndarray:
        """Stored regressors as columns, shape (m, len(stack))."""
        if self._phi_matrix is None:
            self._rebuild()
        return self._phi_matrix

    @property
    def residual_rhs(self) -> np.ndarray:
        """Per-record xdot_n - u, the recorded value of w* . phi_j."""
        if self._residual_rhs is None:
            self._rebuild()
        return self._residual_rhs

    def _rebuild(self):
        if self.records:
            self._phi_matrix = np.stack([r.phi for r in self.records], axis=1)
            self._residual_rhs = np.array([r.xdot_n - r.u for r in self.records])
        else:
            self._phi_matrix = np.zeros((0, 0))
            self._residual_rhs = np.zeros(0)

    def try_record(self, phi: np.ndarray, xdot_n: float, u: float) -> bool:
        """Offer a candidate record; returns True if it was stored.

        While the stack is filling every candidate is appended. Once full,
        the candidate replaces the record whose removal yields the best
        strict improvement of (rank, sigma_min); candidates that cannot
        improve it (including exact duplicates) are rejected.
        """
        phi = np.array(phi, dtype=float)
        rec = Record(phi, float(xdot_n), float(u))
        if len(self.records) < self.capacity:
            self.records.append(rec)
            self._phi_matrix = None
            self._residual_rhs = None
            self.min_singular_value = stack_sigma_min(self.phi_matrix)
            return True

        for stored in self.records:
            if np.array_equal(stored.phi, phi):
                return False

        trial = self.phi_matrix.copy()
        best_j = -1
        best_quality = _stack_metrics(trial)
        for j in range(self.capacity):
            saved = trial[:, j].copy()
            trial[:, j] = phi
            quality = _stack_metrics(trial)
            trial[:, j] = saved
            if quality > best_quality:
                best_j = j
                best_quality = quality
        if best_j < 0:
            return False
        self.records[best_j] = rec
        self._phi_matrix = None
        self._residual_rhs = None
        self.min_singular_value = best_quality[1]
        return True


@dataclass
class LearnerState:
    """Current weight estimate plus the machinery that updates it."""

    w: np.ndarray
    gamma_w: float
    stack: HistoryStack
    active: bool = True


def prediction_error(w: np.ndarray, record: Record) -> float:
    """eps_j = w . phi_j - (xdot_n_j - u_j); zero at the ideal weights."""
    return float(w @ record.phi) - (record.xdot_n - record.u)


def weight_update_derivative(
    state: LearnerState,
    phi_now: np.ndarray,
    e: np.ndarray,
    p: np.ndarray,
) -> np.ndarray:
    """Time derivative of the weight estimate; zero when learning is frozen."""
    if not state.active:
        return np.zeros_like(state.w)
    s = float(p[-1] @ e)
    wdot = -state.gamma_w * s * np.asarray(phi_now, dtype=float)
    stack = state.stack
    if len(stack):
        phi_m = stack.phi_matrix
        eps = phi_m.T @ state.w - stack.residual_rhs
        wdot = wdot - state.gamma_w * (phi_m @ eps)
    return wdot
