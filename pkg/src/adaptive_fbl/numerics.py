"""Dense linear algebra for small systems and fixed-step RK4 integration.

Everything here operates on plain numpy arrays. Matrices are tiny
(state order n <= 5, kernel windows ~100), so dense direct methods are
used throughout.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NonFiniteDerivativeError, NotHurwitzError, NotPositiveDefiniteError

SYMMETRY_RTOL = 1e-9


def default_jitter(m: np.ndarray) -> float:
    """Diagonal regularization used for kernel matrices: 1e-8 x mean diagonal."""
    return 1e-8 * float(np.mean(np.diag(m)))


def _require_square_symmetric(m: np.ndarray, what: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{what} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{what} has non-finite entries")
    scale = max(float(np.max(np.abs(m))), 1.0)
    if np.max(np.abs(m - m.T)) > SYMMETRY_RTOL * scale:
        raise ValueError(f"{what} is not symmetric to relative tolerance {SYMMETRY_RTOL}")
    return m


def cholesky(m: np.ndarray, jitter: float = 0.0) -> np.ndarray:
    """Lower-triangular factor L with L @ L.T = m + jitter * I.

    Raises NotPositiveDefiniteError if the shifted matrix still has a
    non-positive pivot, which signals a degenerate kernel/weighting matrix.
    """
    m = _require_square_symmetric(m, "cholesky input")
    shifted = m + jitter * np.eye(m.shape[0])
    try:
        return np.linalg.cholesky(shifted)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (jitter={jitter:g})"
        ) from exc


def solve_lyapunov(a_cl: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Solve a_cl.T @ P + P @ a_cl + s = 0 for symmetric positive definite P.

    Uses Kronecker vectorization of the n^2-dimensional linear system;
    fine for the small closed-loop matrices this package deals with.
    a_cl must be Hurwitz and s symmetric positive definite.
    """
    a_cl = np.asarray(a_cl, dtype=float)
    if a_cl.ndim != 2 or a_cl.shape[0] != a_cl.shape[1]:
        raise ValueError(f"a_cl must be square, got shape {a_cl.shape}")
    s = _require_square_symmetric(s, "s")
    if s.shape != a_cl.shape:
        raise ValueError("a_cl and s must have matching shapes")
    try:
        np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise ValueError("s must be positive definite") from exc

    eigs = np.linalg.eigvals(a_cl)
    if np.any(eigs.real >= 0.0):
        raise NotHurwitzError(f"a_cl has eigenvalues with real parts {sorted(eigs.real)}")

    n = a_cl.shape[0]
    eye = np.eye(n)
    # vec(A.T P) + vec(P A) = -vec(S), column-major vec convention
    coeff = np.kron(eye, a_cl.T) + np.kron(a_cl.T, eye)
    try:
        vec_p = np.linalg.solve(coeff, -s.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise NotHurwitzError("vectorized Lyapunov system is singular") from exc
    p = vec_p.reshape((n, n), order="F")
    p = 0.5 * (p + p.T)
    try:
        np.linalg.cholesky(p)
    except np.linalg.LinAlgError as exc:
        raise NotHurwitzError("solution is not positive definite") from exc
    return p


def rk4_step(
    f: Callable[[float, np.ndarray], np.ndarray],
    t: float,
    x: np.ndarray,
    h: float,
) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of size h."""
    if h <= 0.0:
        raise ValueError(f"step size must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(f(t, x))
    k2 = np.asarray(f(t + 0.5 * h, x + 0.5 * h * k1))
    k3 = np.asarray(f(t + 0.5 * h, x + 0.5 * h * k2))
    k4 = np.asarray(f(t + h, x + h * k3))
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise NonFiniteDerivativeError(f"non-finite derivative near t={t:g}")
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
