"""Sliding-window Gaussian-process regression of the control-input mismatch.

Exact inference with a squared-exponential kernel. The model regresses
from system states to the target

    y = xdot_n_measured - w . phi(x) - u_applied

which algebraically equals d - (w - w*) . phi(x): the disturbance plus
whatever the weight estimate still gets wrong. Subtracting the posterior
mean of this quantity in the control law cancels both at once.

Hyperparameters (signal scale, length scale, noise scale) are refit by
multi-start gradient ascent on the log marginal likelihood. The noise
scale is a learned parameter with a small floor; a noise-free kernel
matrix is not invertible reliably enough for online use.

Predictions read a snapshot frozen at the last fit, so observations can
stream in between refits without perturbing the controller mid-step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import AllStartsFailedError, NotPositiveDefiniteError, UnfittedModelError

JITTER_REL = 1e-8
LOG_BOUND = 6.0  # |log hyperparam| cap during optimization


@dataclass(frozen=True)
class Hyperparams:
    """Squared-exponential kernel parameters.

    length_scale is a scalar (shared across input dimensions) or a vector
    with one entry per input dimension.
    """

    sigma_f: float = 1.0
    length_scale: float | np.ndarray = 1.0
    sigma_n: float = 0.1

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scale, dtype=float))
        object.__setattr__(self, "length_scale", ls)
        if self.sigma_f <= 0 or np.any(ls <= 0):
            raise ValueError("sigma_f and length scales must be positive")
        if self.sigma_n < 0:
            raise ValueError("sigma_n must be non-negative")

    def log_vector(self) -> np.ndarray:
        return np.concatenate(
            [[math.log(self.sigma_f)], np.log(self.length_scale), [math.log(max(self.sigma_n, 1e-300))]]
        )

    @staticmethod
    def from_log_vector(theta: np.ndarray) -> "Hyperparams":
        theta = np.asarray(theta, dtype=float)
        return Hyperparams(
            sigma_f=math.exp(theta[0]),
            length_scale=np.exp(theta[1:-1]),
            sigma_n=math.exp(theta[-1]),
        )


@dataclass
class GpConfig:
    """Scheduling and optimizer settings for the online model."""

    window: int = 100
    sample_period: float = 0.1
    refit_period: float = 0.5
    starts: int = 5
    max_iter: int = 100
    lengthscale_mode: str = "shared"
    sigma_n_floor: float = 1e-4
    paper_literal_sign: bool = False

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.sample_period <= 0 or self.refit_period <= 0:
            raise ValueError("sample and refit periods must be positive")
        if self.starts < 0:
            raise ValueError("starts must be >= 0")
        if self.lengthscale_mode not in ("shared", "per_dim"):
            raise ValueError("lengthscale_mode must be 'shared' or 'per_dim'")
        if self.sigma_n_floor <= 0:
            raise ValueError("sigma_n_floor must be positive")


def _scaled_sqdist(a: np.ndarray, b: np.ndarray, length_scale: np.ndarray) -> np.ndarray:
    """Pairwise squared distance after dividing each dimension by its scale."""
    sa = a / length_scale
    sb = b / length_scale
    d2 = (
        np.sum(sa**2, axis=1)[:, None]
        + np.sum(sb**2, axis=1)[None, :]
        - 2.0 * (sa @ sb.T)
    )
    return np.maximum(d2, 0.0)


def kernel(a: np.ndarray, b: np.ndarray, hyper: Hyperparams) -> float:
    """Squared-exponential covariance of two input vectors."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise ValueError("kernel inputs must have equal dimension")
    z = (a - b) / hyper.length_scale
    return hyper.sigma_f**2 * math.exp(-0.5 * float(z @ z))


def kernel_matrix(a: np.ndarray, b: np.ndarray, hyper: Hyperparams) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    return hyper.sigma_f**2 * np.exp(-0.5 * _scaled_sqdist(a, b, hyper.length_scale))


def _gram(x: np.ndarray, hyper: Hyperparams) -> tuple[np.ndarray, np.ndarray]:
    """Jittered noisy training matrix K + sigma_n^2 I and the plain K."""
    k = kernel_matrix(x, x, hyper)
    jitter = JITTER_REL * (hyper.sigma_f**2 + hyper.sigma_n**2)
    ky = k + (hyper.sigma_n**2 + jitter) * np.eye(x.shape[0])
    return ky, k


class _LmlPieces(tuple):
    """(value, chol, alpha, k) bundle shared between the likelihood value
    and its gradient so line searches can skip the gradient work."""

    __slots__ = ()


def _lml_value(x: np.ndarray, y: np.ndarray, hyper: Hyperparams) -> _LmlPieces:
    n = x.shape[0]
    ky, k = _gram(x, hyper)
    try:
        chol = np.linalg.cholesky(ky)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("kernel matrix is not positive definite") from exc
    alpha = cho_solve((chol, True), y)
    value = (
        -0.5 * float(y @ alpha)
        - float(np.sum(np.log(np.diag(chol))))
        - 0.5 * n * math.log(2.0 * math.pi)
    )
    return _LmlPieces((value, chol, alpha, k))


def _lml_gradient(x: np.ndarray, hyper: Hyperparams, pieces: _LmlPieces) -> np.ndarray:
    _, chol, alpha, k = pieces
    n = x.shape[0]
    ky_inv = cho_solve((chol, True), np.eye(n))
    a = np.outer(alpha, alpha) - ky_inv
    grads = [float(np.sum(a * k))]  # d/dlog sigma_f contributes 2K, times the 1/2 out front
    if hyper.length_scale.size == 1:
        d2 = _scaled_sqdist(x, x, hyper.length_scale)
        grads.append(0.5 * float(np.sum(a * (k * d2))))
    else:
        for i in range(hyper.length_scale.size):
            col = x[:, i : i + 1] / hyper.length_scale[i]
            d2_i = (col - col.T) ** 2
            grads.append(0.5 * float(np.sum(a * (k * d2_i))))
    grads.append(float(hyper.sigma_n**2 * np.trace(a)))
    return np.array(grads)


def log_marginal_likelihood(
    x: np.ndarray, y: np.ndarray, hyper: Hyperparams
) -> tuple[float, np.ndarray]:
    """Exact-GP log marginal likelihood and its gradient.

    The gradient is taken with respect to the log hyperparameters, ordered
    (log sigma_f, log length_scale..., log sigma_n).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    pieces = _lml_value(x, y, hyper)
    return pieces[0], _lml_gradient(x, hyper, pieces)


def training_target(
    xdot_n_measured: float, w: np.ndarray, phi: np.ndarray, u_applied: float
) -> float:
    """Regression target: measured state derivative minus the model's account.

    Equals the disturbance exactly when the weight estimate is ideal;
    otherwise the residual model error folds in as well.
    """
    return float(xdot_n_measured) - float(w @ phi) - float(u_applied)


class GpModel:
    """Exact GP over a sliding window with snapshot-based prediction."""

    def __init__(
        self,
        window: int = 100,
        hyper: Hyperparams | None = None,
        starts: int = 5,
        max_iter: int = 100,
        sigma_n_floor: float = 1e-4,
        per_dim_lengthscale: bool = False,
        seed: int = 0,
    ):
        self.window = window
        self.hyper = hyper if hyper is not None else Hyperparams()
        self.starts = starts
        self.max_iter = max_iter
        self.sigma_n_floor = sigma_n_floor
        self.per_dim_lengthscale = per_dim_lengthscale
        self.seed = seed
        self._inputs: list[np.ndarray] = []
        self._targets: list[float] = []
        self.needs_refit = False
        # snapshot frozen at the last fit
        self._snap_x: np.ndarray | None = None
        self._snap_chol: np.ndarray | None = None
        self._snap_alpha: np.ndarray | None = None
        self._snap_hyper: Hyperparams | None = None

    @classmethod
    def from_config(cls, cfg: GpConfig, seed: int = 0) -> "GpModel":
        return cls(
            window=cfg.window,
            starts=cfg.starts,
            max_iter=cfg.max_iter,
            sigma_n_floor=cfg.sigma_n_floor,
            per_dim_lengthscale=(cfg.lengthscale_mode == "per_dim"),
            seed=seed,
        )

    def __len__(self) -> int:
        return len(self._targets)

    @property
    def fitted(self) -> bool:
        return self._snap_chol is not None

    @property
    def inputs(self) -> np.ndarray:
        return np.array(self._inputs) if self._inputs else np.zeros((0, 0))

    @property
    def targets(self) -> np.ndarray:
        return np.array(self._targets)

    def observe(self, x: np.ndarray, y: float):
        """Append a training pair, evicting the oldest beyond the window."""
        self._inputs.append(np.array(x, dtype=float))
        self._targets.append(float(y))
        if len(self._targets) > self.window:
            self._inputs.pop(0)
            self._targets.pop(0)
        self.needs_refit = True

    def _clamp(self, theta: np.ndarray) -> np.ndarray:
        lo = np.full(theta.shape, -LOG_BOUND)
        lo[-1] = math.log(self.sigma_n_floor)  # the noise floor, not the generic bound
        return np.clip(theta, lo, LOG_BOUND)

    def _ascend(
        self, x: np.ndarray, y: np.ndarray, theta: np.ndarray
    ) -> tuple[float, np.ndarray] | None:
        """Backtracking gradient ascent from one start; None if it never
        produced a positive-definite kernel matrix.

        Steps follow the normalized gradient so one badly scaled axis
        (typically the noise scale) cannot stall the others; the trust
        step is halved on rejection and doubled after acceptance.
        Line-search candidates only evaluate the likelihood value; the
        gradient is computed once per accepted point.
        """
        theta = self._clamp(theta.copy())
        try:
            pieces = _lml_value(x, y, Hyperparams.from_log_vector(theta))
        except NotPositiveDefiniteError:
            return None
        value = pieces[0]
        grad = _lml_gradient(x, Hyperparams.from_log_vector(theta), pieces)
        step = 0.5
        for _ in range(self.max_iter):
            gnorm = float(np.linalg.norm(grad))
            if np.max(np.abs(grad)) < 1e-8:
                break
            direction = grad / gnorm
            moved = False
            while step > 1e-10:
                cand = self._clamp(theta + step * direction)
                hyper_cand = Hyperparams.from_log_vector(cand)
                try:
                    cand_pieces = _lml_value(x, y, hyper_cand)
                except NotPositiveDefiniteError:
                    step *= 0.5
                    continue
                if cand_pieces[0] > value:
                    theta, value = cand, cand_pieces[0]
                    grad = _lml_gradient(x, hyper_cand, cand_pieces)
                    moved = True
                    step = min(2.0 * step, 1.0)
                    break
                step *= 0.5
            if not moved:
                break
        return value, theta

    def _start_points(self, x: np.ndarray, y: np.ndarray, n_ls: int) -> list[np.ndarray]:
        incumbent = self.hyper.log_vector()
        if incumbent.size != n_ls + 2:
            # promote/demote the length-scale block to the requested layout
            ls = float(np.exp(np.mean(incumbent[1:-1])))
            incumbent = np.concatenate([[incumbent[0]], np.full(n_ls, math.log(ls)), [incumbent[-1]]])
        points = [incumbent]
        rng = np.random.default_rng(self.seed)
        y_scale = max(float(np.std(y)), 1e-3)
        if x.shape[0] > 1:
            diffs = x[:, None, :] - x[None, :, :]
            dists = np.sqrt(np.sum(diffs**2, axis=-1))
            d_scale = max(float(np.median(dists[dists > 0])) if np.any(dists > 0) else 1.0, 1e-3)
        else:
            d_scale = 1.0
        for _ in range(self.starts):
            theta = np.concatenate(
                [
                    [math.log(y_scale) + rng.uniform(-1.5, 1.5)],
                    math.log(d_scale) + rng.uniform(-1.5, 1.5, size=n_ls),
                    [math.log(y_scale) + rng.uniform(-4.5, -0.5)],
                ]
            )
            points.append(theta)
        return points

    def _rebuild_snapshot(self, x: np.ndarray, y: np.ndarray):
        ky, _ = _gram(x, self.hyper)
        chol = np.linalg.cholesky(ky)
        self._snap_x = x
        self._snap_chol = chol
        self._snap_alpha = cho_solve((chol, True), y)
        self._snap_hyper = self.hyper
        self.needs_refit = False

    def refresh(self) -> "GpModel":
        """Rebuild the prediction snapshot at the incumbent hyperparameters."""
        if not self._targets:
            raise ValueError("refresh requires at least 1 training point")
        self._rebuild_snapshot(np.array(self._inputs), np.array(self._targets))
        return self

    def fit(self) -> "GpModel":
        """Refit hyperparameters on the current window and rebuild the snapshot.

        The incumbent hyperparameters are one of the optimizer starts, so a
        fit never ends below the incumbent's likelihood. Raises
        AllStartsFailedError (keeping the previous state) if no start
        yields a positive-definite kernel matrix.
        """
        if len(self._targets) < 2:
            raise ValueError("fit requires at least 2 training points")
        x = np.array(self._inputs)
        y = np.array(self._targets)
        n_ls = x.shape[1] if self.per_dim_lengthscale else 1

        best: tuple[float, np.ndarray] | None = None
        for theta0 in self._start_points(x, y, n_ls):
            result = self._ascend(x, y, theta0)
            if result is not None and (best is None or result[0] > best[0]):
                best = result
        if best is None:
            raise AllStartsFailedError("no optimizer start produced a usable kernel matrix")

        self.hyper = Hyperparams.from_log_vector(best[1])
        self._rebuild_snapshot(x, y)
        return self

    def predict(self, x_star: np.ndarray) -> tuple[float, float]:
        """Posterior mean and variance at a query state.

        Uses the snapshot from the last fit; raises UnfittedModelError if
        the model was never fitted (callers substitute the zero prior mean).
        """
        if not self.fitted:
            raise UnfittedModelError("model has no fitted snapshot")
        x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
        hyper = self._snap_hyper
        k_star = kernel_matrix(self._snap_x, x_star[None, :], hyper)[:, 0]
        mean = float(k_star @ self._snap_alpha)
        v = solve_triangular(self._snap_chol, k_star, lower=True)
        var = hyper.sigma_f**2 - float(v @ v)
        return mean, max(var, 0.0)

    def predict_mean(self, x_star: np.ndarray) -> float:
        """Posterior mean only; the hot path inside integration stages."""
        if not self.fitted:
            raise UnfittedModelError("model has no fitted snapshot")
        hyper = self._snap_hyper
        z = (self._snap_x - x_star) / hyper.length_scale
        k_star = hyper.sigma_f**2 * np.exp(-0.5 * np.einsum("ij,ij->i", z, z))
        return float(k_star @ self._snap_alpha)
