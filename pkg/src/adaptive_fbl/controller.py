"""Composite tracking control law.

The control input is assembled from five parts:

    u = u_fbl + u_sfb + u_ref - u_gp - u_rob

    u_fbl = -w . phi(x)        cancels the estimated model dynamics
    u_sfb = k . e              linear state feedback on the tracking error
    u_ref = xdot_n_ref         feedforward of the reference derivative
    u_gp  = gp posterior mean  learned disturbance compensation
    u_rob = -m * sat(s / rho)  robustness term on s = b.T P e

The raw sign-type robustness term is undefined at s = 0 and chatters
under fixed-step integration, so inside |s| <= rho it is replaced by the
linear ramp -m*s/rho (standard boundary-layer smoothing).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .plant import integrator_chain


@dataclass
class ControllerConfig:
    """Gains and switches for the control law.

    gains is the error-feedback row vector; its length fixes the system
    order. q and r weight the matrix equation that produces P.
    """

    gains: np.ndarray = field(default_factory=lambda: np.array([20.0, 20.0]))
    m: float = 1.0
    rho: float = 0.01
    q: np.ndarray | None = None
    r: float = 0.01
    gp_enabled: bool = False
    rob_enabled: bool = True
    m_auto: bool = False

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        if self.gains.ndim != 1 or self.gains.size < 1:
            raise ValueError("gains must be a non-empty vector")
        if self.q is None:
            self.q = np.eye(self.gains.size)
        else:
            self.q = np.asarray(self.q, dtype=float)
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.m < 0 or self.r < 0:
            raise ValueError("m and r must be non-negative")

    @property
    def order(self) -> int:
        return self.gains.size


@dataclass(frozen=True)
class ControlBreakdown:
    """Per-component view of one control evaluation."""

    u_fbl: float
    u_sfb: float
    u_ref: float
    u_gp: float
    u_rob: float
    u_total: float


def closed_loop_matrix(cfg: ControllerConfig) -> np.ndarray:
    a, b = integrator_chain(cfg.order)
    return a - np.outer(b, cfg.gains)


def compute_P(cfg: ControllerConfig) -> np.ndarray:
    """Weighting matrix P from (A-bk).T P + P (A-bk) + Q + k.T R k = 0.

    Raises NotHurwitzError when the gains do not place all closed-loop
    poles in the open left half-plane.
    """
    s_tilde = weighting_matrix(cfg)
    return numerics.solve_lyapunov(closed_loop_matrix(cfg), s_tilde)


def weighting_matrix(cfg: ControllerConfig) -> np.ndarray:
    """S = Q + k.T R k, the decay-rate matrix paired with P."""
    return cfg.q + cfg.r * np.outer(cfg.gains, cfg.gains)


def sliding_variable(p: np.ndarray, e: np.ndarray) -> float:
    """s = b.T P e; with the integrator-chain b this is the last row of P e."""
    return float(p[-1] @ e)


def robustness_term(p: np.ndarray, e: np.ndarray, m: float, rho: float) -> float:
    """Boundary-layer robustness component; magnitude never exceeds m."""
    s = sliding_variable(p, e)
    if abs(s) > rho:
        return -m if s > 0 else m
    return -m * s / rho


def compute_control(
    cfg: ControllerConfig,
    p: np.ndarray,
    w: np.ndarray,
    phi: np.ndarray,
    e: np.ndarray,
    xdot_n_ref: float,
    gp_mean: float = 0.0,
    m_value: float | None = None,
) -> ControlBreakdown:
    """Assemble the control input from the current estimates and errors.

    gp_mean must be 0 when GP compensation is inactive. m_value overrides
    the configured robustness gain (used by the auto-gain mode).
    """
    u_fbl = -float(w @ phi)
    u_sfb = float(cfg.gains @ e)
    u_ref = float(xdot_n_ref)
    u_gp = float(gp_mean)
    if cfg.rob_enabled:
        m = cfg.m if m_value is None else m_value
        u_rob = robustness_term(p, e, m, cfg.rho)
    else:
        u_rob = 0.0
    u_total = u_fbl + u_sfb + u_ref - u_gp - u_rob
    return ControlBreakdown(u_fbl, u_sfb, u_ref, u_gp, u_rob, u_total)
