"""Scenario runner for the five benchmark cases, metrics, and the
quadratic-form stability monitor.

A run has three stages on a fixed step grid:

    stage 1 (t < t1):   no disturbance; weight learning and recording
    stage 2 (t1..t2):   disturbance active; GP collects data, no compensation
    stage 3 (t >= t2):  GP compensates and keeps refitting

The cases differ in which learning pieces are active:

    a: no learning, fixed mismatched weights, no disturbance
    b: weight learning only, no disturbance
    c: weight learning only, disturbance active
    d: fixed mismatched weights, GP compensation, disturbance active
    e: weight learning and GP compensation, disturbance active

The plant state and the weight estimate are integrated together as one
RK4 state so everything advances at a single integration order. The
control law is evaluated inside every integrator stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .concurrent_learning import HistoryStack, LearnerConfig, LearnerState, weight_update_derivative
from .controller import (
    ControllerConfig,
    compute_control,
    compute_P,
    sliding_variable,
    weighting_matrix,
)
from .errors import StateEscapeError
from .gp import GpConfig, GpModel, training_target
from .numerics import rk4_step
from .plant import Plant, ReferenceModel, benchmark_plant, eval_regressor, sine_reference

CASE_IDS = ("a", "b", "c", "d", "e")
INITIAL_WEIGHT_ESTIMATE = np.array([0.5, -1.3, 0.75])
STATE_ESCAPE_LIMIT = 1e3
# Seconds dropped at each stage start in the metrics, leaving the steady
# tail of each stage. The dominant closed-loop pole at the standard gains
# is ~ -1.06 1/s, and the error inherited across a stage boundary needs
# ~8 time constants to fall below the learned-compensation floors the
# per-stage averages are meant to compare.
TRANSIENT_EXCLUDE = 8.0

# case id -> (weight learning, gp compensation, disturbance active)
CASE_FLAGS = {
    "a": (False, False, False),
    "b": (True, False, False),
    "c": (True, False, True),
    "d": (False, True, True),
    "e": (True, True, True),
}


@dataclass(frozen=True)
class Scenario:
    """One simulation case: stage boundaries, step size, and feature flags."""

    case_id: str
    cl_enabled: bool
    gp_enabled: bool
    disturbed: bool
    rob_enabled: bool = True
    duration: float = 30.0
    h: float = 1e-3
    t1: float = 10.0
    t2: float = 20.0
    w0: np.ndarray | None = None

    def __post_init__(self):
        if self.h <= 0 or self.duration <= 0:
            raise ValueError("h and duration must be positive")
        if not (0 < self.t1 <= self.t2):
            raise ValueError("stage boundaries must satisfy 0 < t1 <= t2")
        if self.w0 is not None:
            object.__setattr__(self, "w0", np.asarray(self.w0, dtype=float))


def scenario_for_case(case_id: str, **overrides) -> Scenario:
    """Standard scenario for one of the named cases."""
    if case_id not in CASE_FLAGS:
        raise ValueError(f"unknown case {case_id!r}, expected one of {CASE_IDS}")
    cl, gp, disturbed = CASE_FLAGS[case_id]
    return Scenario(case_id=case_id, cl_enabled=cl, gp_enabled=gp, disturbed=disturbed, **overrides)


@dataclass
class Trace:
    """Per-step record of one run, column-oriented."""

    case_id: str
    h: float
    t1: float
    t2: float
    w_star: np.ndarray
    ref_amplitude: float
    t: np.ndarray
    x: np.ndarray
    x_ref: np.ndarray
    e: np.ndarray
    u_total: np.ndarray
    u_fbl: np.ndarray
    u_sfb: np.ndarray
    u_ref: np.ndarray
    u_gp: np.ndarray
    u_rob: np.ndarray
    w: np.ndarray
    gp_mean: np.ndarray
    gp_var: np.ndarray
    d_true: np.ndarray
    v: np.ndarray
    vdot: np.ndarray
    stage: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.t.size

    def column_names(self) -> list[str]:
        n = self.x.shape[1]
        m = self.w.shape[1]
        names = ["t"]
        names += [f"x{i + 1}" for i in range(n)]
        names += [f"x{i + 1}_ref" for i in range(n)]
        names += [f"e{i + 1}" for i in range(n)]
        names += ["u_total", "u_fbl", "u_sfb", "u_ref", "u_gp", "u_rob"]
        names += [f"w{i + 1}" for i in range(m)]
        names += ["gp_mean", "gp_var", "d_true", "V", "Vdot", "stage"]
        return names

    def columns(self) -> list[np.ndarray]:
        cols: list[np.ndarray] = [self.t]
        cols += [self.x[:, i] for i in range(self.x.shape[1])]
        cols += [self.x_ref[:, i] for i in range(self.x_ref.shape[1])]
        cols += [self.e[:, i] for i in range(self.e.shape[1])]
        cols += [self.u_total, self.u_fbl, self.u_sfb, self.u_ref, self.u_gp, self.u_rob]
        cols += [self.w[:, i] for i in range(self.w.shape[1])]
        cols += [self.gp_mean, self.gp_var, self.d_true, self.v, self.vdot, self.stage]
        return cols


@dataclass(frozen=True)
class Metrics:
    """Tracking-error summary of one run."""

    case_id: str
    stage_error_pct: tuple[float, float, float]
    overall_error_pct: float
    final_weight_error: float


def average_error_pct(e1: np.ndarray, ref_amplitude: float) -> float:
    """Mean absolute first-state error as a percentage of the reference amplitude."""
    if e1.size == 0:
        return math.nan
    return float(np.mean(np.abs(e1))) / ref_amplitude * 100.0


def stage_masks(trace: Trace) -> list[np.ndarray]:
    """Row masks for the three stages, each excluding its first seconds of transient."""
    i = np.arange(trace.n_rows)
    i1 = int(round(trace.t1 / trace.h))
    i2 = int(round(trace.t2 / trace.h))
    excl = int(round(TRANSIENT_EXCLUDE / trace.h))
    return [
        (i >= excl) & (i < i1),
        (i >= i1 + excl) & (i < i2),
        (i >= i2 + excl),
    ]


def compute_metrics(trace: Trace, ref_amplitude: float) -> Metrics:
    """Per-stage and overall average tracking error, plus the final weight error.

    Stages that the run never reached come out as nan.
    """
    masks = stage_masks(trace)
    e1 = trace.e[:, 0]
    stage_vals = tuple(average_error_pct(e1[m], ref_amplitude) for m in masks)
    union = masks[0] | masks[1] | masks[2]
    overall = average_error_pct(e1[union], ref_amplitude)
    final_w = float(np.max(np.abs(trace.w[-1] - trace.w_star)))
    return Metrics(trace.case_id, stage_vals, overall, final_w)


def lyapunov_monitor(
    p: np.ndarray,
    s_tilde: np.ndarray,
    e: np.ndarray,
    bracket: float,
    u_rob: float,
    m: float,
    rho: float,
) -> tuple[float, float, bool]:
    """Quadratic-form value, its analytic rate, and the gain condition.

    bracket is the measured residual forcing (model error minus disturbance
    plus GP compensation); condition_ok means the robustness gain dominates
    it, which is when the rate is guaranteed negative outside |s| <= rho.
    """
    v = float(e @ (p @ e))
    s = sliding_variable(p, e)
    vdot = -float(e @ (s_tilde @ e)) + 2.0 * s * (bracket + u_rob)
    return v, vdot, m > abs(bracket)


def _validate(scenario: Scenario, cfg: ControllerConfig, learner: LearnerConfig):
    if cfg.gp_enabled != scenario.gp_enabled:
        raise ValueError("controller gp_enabled contradicts the scenario")
    if cfg.rob_enabled != scenario.rob_enabled:
        raise ValueError("controller rob_enabled contradicts the scenario")
    if learner.cl_enabled != scenario.cl_enabled:
        raise ValueError("learner cl_enabled contradicts the scenario")


def run_case(
    scenario: Scenario,
    cfg: ControllerConfig | None = None,
    learner: LearnerConfig | None = None,
    gp_cfg: GpConfig | None = None,
    seed: int = 0,
    plant: Plant | None = None,
    reference: ReferenceModel | None = None,
    ref_amplitude: float = 0.5,
    oracle_gp: bool = False,
    derivative_mode: str = "exact",
) -> tuple[Trace, Metrics]:
    """Simulate one case and return its trace and metrics.

    Deterministic for a fixed (scenario, configs, seed): the seed only
    feeds the GP hyperparameter optimizer starts. oracle_gp replaces the
    GP compensation with the exact residual (testing hook). With
    derivative_mode="fd" the measured state derivative used for records,
    GP targets, and the monitor is a backward difference instead of the
    exact plant evaluation.
    """
    if derivative_mode not in ("exact", "fd"):
        raise ValueError("derivative_mode must be 'exact' or 'fd'")
    if cfg is None:
        cfg = ControllerConfig(gp_enabled=scenario.gp_enabled, rob_enabled=scenario.rob_enabled)
    if learner is None:
        learner = LearnerConfig(cl_enabled=scenario.cl_enabled)
    if gp_cfg is None:
        gp_cfg = GpConfig()
    _validate(scenario, cfg, learner)

    if plant is None:
        plant = benchmark_plant(disturbed=scenario.disturbed)
    if reference is None:
        reference = sine_reference(amplitude=ref_amplitude)

    n = plant.order
    m_dim = plant.ideal_weights.size
    w0 = scenario.w0 if scenario.w0 is not None else INITIAL_WEIGHT_ESTIMATE.copy()
    if w0.shape != (m_dim,):
        raise ValueError(f"w0 must have length {m_dim}")

    p_mat = compute_P(cfg)
    s_tilde = weighting_matrix(cfg)
    w_star = plant.ideal_weights

    h = scenario.h
    n_steps = int(round(scenario.duration / h))
    i1 = int(round(scenario.t1 / h))
    i2 = int(round(scenario.t2 / h))
    rec_every = max(1, int(round(learner.record_period / h)))
    samp_every = max(1, int(round(gp_cfg.sample_period / h)))
    refit_every = max(1, int(round(gp_cfg.refit_period / h)))
    target_sign = -1.0 if gp_cfg.paper_literal_sign else 1.0

    stack = HistoryStack(learner.stack_capacity)
    lstate = LearnerState(w=w0.copy(), gamma_w=learner.gamma_w, stack=stack, active=scenario.cl_enabled)
    model = GpModel.from_config(gp_cfg, seed=seed) if scenario.gp_enabled and not oracle_gp else None

    rows = n_steps + 1
    tr = Trace(
        case_id=scenario.case_id,
        h=h,
        t1=scenario.t1,
        t2=scenario.t2,
        w_star=w_star.copy(),
        ref_amplitude=ref_amplitude,
        t=np.zeros(rows),
        x=np.zeros((rows, n)),
        x_ref=np.zeros((rows, n)),
        e=np.zeros((rows, n)),
        u_total=np.zeros(rows),
        u_fbl=np.zeros(rows),
        u_sfb=np.zeros(rows),
        u_ref=np.zeros(rows),
        u_gp=np.zeros(rows),
        u_rob=np.zeros(rows),
        w=np.zeros((rows, m_dim)),
        gp_mean=np.zeros(rows),
        gp_var=np.zeros(rows),
        d_true=np.zeros(rows),
        v=np.zeros(rows),
        vdot=np.zeros(rows),
        stage=np.zeros(rows, dtype=int),
    )

    x = np.zeros(n)
    w = w0.copy()
    running_mismatch = 0.0
    # half-step margin keeps the time gate in the derivative aligned with the
    # index gate used for rows, immune to float fuzz in i2 * h
    t2_gate = (i2 - 0.5) * h

    def gp_compensation(t: float, x_s: np.ndarray, w_s: np.ndarray, phi: np.ndarray) -> float:
        if not scenario.gp_enabled or t < t2_gate:
            return 0.0
        if oracle_gp:
            return plant.disturbance(t, x_s) - float((w_s - w_star) @ phi)
        if model is not None and model.fitted:
            return model.predict_mean(x_s)
        return 0.0

    def derivative(t: float, z: np.ndarray, m_value: float) -> np.ndarray:
        x_s = z[:n]
        w_s = z[n:]
        x_ref, xdot_n_ref = reference.trajectory(t)
        e = x_ref - x_s
        phi = eval_regressor(plant, x_s)
        g = gp_compensation(t, x_s, w_s, phi)
        bd = compute_control(cfg, p_mat, w_s, phi, e, xdot_n_ref, g, m_value=m_value)
        zdot = np.empty(n + m_dim)
        zdot[: n - 1] = x_s[1:]
        zdot[n - 1] = float(w_star @ phi) + bd.u_total + plant.disturbance(t, x_s)
        if scenario.cl_enabled and t < scenario.t1:
            lstate.w = w_s
            zdot[n:] = weight_update_derivative(lstate, phi, e, p_mat)
        else:
            zdot[n:] = 0.0
        return zdot

    prev_xn = None
    for i in range(rows):
        t = i * h
        if np.max(np.abs(x)) > STATE_ESCAPE_LIMIT:
            raise StateEscapeError(
                f"state left |x| <= {STATE_ESCAPE_LIMIT:g} at t={t:g}: {x.tolist()}"
            )

        if (
            model is not None
            and i >= i2
            and (i - i2) % refit_every == 0
            and len(model) >= 2
        ):
            model.fit()

        x_ref, xdot_n_ref = reference.trajectory(t)
        e = x_ref - x
        phi = eval_regressor(plant, x)
        d_now = plant.disturbance(t, x)

        if model is not None and model.fitted:
            gp_mean_row, gp_var_row = model.predict(x)
        else:
            gp_mean_row, gp_var_row = 0.0, 0.0
        if oracle_gp and scenario.gp_enabled and i >= i2:
            gp_mean_row = plant.disturbance(t, x) - float((w - w_star) @ phi)
            gp_var_row = 0.0
        compensating = scenario.gp_enabled and i >= i2 and (oracle_gp or (model is not None and model.fitted))
        g_control = gp_mean_row if compensating else 0.0

        m_value = cfg.m
        if cfg.m_auto:
            m_value = min(max(1.1 * running_mismatch, 0.1), 10.0)

        bd = compute_control(cfg, p_mat, w, phi, e, xdot_n_ref, g_control, m_value=m_value)

        if derivative_mode == "fd" and prev_xn is not None:
            xdot_n_meas = (x[-1] - prev_xn) / h
        else:
            xdot_n_meas = float(w_star @ phi) + bd.u_total + d_now
        bracket = float(w @ phi) + bd.u_total + bd.u_gp - xdot_n_meas
        v_val, vdot_val, _ = lyapunov_monitor(p_mat, s_tilde, e, bracket, bd.u_rob, m_value, cfg.rho)

        tr.t[i] = t
        tr.x[i] = x
        tr.x_ref[i] = x_ref
        tr.e[i] = e
        tr.u_total[i] = bd.u_total
        tr.u_fbl[i] = bd.u_fbl
        tr.u_sfb[i] = bd.u_sfb
        tr.u_ref[i] = bd.u_ref
        tr.u_gp[i] = bd.u_gp
        tr.u_rob[i] = bd.u_rob
        tr.w[i] = w
        tr.gp_mean[i] = gp_mean_row
        tr.gp_var[i] = gp_var_row
        tr.d_true[i] = d_now
        tr.v[i] = v_val
        tr.vdot[i] = vdot_val
        tr.stage[i] = 1 if i < i1 else (2 if i < i2 else 3)

        running_mismatch = max(running_mismatch, abs(bracket))

        if scenario.cl_enabled and i < i1 and i % rec_every == 0:
            stack.try_record(phi, xdot_n_meas, bd.u_total)
        if model is not None and i >= i1 and (i - i1) % samp_every == 0:
            model.observe(x, target_sign * training_target(xdot_n_meas, w, phi, bd.u_total))

        if i < n_steps:
            prev_xn = x[-1]
            z = rk4_step(lambda tt, zz: derivative(tt, zz, m_value), t, np.concatenate([x, w]), h)
            x = z[:n]
            w = z[n:]

    return tr, compute_metrics(tr, ref_amplitude)
