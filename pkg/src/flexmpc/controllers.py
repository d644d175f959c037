"""Classical controllers and the controller interface.

A controller is an object with ``reset()`` and
``step(t, state, ref) -> ControllerOutput``; the closed-loop simulator calls
``step`` once per control period and applies the (saturated) sum of the slow
and fast command components as zero-order-hold motor torque.

Provided here: a motor-side PD (flexibility-blind baseline), the link-side
PD + inner torque loop of the two-time-scale design, and the filtered torque
differentiator they share.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .model import FullState, PlantParams, gravity_torque, joint_torque
from .sp_core import SpGains, motor_pd_gains, self_consistent_slow_torque

__all__ = [
    "ControllerOutput",
    "ReferenceSample",
    "ReferenceSource",
    "Controller",
    "motor_pd",
    "link_pd_torque",
    "sp_torque_control",
    "filtered_dtau",
    "MotorPdController",
    "SpController",
    "ZeroController",
]


@dataclass
class ControllerOutput:
    """Slow/fast split of the commanded motor torque, pre-saturation."""

    tau_m_slow: np.ndarray
    tau_m_fast: np.ndarray
    diagnostics: dict | None = None

    def __post_init__(self):
        self.tau_m_slow = np.atleast_1d(np.asarray(self.tau_m_slow, dtype=float))
        self.tau_m_fast = np.atleast_1d(np.asarray(self.tau_m_fast, dtype=float))
        if not (np.all(np.isfinite(self.tau_m_slow)) and np.all(np.isfinite(self.tau_m_fast))):
            raise ValueError("controller produced a non-finite command")

    @property
    def total(self) -> np.ndarray:
        return self.tau_m_slow + self.tau_m_fast


@dataclass(frozen=True)
class ReferenceSample:
    """Desired link position, velocity and acceleration at one instant."""

    q_d: np.ndarray
    dq_d: np.ndarray
    ddq_d: np.ndarray

    def __post_init__(self):
        for name in ("q_d", "dq_d", "ddq_d"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)


ReferenceSource = Callable[[float], ReferenceSample]


class Controller(Protocol):
    def reset(self) -> None: ...

    def step(self, t: float, state: FullState, ref: ReferenceSample) -> ControllerOutput: ...


def motor_pd(
    params: PlantParams, state: FullState, ref: ReferenceSample, k_p, k_d
) -> ControllerOutput:
    """Motor-side PD with static gravity/deflection compensation.

    Regulates theta towards theta_d = q_d + K^-1 g(q_d); the joint
    flexibility is otherwise ignored.  The whole command is slow.
    """
    g_d = gravity_torque(params, ref.q_d)
    theta_d = ref.q_d + g_d / params.K
    cmd = g_d + k_p * (theta_d - state.theta) + k_d * (ref.dq_d - state.dtheta)
    return ControllerOutput(tau_m_slow=cmd, tau_m_fast=np.zeros(params.n))


def link_pd_torque(
    state: FullState, ref: ReferenceSample, gains: SpGains, params: PlantParams
) -> np.ndarray:
    """Desired joint torque from the link-side PD tracking law.

    tau_d = g(q) + (M + B_d) q_d'' - K_q (q - q_d) - D_q (q' - q_d').
    """
    inertia = params.M_link + gains.B_d
    return (
        gravity_torque(params, state.q)
        + inertia * ref.ddq_d
        - gains.K_q * (state.q - ref.q_d)
        - gains.D_q * (state.dq - ref.dq_d)
    )


def sp_torque_control(tau_d, tau, dtau_filtered, gains: SpGains, tau_slow) -> ControllerOutput:
    """Inner torque PD around the desired torque, reported as slow + fast.

    Total command: tau_d + K_T (tau_d - tau) - eps*K_S * dtau.  The slow
    component is (I + K_T) tau_d - K_T tau_slow; the fast remainder damps the
    boundary layer.  Computing fast = total - slow keeps the split an exact
    identity.
    """
    tau_d = np.atleast_1d(np.asarray(tau_d, dtype=float))
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    dtau = np.atleast_1d(np.asarray(dtau_filtered, dtype=float))
    tau_slow = np.atleast_1d(np.asarray(tau_slow, dtype=float))
    total = tau_d + gains.K_T * (tau_d - tau) - gains.eps_K_S * dtau
    slow = (1.0 + gains.K_T) * tau_d - gains.K_T * tau_slow
    return ControllerOutput(tau_m_slow=slow, tau_m_fast=total - slow)


FilterState = tuple[np.ndarray, np.ndarray]


def filtered_dtau(
    tau_now, filter_state: FilterState | None, dt_ctrl: float, f_cut: float
) -> tuple[np.ndarray, FilterState]:
    """First-order low-pass filtered finite difference of a torque stream.

    d_k = (1 - a) d_{k-1} + a (tau_k - tau_{k-1}) / dt with
    a = dt*2*pi*f_cut / (1 + dt*2*pi*f_cut).  ``filter_state=None`` means
    zero initial state.
    """
    if f_cut <= 0.0:
        raise ValueError("f_cut must be positive")
    tau_now = np.atleast_1d(np.asarray(tau_now, dtype=float))
    if filter_state is None:
        filter_state = (np.zeros_like(tau_now), np.zeros_like(tau_now))
    tau_prev, d_prev = filter_state
    w = dt_ctrl * 2.0 * np.pi * f_cut
    alpha = w / (1.0 + w)
    d = (1.0 - alpha) * d_prev + alpha * (tau_now - tau_prev) / dt_ctrl
    return d, (tau_now, d)


@dataclass
class MotorPdController:
    """Stateless motor-side PD baseline; gains from the rigid-equivalent rule."""

    params: PlantParams
    omega_n: float = 14.0
    zeta: float = 0.7
    k_p: np.ndarray = field(init=False)
    k_d: np.ndarray = field(init=False)

    def __post_init__(self):
        self.k_p, self.k_d = motor_pd_gains(self.params, self.omega_n, self.zeta)

    def reset(self) -> None:
        pass

    def step(self, t: float, state: FullState, ref: ReferenceSample) -> ControllerOutput:
        return motor_pd(self.params, state, ref, self.k_p, self.k_d)


class SpController:
    """Link-side PD with the inner two-time-scale torque loop."""

    def __init__(
        self,
        params: PlantParams,
        gains: SpGains,
        dt_ctrl: float,
        f_cut: float = 100.0,
    ):
        self.params = params
        self.gains = gains
        self.dt_ctrl = dt_ctrl
        self.f_cut = f_cut
        self._filter: FilterState | None = None

    def reset(self) -> None:
        self._filter = None

    def step(self, t: float, state: FullState, ref: ReferenceSample) -> ControllerOutput:
        tau = joint_torque(self.params, state)
        tau_d = link_pd_torque(state, ref, self.gains, self.params)
        dtau, self._filter = filtered_dtau(tau, self._filter, self.dt_ctrl, self.f_cut)
        tau_slow = self_consistent_slow_torque(self.params, self.gains, tau_d, state.q, state.dq)
        return sp_torque_control(tau_d, tau, dtau, self.gains, tau_slow)


@dataclass
class ZeroController:
    """Commands zero torque; useful for unforced-plant runs and tests."""

    params: PlantParams

    def reset(self) -> None:
        pass

    def step(self, t: float, state: FullState, ref: ReferenceSample) -> ControllerOutput:
        z = np.zeros(self.params.n)
        return ControllerOutput(tau_m_slow=z, tau_m_fast=z.copy())
