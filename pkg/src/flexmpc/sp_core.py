"""Two-time-scale torque machinery and controller gain synthesis.

The elastic joint torque splits into a quasi-steady (slow) component that the
rigid-equivalent link dynamics would transmit, and a fast boundary-layer
component describing the deviation from it.  Inner torque feedback of the form

    tau_m = tau_d + K_T (tau_d - tau) - eps*K_S * dtau/dt

actively reduces the apparent motor inertia from B to B_d = B / gamma_rf when
K_T = B B_d^-1 - I, and damps the boundary layer.  All gains here are
synthesized from four design scalars: the outer-loop frequency ``omega_n`` and
damping ``zeta`` (pole placement on the reduced rigid model) and the inertia
reduction ratio ``gamma_rf`` with fast damping ratio ``zeta_f``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import PlantParams, coriolis_matrix, gravity_torque

__all__ = [
    "SpGains",
    "epsilon_from_stiffness",
    "slow_torque",
    "fast_torque",
    "reduced_inertia",
    "inertia_shaping",
    "fast_loop_damping",
    "outer_pd_gains",
    "motor_pd_gains",
    "synthesize_gains",
    "self_consistent_slow_torque",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpGains:
    """Synthesized two-time-scale controller gains (diagonal entries).

    ``K_S`` is stored such that the implemented damping gain is the product
    ``epsilon * K_S`` (exposed as :attr:`eps_K_S`).
    """

    K_q: np.ndarray
    D_q: np.ndarray
    K_T: np.ndarray
    K_S: np.ndarray
    epsilon: float
    B_d: np.ndarray
    omega_n: float
    zeta: float
    gamma_rf: float
    zeta_f: float

    def __post_init__(self):
        for name in ("K_q", "D_q", "K_T", "K_S", "B_d"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if np.any(arr < 0.0):
                raise ValueError(f"{name} entries must be nonnegative")
            object.__setattr__(self, name, arr)
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")

    @property
    def eps_K_S(self) -> np.ndarray:
        """Torque-derivative gain as implemented in the control law."""
        return self.epsilon * self.K_S

    def design_dict(self) -> dict:
        return {
            "omega_n": self.omega_n,
            "zeta": self.zeta,
            "gamma_rf": self.gamma_rf,
            "zeta_f": self.zeta_f,
        }


def epsilon_from_stiffness(K, K_eps) -> float:
    """Perturbation parameter from K = K_eps / eps^2, i.e. eps = sqrt(K_eps/K).

    When the per-joint ratios disagree the largest value is returned (and
    logged), which is the conservative choice for time-scale separation.
    """
    K = np.atleast_1d(np.asarray(K, dtype=float))
    K_eps = np.atleast_1d(np.asarray(K_eps, dtype=float))
    if np.any(K <= 0.0) or np.any(K_eps <= 0.0):
        raise ValueError("stiffness matrices must be positive definite")
    eps = np.sqrt(K_eps / K)
    if not np.allclose(eps, eps.flat[0], rtol=1e-12, atol=0.0):
        logger.debug("per-joint epsilon values disagree, using max: %s", eps)
        return float(eps.max())
    return float(eps.flat[0])


def slow_torque(params: PlantParams, tau_m_slow, q, dq) -> np.ndarray:
    """Quasi-steady elastic torque for a given slow motor-torque component.

    Evaluates (M^-1 + B^-1)^-1 (B^-1 tau_m_slow + M^-1 n) with
    n = C(q, q') q' + g(q).
    """
    tau_m_slow = np.atleast_1d(np.asarray(tau_m_slow, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    dq = np.atleast_1d(np.asarray(dq, dtype=float))
    n_vec = coriolis_matrix(params, q, dq) @ dq + gravity_torque(params, q)
    s = 1.0 / (1.0 / params.M_link + 1.0 / params.B)
    return s * (tau_m_slow / params.B + n_vec / params.M_link)


def fast_torque(tau, tau_slow) -> np.ndarray:
    """Boundary-layer torque component: deviation from the quasi-steady value."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    tau_slow = np.atleast_1d(np.asarray(tau_slow, dtype=float))
    if tau.shape != tau_slow.shape:
        raise ValueError("tau and tau_slow must have equal length")
    return tau - tau_slow


def reduced_inertia(B, K_T) -> np.ndarray:
    """Apparent motor inertia (I + K_T)^-1 B under torque feedback K_T."""
    B = np.asarray(B, dtype=float)
    K_T = np.asarray(K_T, dtype=float)
    if B.ndim == 2 or K_T.ndim == 2:
        B = np.atleast_2d(B)
        eye = np.eye(B.shape[0])
        gain = eye + (K_T if K_T.ndim == 2 else np.diag(np.atleast_1d(K_T)))
        return np.linalg.solve(gain, B)
    denom = 1.0 + np.atleast_1d(K_T)
    if np.any(denom == 0.0):
        raise ValueError("I + K_T is singular")
    return np.atleast_1d(B) / denom


def inertia_shaping(params: PlantParams, gamma_rf: float) -> tuple[np.ndarray, np.ndarray]:
    """Shaped inertia B_d = B / gamma_rf and the feedback K_T achieving it."""
    if gamma_rf < 1.0:
        raise ValueError("gamma_rf must be >= 1")
    B_d = params.B / gamma_rf
    K_T = np.full(params.n, gamma_rf - 1.0)
    return B_d, K_T


def fast_loop_damping(params: PlantParams, B_d, zeta_f: float) -> np.ndarray:
    """Torque-derivative gain product eps*K_S for a target boundary-layer damping.

    Closing the fast torque dynamics with the inner feedback places the fast
    poles at s^2 + 2 zeta_f w_f s + w_f^2 with
    w_f = sqrt(K (M^-1 + B_d^-1)), which gives eps*K_S = 2 zeta_f w_f B / K
    per joint.
    """
    if zeta_f <= 0.0:
        raise ValueError("zeta_f must be positive")
    B_d = np.atleast_1d(np.asarray(B_d, dtype=float))
    w_f = np.sqrt(params.K * (1.0 / params.M_link + 1.0 / B_d))
    return 2.0 * zeta_f * w_f * params.B / params.K


def outer_pd_gains(
    params: PlantParams, B_d, omega_n: float, zeta: float
) -> tuple[np.ndarray, np.ndarray]:
    """Link-side stiffness/damping placing the reduced-model poles.

    On the reduced rigid model with inertia M + B_d the tracking error obeys
    e'' + 2 zeta omega_n e' + omega_n^2 e = 0 when
    K_q = omega_n^2 (M + B_d) and D_q = 2 zeta omega_n (M + B_d).
    """
    if omega_n <= 0.0 or zeta <= 0.0:
        raise ValueError("omega_n and zeta must be positive")
    B_d = np.atleast_1d(np.asarray(B_d, dtype=float))
    inertia = params.M_link + B_d
    return omega_n**2 * inertia, 2.0 * zeta * omega_n * inertia


def motor_pd_gains(params: PlantParams, omega_n: float, zeta: float) -> tuple[np.ndarray, np.ndarray]:
    """Motor-side PD gains from the same placement rule on the rigid equivalent.

    The rigid equivalent lumps motor and link inertia, so
    K_p = omega_n^2 (M + B) and K_d = 2 zeta omega_n (M + B).
    """
    if omega_n <= 0.0 or zeta <= 0.0:
        raise ValueError("omega_n and zeta must be positive")
    inertia = params.M_link + params.B
    return omega_n**2 * inertia, 2.0 * zeta * omega_n * inertia


def synthesize_gains(
    params: PlantParams,
    omega_n: float,
    zeta: float,
    gamma_rf: float,
    zeta_f: float,
) -> SpGains:
    """Full gain set from the four design scalars."""
    B_d, K_T = inertia_shaping(params, gamma_rf)
    K_q, D_q = outer_pd_gains(params, B_d, omega_n, zeta)
    eps_K_S = fast_loop_damping(params, B_d, zeta_f)
    epsilon = epsilon_from_stiffness(params.K, np.ones(params.n))
    return SpGains(
        K_q=K_q,
        D_q=D_q,
        K_T=K_T,
        K_S=eps_K_S / epsilon,
        epsilon=epsilon,
        B_d=B_d,
        omega_n=omega_n,
        zeta=zeta,
        gamma_rf=gamma_rf,
        zeta_f=zeta_f,
    )


def self_consistent_slow_torque(
    params: PlantParams, gains: SpGains, tau_d, q, dq
) -> np.ndarray:
    """Quasi-steady torque consistent with the slow command it induces.

    The slow command (I + K_T) tau_d - K_T tau_slow and the quasi-steady map
    of :func:`slow_torque` define tau_slow implicitly; for diagonal plants the
    fixed point solves in closed form.
    """
    tau_d = np.atleast_1d(np.asarray(tau_d, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    dq = np.atleast_1d(np.asarray(dq, dtype=float))
    n_vec = coriolis_matrix(params, q, dq) @ dq + gravity_torque(params, q)
    s = 1.0 / (1.0 / params.M_link + 1.0 / params.B)
    s_binv = s / params.B
    numer = s_binv * (1.0 + gains.K_T) * tau_d + s * n_vec / params.M_link
    return numer / (1.0 + s_binv * gains.K_T)
