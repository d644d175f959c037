"""Predictive torque control over the two-time-scale model family.

Three linear reference models are available for prediction:

* fast  -- boundary-layer torque dynamics, states [tau_fast, dtau_fast];
* slow  -- rigid-equivalent link dynamics, states [q, dq];
* full  -- complete elastic-joint dynamics, states [q, dq, theta, dtheta].

Each control cycle the selected model is discretized exactly (zero-order
hold), predictions over the horizon are condensed into a dense pair
(C_hat, D_hat), and a box-constrained QP over the input moves is solved.
The built-in plant has state-independent matrices, so the discretization and
condensing are cached; with configuration-dependent inertia they would be
rebuilt per cycle.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

from . import qp as qp_mod
from ._kernels_py import power_iteration
from .controllers import (
    ControllerOutput,
    ReferenceSample,
    ReferenceSource,
    filtered_dtau,
    link_pd_torque,
)
from .model import FullState, PlantParams, gravity_torque, joint_torque
from .simulate import ControllerInfeasibleError
from .sp_core import (
    SpGains,
    epsilon_from_stiffness,
    fast_loop_damping,
    inertia_shaping,
    outer_pd_gains,
    slow_torque,
)

__all__ = [
    "LinearModel",
    "DiscreteModel",
    "PredictionOperator",
    "MpcWeights",
    "MpcConfig",
    "build_fast_model",
    "build_slow_model",
    "build_full_model",
    "discretize_zoh",
    "condense",
    "assemble_qp",
    "MpcFastController",
    "MpcSlowController",
    "MpcFullController",
    "MPC_DEFAULTS",
]


@dataclass(frozen=True)
class LinearModel:
    """Continuous state-space model z' = A z + E u, y = C z + D u."""

    A: np.ndarray
    E: np.ndarray
    C: np.ndarray
    D: np.ndarray
    state_labels: tuple = ()
    output_labels: tuple = ()

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        E = np.atleast_2d(np.asarray(self.E, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        m = A.shape[0]
        if A.shape != (m, m):
            raise ValueError("A must be square")
        if E.shape[0] != m:
            raise ValueError("E row count must match A")
        if C.shape[1] != m:
            raise ValueError("C column count must match A")
        if D.shape != (C.shape[0], E.shape[1]):
            raise ValueError("D must be (outputs, inputs)")
        for name, val in (("A", A), ("E", E), ("C", C), ("D", D)):
            object.__setattr__(self, name, val)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.E.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class DiscreteModel:
    """Exact ZOH discretization of a LinearModel at step dt."""

    Ad: np.ndarray
    Ed: np.ndarray
    dt: float
    source: LinearModel


@dataclass(frozen=True)
class PredictionOperator:
    """Condensed prediction y_hat = C_hat z_k + D_hat u_hat.

    Stacks the outputs at steps k+1 .. k+N_P; inputs are free for N_C moves
    and held at the last move beyond (move blocking), which folds the tail
    into the last block column of D_hat.
    """

    C_hat: np.ndarray
    D_hat: np.ndarray
    N_P: int
    N_C: int

    @property
    def n_outputs_per_step(self) -> int:
        return self.C_hat.shape[0] // self.N_P

    @property
    def n_inputs_per_step(self) -> int:
        return self.D_hat.shape[1] // self.N_C


@dataclass(frozen=True)
class MpcWeights:
    """Per-output and per-input stage weights (repeated over the horizons)."""

    Q_y: np.ndarray
    Q_u: np.ndarray

    def __post_init__(self):
        Q_y = np.atleast_1d(np.asarray(self.Q_y, dtype=float))
        Q_u = np.atleast_1d(np.asarray(self.Q_u, dtype=float))
        if np.any(Q_y < 0.0) or np.any(Q_u < 0.0):
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "Q_y", Q_y)
        object.__setattr__(self, "Q_u", Q_u)


@dataclass(frozen=True)
class MpcConfig:
    """Horizon and weight configuration of one MPC variant."""

    N_P: int
    N_C: int
    Q_y: tuple
    Q_u: tuple
    preview: bool = True

    def __post_init__(self):
        if not (1 <= self.N_C <= self.N_P):
            raise ValueError("need 1 <= N_C <= N_P")

    def weights(self) -> MpcWeights:
        return MpcWeights(Q_y=np.asarray(self.Q_y), Q_u=np.asarray(self.Q_u))

    @classmethod
    def from_dict(cls, d: dict, variant: str) -> "MpcConfig":
        allowed = {"N_P", "N_C", "Q_y", "Q_u", "preview"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"mpc.{variant}: unknown keys {sorted(unknown)}")
        base = MPC_DEFAULTS[variant]
        merged = {
            "N_P": d.get("N_P", base.N_P),
            "N_C": d.get("N_C", base.N_C),
            "Q_y": tuple(d.get("Q_y", base.Q_y)),
            "Q_u": tuple(d.get("Q_u", base.Q_u)),
            "preview": d.get("preview", base.preview),
        }
        return cls(**merged)


# Default horizons, chosen empirically at the 1 kHz cycle: the fast variant
# must see roughly half an elastic-torque oscillation period to damp it,
# while the link-side variants need short horizons so their near-deadbeat
# weighting stays gentle enough not to excite the elastic mode.
MPC_DEFAULTS = {
    "mpc-fast": MpcConfig(N_P=100, N_C=5, Q_y=(1.0, 5e-3), Q_u=(1.3,)),
    "mpc-slow": MpcConfig(N_P=12, N_C=3, Q_y=(5.0, 1e-2), Q_u=(1e-5,)),
    "mpc-full": MpcConfig(N_P=15, N_C=3, Q_y=(60.0, 2e-2, 5e-4), Q_u=(2e-6,)),
}


def build_fast_model(params: PlantParams, state: FullState) -> LinearModel:
    """Boundary-layer torque dynamics: states [tau_fast, dtau_fast]."""
    n = params.n
    m_diag = np.diag(params.M_link)  # operating-point inertia M(q)
    minv = np.linalg.inv(m_diag)
    binv = np.diag(1.0 / params.B)
    kmat = np.diag(params.K)
    zero = np.zeros((n, n))
    eye = np.eye(n)
    A = np.block([[zero, eye], [-kmat @ (minv + binv), zero]])
    E = np.vstack([zero, kmat @ binv])
    C = np.eye(2 * n)
    D = np.zeros((2 * n, n))
    return LinearModel(A, E, C, D,
                       state_labels=("tau_fast", "dtau_fast"),
                       output_labels=("tau_fast", "dtau_fast"))


def build_slow_model(params: PlantParams, state: FullState) -> LinearModel:
    """Rigid-equivalent link dynamics: states [q, dq], gravity compensated outside."""
    n = params.n
    lumped_inv = np.linalg.inv(np.diag(params.M_link + params.B))
    cmat = np.zeros((n, n))  # Coriolis factorization is zero for constant inertia
    zero = np.zeros((n, n))
    eye = np.eye(n)
    A = np.block([[zero, eye], [zero, -lumped_inv @ cmat]])
    E = np.vstack([zero, lumped_inv])
    C = np.eye(2 * n)
    D = np.zeros((2 * n, n))
    return LinearModel(A, E, C, D,
                       state_labels=("q", "dq"),
                       output_labels=("q", "dq"))


def build_full_model(params: PlantParams, state: FullState) -> LinearModel:
    """Complete elastic dynamics: states [q, dq, theta, dtheta], outputs [q, dq, dtheta]."""
    n = params.n
    minv_k = np.diag(params.K / params.M_link)
    binv_k = np.diag(params.K / params.B)
    minv_c = np.zeros((n, n))
    zero = np.zeros((n, n))
    eye = np.eye(n)
    A = np.block([
        [zero, eye, zero, zero],
        [-minv_k, -minv_c, minv_k, zero],
        [zero, zero, zero, eye],
        [binv_k, zero, -binv_k, zero],
    ])
    E = np.vstack([zero, zero, zero, np.diag(1.0 / params.B)])
    C = np.zeros((3 * n, 4 * n))
    C[0:n, 0:n] = eye
    C[n:2 * n, n:2 * n] = eye
    C[2 * n:3 * n, 3 * n:4 * n] = eye
    D = np.zeros((3 * n, n))
    return LinearModel(A, E, C, D,
                       state_labels=("q", "dq", "theta", "dtheta"),
                       output_labels=("q", "dq", "dtheta"))


def discretize_zoh(model: LinearModel, dt: float) -> DiscreteModel:
    """Exact zero-order-hold discretization via the augmented matrix exponential."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    m, p = model.n_states, model.n_inputs
    aug = np.zeros((m + p, m + p))
    aug[:m, :m] = model.A
    aug[:m, m:] = model.E
    phi = expm(aug * dt)
    Ad = phi[:m, :m]
    Ed = phi[:m, m:]
    if not (np.all(np.isfinite(Ad)) and np.all(np.isfinite(Ed))):
        raise ValueError("discretization produced non-finite entries")
    return DiscreteModel(Ad=Ad, Ed=Ed, dt=dt, source=model)


def condense(dm: DiscreteModel, N_P: int, N_C: int) -> PredictionOperator:
    """Condense N_P-step predictions over N_C free moves into (C_hat, D_hat)."""
    if not (1 <= N_C <= N_P):
        raise ValueError("need 1 <= N_C <= N_P")
    model = dm.source
    if np.any(model.D != 0.0):
        raise ValueError("condensing assumes zero feedthrough")
    C = model.C
    r, m = C.shape
    p = dm.Ed.shape[1]

    # C @ Ad^i rows and the impulse blocks C @ Ad^d @ Ed
    c_pow = np.empty((N_P, r, m))
    acc = C @ dm.Ad
    impulse = np.empty((N_P, r, p))
    impulse[0] = C @ dm.Ed
    c_pow[0] = acc
    for i in range(1, N_P):
        impulse[i] = acc @ dm.Ed
        acc = acc @ dm.Ad
        c_pow[i] = acc
    impulse_cum = np.cumsum(impulse, axis=0)

    C_hat = c_pow.reshape(N_P * r, m)
    D_hat = np.zeros((N_P * r, N_C * p))
    for i in range(1, N_P + 1):
        ri = (i - 1) * r
        for j in range(1, min(i, N_C) + 1):
            cj = (j - 1) * p
            if j < N_C:
                D_hat[ri:ri + r, cj:cj + p] = impulse[i - j]
            else:
                # move blocking: the last move is held for steps beyond N_C
                D_hat[ri:ri + r, cj:cj + p] = impulse_cum[i - N_C]
    return PredictionOperator(C_hat=C_hat, D_hat=D_hat, N_P=N_P, N_C=N_C)


def assemble_qp(
    po: PredictionOperator,
    w: MpcWeights,
    z_k: np.ndarray,
    y_ref_stack: np.ndarray,
    u_prev_tail: np.ndarray | None,
    tau_max,
) -> qp_mod.BoxQp:
    """Condensed tracking objective as a box QP over the stacked moves.

    H = D_hat' Q_y D_hat + Q_u and f = D_hat' Q_y (C_hat z_k - y_ref); the
    bounds are +-tau_max per input per move.  ``u_prev_tail`` seeds the warm
    start and does not affect the minimizer.
    """
    r = po.n_outputs_per_step
    p = po.n_inputs_per_step
    if w.Q_y.shape[0] != r:
        raise ValueError(f"expected {r} output weights, got {w.Q_y.shape[0]}")
    if w.Q_u.shape[0] != p:
        raise ValueError(f"expected {p} input weights, got {w.Q_u.shape[0]}")
    y_ref_stack = np.asarray(y_ref_stack, dtype=float).ravel()
    if y_ref_stack.shape[0] != r * po.N_P:
        raise ValueError("y_ref_stack length must be n_outputs * N_P")
    qy = np.tile(w.Q_y, po.N_P)
    qu = np.tile(w.Q_u, po.N_C)
    H = po.D_hat.T @ (qy[:, None] * po.D_hat) + np.diag(qu)
    H = 0.5 * (H + H.T)
    err = po.C_hat @ np.asarray(z_k, dtype=float).ravel() - y_ref_stack
    f = po.D_hat.T @ (qy * err)
    bound = np.tile(np.atleast_1d(np.asarray(tau_max, dtype=float)), po.N_C)
    if bound.shape[0] != po.N_C * p:
        raise ValueError("tau_max must be scalar or one entry per input")
    warm = None
    if u_prev_tail is not None:
        warm = np.clip(np.asarray(u_prev_tail, dtype=float).ravel(), -bound, bound)
    return qp_mod.BoxQp(H=H, f=f, lb=-bound, ub=bound, warm_start=warm)


class _RefPreview:
    """Rolling cache of the stacked future references.

    Consecutive control cycles share all but one preview sample, so only the
    new tail sample is evaluated per cycle.
    """

    def __init__(self, source: ReferenceSource | None, preview: bool,
                 dt: float, N_P: int):
        self.source = source
        self.preview = preview and source is not None
        self.dt = dt
        self.N_P = N_P
        self.reset()

    def reset(self) -> None:
        self._cache: list[ReferenceSample] = []
        self._t_last: float | None = None

    def stacked(self, t: float, ref_now: ReferenceSample) -> list[ReferenceSample]:
        if not self.preview:
            return [ref_now] * self.N_P
        if self._t_last is not None and abs(t - self._t_last - self.dt) < 1e-9 * self.dt + 1e-15:
            self._cache = self._cache[1:]
            self._cache.append(self.source(t + self.N_P * self.dt))
        else:
            self._cache = [self.source(t + (i + 1) * self.dt) for i in range(self.N_P)]
        self._t_last = t
        return self._cache


def _shift_moves(u: np.ndarray, p: int) -> np.ndarray:
    """Warm start for the next cycle: drop the first move, repeat the last."""
    shifted = np.empty_like(u)
    shifted[:-p] = u[p:]
    shifted[-p:] = u[-p:]
    return shifted


class _MpcBase:
    """Shared machinery: cached discretization/condensing and the QP solve."""

    variant: str = ""

    def __init__(
        self,
        params: PlantParams,
        cfg: MpcConfig,
        dt_ctrl: float,
        reference_source: ReferenceSource | None = None,
        qp_tol: float = 1e-8,
        qp_max_iter: int = 1500,
    ):
        self.params = params
        self.cfg = cfg
        self.dt_ctrl = dt_ctrl
        self.reference_source = reference_source
        self.qp_tol = qp_tol
        self.qp_max_iter = qp_max_iter
        self._warm: np.ndarray | None = None
        self._preview = _RefPreview(reference_source, cfg.preview, dt_ctrl, cfg.N_P)
        model = self._build_model(params, FullState.zeros(params.n))
        self.prediction = condense(discretize_zoh(model, dt_ctrl), cfg.N_P, cfg.N_C)
        w = cfg.weights()
        self.weights = MpcWeights(
            Q_y=np.repeat(w.Q_y, params.n), Q_u=np.repeat(w.Q_u, params.n)
        )
        probe = assemble_qp(
            self.prediction, self.weights,
            np.zeros(model.n_states), np.zeros(model.n_outputs * cfg.N_P),
            None, params.tau_max,
        )
        self._hess_L = power_iteration(probe.H) * (1.0 + 1e-4)

    def _build_model(self, params: PlantParams, state: FullState) -> LinearModel:
        raise NotImplementedError

    def reset(self) -> None:
        self._warm = None
        self._preview.reset()

    def _solve(self, problem: qp_mod.BoxQp) -> qp_mod.QpSolution:
        self._last_problem = problem  # kept for offline reproduction / tests
        sol = qp_mod.solve_box_qp(
            problem, tol=self.qp_tol, max_iter=self.qp_max_iter, L=self._hess_L,
        )
        scale = 1.0 + float(np.max(np.abs(problem.f), initial=0.0))
        if sol.status == "infeasible-bounds" or not np.all(np.isfinite(sol.u_star)):
            raise ControllerInfeasibleError(f"{self.variant}: QP {sol.status}")
        if sol.status == "max-iter" and sol.kkt_residual > 1e-3 * scale:
            raise ControllerInfeasibleError(
                f"{self.variant}: QP did not converge (residual {sol.kkt_residual:.3e})"
            )
        self._warm = _shift_moves(sol.u_star, self.params.n)
        return sol

    @staticmethod
    def _diag(sol: qp_mod.QpSolution, problem: qp_mod.BoxQp) -> dict:
        return {
            "qp_iterations": sol.iterations,
            "qp_kkt_residual": sol.kkt_residual,
            "qp_cost": problem.cost(sol.u_star),
        }


class MpcFastController(_MpcBase):
    """Predictive damping of the torque boundary layer under an outer link PD.

    The slow command inverts the quasi-steady torque map so the elastic
    torque tracks the outer loop's desired torque; the QP drives the
    estimated boundary-layer state to zero while keeping the summed command
    inside the actuator bound.
    """

    variant = "mpc-fast"

    def __init__(
        self,
        params: PlantParams,
        cfg: MpcConfig,
        dt_ctrl: float,
        omega_n: float = 15.0,
        zeta: float = 1.0,
        f_cut: float = 100.0,
        reference_source: ReferenceSource | None = None,
        **kwargs,
    ):
        super().__init__(params, cfg, dt_ctrl, reference_source, **kwargs)
        # ideal torque tracking makes the link see tau_d directly, so the
        # outer PD is placed on the link inertia alone (B_d = 0)
        K_q, D_q = outer_pd_gains(params, np.zeros(params.n), omega_n, zeta)
        self.outer_gains = SpGains(
            K_q=K_q, D_q=D_q, K_T=np.zeros(params.n), K_S=np.zeros(params.n),
            epsilon=epsilon_from_stiffness(params.K, np.ones(params.n)),
            B_d=np.zeros(params.n),
            omega_n=omega_n, zeta=zeta, gamma_rf=np.inf, zeta_f=zeta,
        )
        self.f_cut = f_cut
        self._filter = None
        self._zero_ref = np.zeros(self.prediction.C_hat.shape[0])

    def _build_model(self, params, state):
        return build_fast_model(params, state)

    def reset(self) -> None:
        super().reset()
        self._filter = None

    def step(self, t: float, state: FullState, ref: ReferenceSample) -> ControllerOutput:
        params = self.params
        tau = joint_torque(params, state)
        tau_d = link_pd_torque(state, ref, self.outer_gains, params)
        n_vec = gravity_torque(params, state.q)
        tau_m_slow = params.B * (1.0 / params.M_link + 1.0 / params.B) * tau_d \
            - params.B / params.M_link * n_vec

        tau_fast = tau - tau_d
        if self._filter is None:
            # seed with the current value so the reference jump at start-up
            # does not masquerade as a huge torque derivative
            self._filter = (tau_fast, np.zeros(params.n))
        dtau_fast, self._filter = filtered_dtau(tau_fast, self._filter, self.dt_ctrl, self.f_cut)
        z = np.concatenate([tau_fast, dtau_fast])

        problem = assemble_qp(
            self.prediction, self.weights, z,
            self._zero_ref, self._warm, params.tau_max,
        )
        # the box constrains the total commanded torque: the fast move lives
        # in [-tau_max, tau_max] shifted by the slow feedforward, so the sum
        # respects the actuator bound by construction
        bound = np.tile(params.tau_max, self.cfg.N_C)
        offs = np.tile(tau_m_slow, self.cfg.N_C)
        problem = replace(problem, lb=-bound - offs, ub=bound - offs)
        sol = self._solve(problem)
        move = sol.u_star[: params.n]
        return ControllerOutput(
            tau_m_slow=tau_m_slow, tau_m_fast=move,
            diagnostics=self._diag(sol, problem),
        )


class MpcSlowController(_MpcBase):
    """Predictive link-position control with the inner fast torque feedback."""

    variant = "mpc-slow"

    def __init__(
        self,
        params: PlantParams,
        cfg: MpcConfig,
        dt_ctrl: float,
        gamma_rf: float = 2.0,
        zeta_f: float = 1.0,
        f_cut: float = 100.0,
        reference_source: ReferenceSource | None = None,
        **kwargs,
    ):
        super().__init__(params, cfg, dt_ctrl, reference_source, **kwargs)
        self.B_d, self.K_T = inertia_shaping(params, gamma_rf)
        self.eps_K_S = fast_loop_damping(params, self.B_d, zeta_f)
        self.f_cut = f_cut
        self._filter = None

    def _build_model(self, params, state):
        return build_slow_model(params, state)

    def reset(self) -> None:
        super().reset()
        self._filter = None

    def step(self, t: float, state: FullState, ref: ReferenceSample) -> ControllerOutput:
        params = self.params
        refs = self._preview.stacked(t, ref)
        y_ref = np.concatenate([np.concatenate([s.q_d, s.dq_d]) for s in refs])
        z = np.concatenate([state.q, state.dq])
        problem = assemble_qp(self.prediction, self.weights, z, y_ref, self._warm,
                              params.tau_max)
        grav = gravity_torque(params, state.q)
        if np.any(grav != 0.0):
            # the applied command is g(q) + move; shift the box accordingly
            bound = np.tile(params.tau_max, self.cfg.N_C)
            offs = np.tile(grav, self.cfg.N_C)
            problem = replace(problem, lb=-bound - offs, ub=bound - offs)
        sol = self._solve(problem)
        move = sol.u_star[: params.n]
        tau_m_slow = grav + move

        tau = joint_torque(params, state)
        tau_qss = slow_torque(params, tau_m_slow, state.q, state.dq)
        dtau, self._filter = filtered_dtau(tau, self._filter, self.dt_ctrl, self.f_cut)
        tau_m_fast = self.K_T * (tau_qss - tau) - self.eps_K_S * dtau
        return ControllerOutput(
            tau_m_slow=tau_m_slow, tau_m_fast=tau_m_fast,
            diagnostics=self._diag(sol, problem),
        )


class MpcFullController(_MpcBase):
    """Direct predictive motor-torque control over the complete elastic model."""

    variant = "mpc-full"

    def __init__(
        self,
        params: PlantParams,
        cfg: MpcConfig,
        dt_ctrl: float,
        reference_source: ReferenceSource | None = None,
        **kwargs,
    ):
        super().__init__(params, cfg, dt_ctrl, reference_source, **kwargs)

    def _build_model(self, params, state):
        return build_full_model(params, state)

    def step(self, t: float, state: FullState, ref: ReferenceSample) -> ControllerOutput:
        params = self.params
        refs = self._preview.stacked(t, ref)
        # outputs [q, dq, dtheta]; the motor velocity tracks the link velocity
        y_ref = np.concatenate(
            [np.concatenate([s.q_d, s.dq_d, s.dq_d]) for s in refs]
        )
        z = state.to_array()
        problem = assemble_qp(self.prediction, self.weights, z, y_ref, self._warm,
                              params.tau_max)
        grav = gravity_torque(params, state.q)
        if np.any(grav != 0.0):
            bound = np.tile(params.tau_max, self.cfg.N_C)
            offs = np.tile(grav, self.cfg.N_C)
            problem = replace(problem, lb=-bound - offs, ub=bound - offs)
        sol = self._solve(problem)
        move = sol.u_star[: params.n]
        return ControllerOutput(
            tau_m_slow=grav + move, tau_m_fast=np.zeros(params.n),
            diagnostics=self._diag(sol, problem),
        )
