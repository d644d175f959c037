"""Experiment harness: reference generators, protocols, metrics and sweeps.

The five protocols are desk-scale simulations: a position step, a smooth
(septic) step, a frequency-swept sinusoid (chirp), an external impact pulse
and a plain hold.  On top of them sit the two parameter studies: the
two-time-scale validity map over (stiffness, inertia-reduction ratio,
outer-loop frequency) and the horizon feasibility map over (N_P, N_C) with a
per-cycle compute budget.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .controllers import (
    Controller,
    MotorPdController,
    ReferenceSample,
    ReferenceSource,
    SpController,
)
from .model import FullState, PlantParams, gravity_torque
from .mpc import (
    MPC_DEFAULTS,
    MpcConfig,
    MpcFastController,
    MpcFullController,
    MpcSlowController,
)
from .simulate import (
    ExternalTorqueEvent,
    IntegrationDivergedError,
    SimConfig,
    TraceLog,
    run_closed_loop,
)
from .sp_core import synthesize_gains

__all__ = [
    "ScenarioConfig",
    "SweepResult",
    "SweepCell",
    "septic_trajectory",
    "chirp_trajectory",
    "make_reference",
    "make_controller",
    "run_scenario",
    "rmse",
    "scenario_metrics",
    "rigid_reference_response",
    "sp_validity_sweep",
    "horizon_feasibility_sweep",
    "DESIGN_DEFAULTS",
]

SCENARIO_KINDS = ("step", "smooth-step", "chirp", "impact", "hold")
CONTROLLER_NAMES = ("motor-pd", "sp", "mpc-fast", "mpc-slow", "mpc-full")

# Controller design scalars used in the experiments (overridable per config).
DESIGN_DEFAULTS = {
    "motor-pd": {"omega_n": 14.0, "zeta": 0.7},
    "sp": {"omega_n": 15.0, "zeta": 1.0, "gamma_rf": 2.0, "zeta_f": 1.0},
    "mpc-fast": {"omega_n": 15.0, "zeta": 1.0},
    "mpc-slow": {"gamma_rf": 2.0, "zeta_f": 1.0},
    "mpc-full": {},
}

_DEFAULT_T_END = {"step": 5.0, "smooth-step": 4.0, "chirp": 20.0, "impact": 3.0, "hold": 1.0}
_DEFAULT_T = {"step": 5.0, "smooth-step": 2.0, "chirp": 20.0, "impact": 3.0, "hold": 1.0}


def septic_trajectory(q0, q1, T: float, t: float) -> ReferenceSample:
    """Seventh-order point-to-point profile, zero vel/acc/jerk at both ends."""
    if T <= 0.0:
        raise ValueError("T must be positive")
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))
    q1 = np.atleast_1d(np.asarray(q1, dtype=float))
    x = min(max(t / T, 0.0), 1.0)
    s = x**4 * (35.0 - 84.0 * x + 70.0 * x**2 - 20.0 * x**3)
    ds = 140.0 * x**3 * (1.0 - x) ** 3
    dds = x**2 * (420.0 - 1680.0 * x + 2100.0 * x**2 - 840.0 * x**3)
    span = q1 - q0
    return ReferenceSample(
        q_d=q0 + span * s,
        dq_d=span * ds / T,
        ddq_d=span * dds / T**2,
    )


def chirp_trajectory(A, f0: float, f1: float, T: float, t: float) -> ReferenceSample:
    """Linear chirp A sin(2 pi (f0 t + (f1-f0) t^2 / 2T)) with analytic derivatives.

    Past the sweep end the reference holds the final position at rest.
    """
    if T <= 0.0:
        raise ValueError("T must be positive")
    A = np.atleast_1d(np.asarray(A, dtype=float))
    tc = min(max(t, 0.0), T)
    phase = 2.0 * np.pi * (f0 * tc + (f1 - f0) * tc**2 / (2.0 * T))
    if t > T:
        zero = np.zeros_like(A)
        return ReferenceSample(q_d=A * np.sin(phase), dq_d=zero, ddq_d=zero)
    dphase = 2.0 * np.pi * (f0 + (f1 - f0) * tc / T)
    ddphase = 2.0 * np.pi * (f1 - f0) / T
    return ReferenceSample(
        q_d=A * np.sin(phase),
        dq_d=A * dphase * np.cos(phase),
        ddq_d=A * (ddphase * np.cos(phase) - dphase**2 * np.sin(phase)),
    )


@dataclass(frozen=True)
class ScenarioConfig:
    """One experiment: plant, timing, controller and reference protocol."""

    kind: str = "step"
    controller: str = "sp"
    amplitude: float = 0.26
    T: float | None = None
    f0: float = 0.0
    f1: float = 4.0
    impact: ExternalTorqueEvent | None = None
    plant: PlantParams = field(default_factory=PlantParams.canonical)
    sim: SimConfig | None = None
    gains: dict = field(default_factory=dict)
    mpc: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.controller not in CONTROLLER_NAMES:
            raise ValueError(f"unknown controller {self.controller!r}")
        if not np.isfinite(self.amplitude):
            raise ValueError("amplitude must be finite")
        if self.f0 > self.f1:
            raise ValueError("need f0 <= f1")
        if self.sim is None:
            object.__setattr__(self, "sim", SimConfig(T_end=_DEFAULT_T_END[self.kind]))
        if self.T is None:
            object.__setattr__(self, "T", min(_DEFAULT_T[self.kind], self.sim.T_end))
        if self.T > self.sim.T_end + 1e-12:
            raise ValueError("T must not exceed sim.T_end")
        if self.kind == "impact" and self.impact is None:
            # half-sine pulse calibrated once on the canonical plant so the
            # peak link velocity under the two-time-scale controller is
            # about 1.5 rad/s, then frozen
            object.__setattr__(
                self,
                "impact",
                ExternalTorqueEvent(t_start=0.5, duration=0.05, peak=55.3),
            )

    def design(self) -> dict:
        # one gains block may be shared across controller overrides; each
        # controller consumes only the design scalars it defines
        merged = dict(DESIGN_DEFAULTS[self.controller])
        merged.update(
            {k: v for k, v in self.gains.items() if k in DESIGN_DEFAULTS[self.controller]}
        )
        return merged

    def mpc_config(self, variant: str) -> MpcConfig:
        return MpcConfig.from_dict(self.mpc.get(variant.removeprefix("mpc-"), {}), variant)


def make_reference(cfg: ScenarioConfig) -> ReferenceSource:
    """Reference sampler for the scenario; callable at any (future) time."""
    n = cfg.plant.n
    amp = np.full(n, cfg.amplitude)
    zero = np.zeros(n)

    if cfg.kind == "step":
        sample = ReferenceSample(q_d=amp, dq_d=zero, ddq_d=zero)
        return lambda t: sample
    if cfg.kind == "smooth-step":
        return lambda t: septic_trajectory(zero, amp, cfg.T, t)
    if cfg.kind == "chirp":
        return lambda t: chirp_trajectory(amp, cfg.f0, cfg.f1, cfg.T, t)
    # impact and hold regulate a constant posture
    posture = zero if cfg.kind == "impact" else amp
    sample = ReferenceSample(q_d=posture, dq_d=zero, ddq_d=zero)
    return lambda t: sample


def make_controller(cfg: ScenarioConfig, reference_source: ReferenceSource | None = None) -> Controller:
    """Instantiate the configured controller, wired for reference preview."""
    params = cfg.plant
    dt = cfg.sim.dt_ctrl
    design = cfg.design()
    name = cfg.controller
    if name == "motor-pd":
        return MotorPdController(params, omega_n=design["omega_n"], zeta=design["zeta"])
    if name == "sp":
        gains = synthesize_gains(params, **design)
        return SpController(params, gains, dt_ctrl=dt)
    if name == "mpc-fast":
        return MpcFastController(
            params, cfg.mpc_config(name), dt, reference_source=reference_source, **design
        )
    if name == "mpc-slow":
        return MpcSlowController(
            params, cfg.mpc_config(name), dt, reference_source=reference_source, **design
        )
    return MpcFullController(params, cfg.mpc_config(name), dt, reference_source=reference_source)


def initial_state(cfg: ScenarioConfig) -> FullState:
    """Start at rest: at the reference for hold, at zero otherwise."""
    n = cfg.plant.n
    if cfg.kind == "hold":
        q = np.full(n, cfg.amplitude)
        theta = q + gravity_torque(cfg.plant, q) / cfg.plant.K
        return FullState(q=q, dq=np.zeros(n), theta=theta, dtheta=np.zeros(n))
    return FullState.zeros(n)


def rmse(log: TraceLog, column: str, ref_column: str) -> float:
    """Root-mean-square difference between two logged columns."""
    if log.rows == 0:
        raise ValueError("empty trace log")
    x = getattr(log, column)
    x_ref = getattr(log, ref_column)
    return float(np.sqrt(np.mean((x - x_ref) ** 2)))


def _settled_time(log: TraceLog, band: float) -> float:
    """First time after which |q - q_d| stays within the band; nan if never."""
    err = np.max(np.abs(log.q - log.q_d), axis=1)
    outside = np.nonzero(err > band)[0]
    if outside.size == 0:
        return float(log.t[0])
    last_out = outside[-1]
    if last_out + 1 >= log.rows:
        return float("nan")
    return float(log.t[last_out + 1])


def scenario_metrics(log: TraceLog, cfg: ScenarioConfig) -> dict:
    """Tracking/actuation summary of one run."""
    if log.rows:
        over = np.abs(log.tau_m_slow + log.tau_m_fast) > cfg.plant.tau_max + 1e-9
        sat_count = int(np.sum(np.any(over, axis=1)))
    else:
        sat_count = 0
    return {
        "pos_rmse": rmse(log, "q", "q_d"),
        "vel_rmse": rmse(log, "dq", "dq_d"),
        "max_tau": float(np.max(np.abs(log.tau_m))) if log.rows else float("nan"),
        "settled_time": _settled_time(log, band=0.02 * max(abs(cfg.amplitude), 1e-9)),
        "saturation_count": sat_count,
        "safety_stop": log.safety_stop,
    }


def run_scenario(cfg: ScenarioConfig) -> tuple[TraceLog, dict]:
    """Wire plant, controller, reference and events; simulate and summarize."""
    ref = make_reference(cfg)
    controller = make_controller(cfg, reference_source=ref)
    events = [cfg.impact] if (cfg.kind == "impact" and cfg.impact is not None) else []
    try:
        log = run_closed_loop(
            cfg.plant, controller, ref, events, cfg.sim, x0=initial_state(cfg)
        )
    except IntegrationDivergedError as exc:
        log = exc.partial_log
        if log is None:
            raise
    return log, scenario_metrics(log, cfg)


def rigid_reference_response(
    params: PlantParams, gains, q_target: float, sim: SimConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Reduced rigid-model step response under the same link PD, as a reference.

    Integrates (M + B_d) q'' + g(q) = tau_d with tau_d recomputed at the
    control rate and clamped to the actuator bound, using RK4 at dt_plant.
    Returns (t, q) sampled at every plant step.  This path is deliberately
    independent of the flexible-plant kernel.
    """
    n = params.n
    inertia = params.M_link + gains.B_d
    target = np.full(n, float(q_target))
    q = np.zeros(n)
    dq = np.zeros(n)
    spc = sim.steps_per_ctrl
    total = int(round(sim.T_end / sim.dt_plant))
    dt = sim.dt_plant
    ts = np.empty(total + 1)
    qs = np.empty((total + 1, n))
    tau_d = np.zeros(n)

    def acc(q_, dq_):
        return (tau_d - params.g_amp * np.sin(q_)) / inertia

    for i in range(total + 1):
        ts[i] = i * dt
        qs[i] = q
        if i == total:
            break
        if i % spc == 0:
            raw = (
                gravity_torque(params, q)
                - gains.K_q * (q - target)
                - gains.D_q * dq
            )
            tau_d = np.clip(raw, -params.tau_max, params.tau_max)
        k1q, k1v = dq, acc(q, dq)
        k2q, k2v = dq + 0.5 * dt * k1v, acc(q + 0.5 * dt * k1q, dq + 0.5 * dt * k1v)
        k3q, k3v = dq + 0.5 * dt * k2v, acc(q + 0.5 * dt * k2q, dq + 0.5 * dt * k2v)
        k4q, k4v = dq + dt * k3v, acc(q + dt * k3q, dq + dt * k3v)
        q = q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        dq = dq + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return ts, qs


_GAIN_KEYS = {"omega_n", "zeta", "gamma_rf", "zeta_f"}


def config_from_dict(d: dict) -> ScenarioConfig:
    """Build a scenario from the JSON config structure.

    Top-level keys: plant, sim, gains, mpc, scenario; unknown keys are
    rejected everywhere.
    """
    allowed = {"plant", "sim", "gains", "mpc", "scenario"}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"config: unknown top-level keys {sorted(unknown)}")

    plant = PlantParams.from_dict(d["plant"]) if "plant" in d else PlantParams.canonical()
    sim = SimConfig.from_dict(d["sim"]) if "sim" in d else None

    gains = dict(d.get("gains", {}))
    bad = set(gains) - _GAIN_KEYS
    if bad:
        raise ValueError(f"gains: unknown keys {sorted(bad)}")

    mpc = {k: dict(v) for k, v in d.get("mpc", {}).items()}
    bad = set(mpc) - {"fast", "slow", "full"}
    if bad:
        raise ValueError(f"mpc: unknown variants {sorted(bad)}")

    sc = dict(d.get("scenario", {}))
    allowed_sc = {"kind", "controller", "amplitude", "T", "f0", "f1", "impact", "seed"}
    bad = set(sc) - allowed_sc
    if bad:
        raise ValueError(f"scenario: unknown keys {sorted(bad)}")
    impact = None
    if sc.get("impact") is not None:
        impact = ExternalTorqueEvent.from_dict(sc["impact"])
    return ScenarioConfig(
        kind=sc.get("kind", "step"),
        controller=sc.get("controller", "sp"),
        amplitude=float(sc.get("amplitude", 0.26)),
        T=sc.get("T"),
        f0=float(sc.get("f0", 0.0)),
        f1=float(sc.get("f1", 4.0)),
        impact=impact,
        plant=plant,
        sim=sim,
        gains=gains,
        mpc=mpc,
        seed=int(sc.get("seed", 0)),
    )


def load_config(path) -> ScenarioConfig:
    import json

    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config {path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValueError(f"config {path}: top level must be an object")
    return config_from_dict(data)


@dataclass(frozen=True)
class SweepCell:
    axis1: float
    axis2: float
    axis3: float | str
    metric: float
    flag: str  # "valid" | "invalid" | "safety-stop"


@dataclass
class SweepResult:
    """Grid study output; one metric and one flag per cell."""

    axis_names: tuple[str, str, str]
    cells: list[SweepCell]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("axis1,axis2,axis3,metric,flag\n")
            for c in self.cells:
                fh.write(f"{c.axis1},{c.axis2},{c.axis3},{c.metric!r},{c.flag}\n")

    def cell(self, axis1, axis2, axis3) -> SweepCell:
        for c in self.cells:
            if (c.axis1, c.axis2, c.axis3) == (axis1, axis2, axis3):
                return c
        raise KeyError((axis1, axis2, axis3))


DEFAULT_K_GRID = tuple(np.logspace(1, 4, 13))
DEFAULT_GAMMA_GRID = (1.0, 1.5, 2.0, 3.0, 4.0)
DEFAULT_OMEGA_GRID = (5.0, 10.0, 15.0, 20.0)

_VALIDITY_ERROR_LIMIT = 0.26  # mean |q - q_d| beyond this marks the cell invalid


def _sp_validity_cell(args) -> tuple[float, float, float, float, str]:
    base_cfg, stiffness, gamma_rf, omega_n = args
    plant = PlantParams(
        n=base_cfg.plant.n,
        M_link=base_cfg.plant.M_link,
        B=base_cfg.plant.B,
        K=np.full(base_cfg.plant.n, stiffness),
        g_amp=base_cfg.plant.g_amp,
        tau_max=base_cfg.plant.tau_max,
    )
    cfg = replace(
        base_cfg,
        kind="step",
        controller="sp",
        plant=plant,
        T=None,
        gains={"omega_n": omega_n, "zeta": 1.0, "gamma_rf": gamma_rf, "zeta_f": 1.0},
        sim=SimConfig(T_end=5.0, dt_plant=base_cfg.sim.dt_plant,
                      dt_ctrl=base_cfg.sim.dt_ctrl, record_decimation=10),
    )
    try:
        log, _ = run_scenario(cfg)
        if log.safety_stop or log.rows == 0:
            return (stiffness, gamma_rf, omega_n, float("inf"), "safety-stop")
        metric = float(np.mean(np.abs(log.q - log.q_d)))
    except Exception:
        return (stiffness, gamma_rf, omega_n, float("inf"), "safety-stop")
    flag = "valid" if metric <= _VALIDITY_ERROR_LIMIT else "invalid"
    return (stiffness, gamma_rf, omega_n, metric, flag)


def sp_validity_sweep(
    base_cfg: ScenarioConfig,
    K_grid=DEFAULT_K_GRID,
    gamma_grid=DEFAULT_GAMMA_GRID,
    omega_grid=DEFAULT_OMEGA_GRID,
    parallel: bool = True,
) -> SweepResult:
    """Map where the two-time-scale controller still tracks a 0.26 rad step.

    Each cell synthesizes gains for (gamma_rf, omega_n) on a plant with the
    given stiffness, runs a 5 s step and scores the mean absolute link
    position error; cells above the 0.26 rad limit (or aborted runs) are
    invalid.
    """
    K_grid = sorted(float(k) for k in K_grid)
    gamma_grid = sorted(float(g) for g in gamma_grid)
    omega_grid = sorted(float(w) for w in omega_grid)
    if not (K_grid and gamma_grid and omega_grid):
        raise ValueError("sweep grids must be nonempty")
    jobs = [
        (base_cfg, k, g, w) for k in K_grid for g in gamma_grid for w in omega_grid
    ]
    if parallel and len(jobs) > 1:
        workers = min(len(jobs), os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sp_validity_cell, jobs, chunksize=4))
    else:
        rows = [_sp_validity_cell(j) for j in jobs]
    cells = [SweepCell(axis1=r[0], axis2=r[1], axis3=r[2], metric=r[3], flag=r[4]) for r in rows]
    return SweepResult(axis_names=("K", "gamma_rf", "omega_n"), cells=cells)


def horizon_feasibility_sweep(
    base_cfg: ScenarioConfig,
    NP_grid,
    NC_grid,
    budget: float = 1e-3,
    variants=("mpc-fast", "mpc-slow", "mpc-full"),
) -> SweepResult:
    """Per-cycle compute-time map over (N_P, N_C) for each MPC variant.

    Runs a 2 s step per admissible cell (N_C <= N_P) and scores the 99th
    percentile controller wall-clock time; a cell is feasible ("valid") when
    that percentile stays under the budget.  Runs serially on purpose: the
    metric is a timing measurement and must not suffer CPU contention.
    """
    NP_grid = sorted(int(v) for v in NP_grid)
    NC_grid = sorted(int(v) for v in NC_grid)
    if not (NP_grid and NC_grid):
        raise ValueError("sweep grids must be nonempty")
    cells = []
    for variant in variants:
        short = variant.removeprefix("mpc-")
        for n_p in NP_grid:
            for n_c in NC_grid:
                if n_c > n_p:
                    continue
                mpc_cfg = dict(base_cfg.mpc.get(short, {}))
                mpc_cfg["N_P"] = n_p
                mpc_cfg["N_C"] = n_c
                cfg = replace(
                    base_cfg,
                    kind="step",
                    controller=variant,
                    T=None,
                    mpc={**base_cfg.mpc, short: mpc_cfg},
                    sim=SimConfig(T_end=2.0, dt_plant=base_cfg.sim.dt_plant,
                                  dt_ctrl=base_cfg.sim.dt_ctrl, record_decimation=10),
                )
                try:
                    log, _ = run_scenario(cfg)
                except Exception:
                    cells.append(SweepCell(n_p, n_c, variant, float("inf"), "safety-stop"))
                    continue
                if log.safety_stop or log.ctrl_times.size == 0:
                    cells.append(SweepCell(n_p, n_c, variant, float("inf"), "safety-stop"))
                    continue
                p99 = float(np.percentile(log.ctrl_times, 99.0))
                flag = "valid" if p99 < budget else "invalid"
                cells.append(SweepCell(n_p, n_c, variant, p99, flag))
    return SweepResult(axis_names=("N_P", "N_C", "variant"), cells=cells)
