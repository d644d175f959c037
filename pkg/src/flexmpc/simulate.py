"""Fixed-step closed-loop simulation of the flexible-joint plant.

The plant integrates with classical RK4 at ``dt_plant`` while the controller
runs every ``dt_ctrl`` (an integer multiple); the commanded motor torque is
clamped to the actuator bound and held zero-order between control instants.
External torque pulses (impacts) act on the link side.  Every run produces a
:class:`TraceLog`; runs aborted by controller infeasibility or integrator
divergence return a partial log flagged as a safety stop.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .controllers import Controller, ReferenceSource
from .model import FullState, PlantParams

__all__ = [
    "SimConfig",
    "ExternalTorqueEvent",
    "TraceLog",
    "IntegrationDivergedError",
    "ControllerInfeasibleError",
    "step_rk4",
    "apply_events",
    "run_closed_loop",
]

CSV_COLUMNS = (
    "t", "q", "dq", "theta", "dtheta", "tau", "tau_m", "tau_m_slow",
    "tau_m_fast", "q_d", "dq_d", "tau_ext", "ctrl_us",
)


class IntegrationDivergedError(RuntimeError):
    """Plant state became non-finite; carries the offending time."""

    def __init__(self, t: float, partial_log: "TraceLog | None" = None):
        super().__init__(f"integration diverged at t={t:.6f} s")
        self.t = t
        self.partial_log = partial_log


class ControllerInfeasibleError(RuntimeError):
    """Raised by a controller whose internal optimization failed."""


@dataclass(frozen=True)
class SimConfig:
    """Timing of a closed-loop run."""

    T_end: float
    dt_plant: float = 1e-4
    dt_ctrl: float = 1e-3
    record_decimation: int = 1

    def __post_init__(self):
        if self.T_end <= 0.0 or self.dt_plant <= 0.0 or self.dt_ctrl <= 0.0:
            raise ValueError("durations and steps must be positive")
        if self.record_decimation < 1:
            raise ValueError("record_decimation must be >= 1")
        ratio = self.dt_ctrl / self.dt_plant
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError("dt_ctrl must be an integer multiple of dt_plant")

    @property
    def steps_per_ctrl(self) -> int:
        return int(round(self.dt_ctrl / self.dt_plant))

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        allowed = {"T_end", "dt_plant", "dt_ctrl", "record_decimation"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"sim: unknown keys {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ExternalTorqueEvent:
    """Torque pulse applied to the link: half-sine or rectangular."""

    t_start: float
    duration: float
    peak: float
    shape: str = "half-sine"
    joint: int = 0

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValueError("event duration must be positive")
        if self.shape not in ("half-sine", "rectangular"):
            raise ValueError(f"unknown event shape: {self.shape!r}")

    def value(self, t: float) -> float:
        if not (self.t_start <= t < self.t_start + self.duration):
            return 0.0
        if self.shape == "rectangular":
            return self.peak
        return self.peak * np.sin(np.pi * (t - self.t_start) / self.duration)

    @classmethod
    def from_dict(cls, d: dict) -> "ExternalTorqueEvent":
        allowed = {"t_start", "duration", "peak", "shape", "joint"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"impact: unknown keys {sorted(unknown)}")
        return cls(**d)


def apply_events(events, t: float, n: int = 1) -> np.ndarray:
    """Sum of all active event torques at time t, as a length-n link torque."""
    tau_ext = np.zeros(n)
    for ev in events:
        tau_ext[ev.joint] += ev.value(t)
    return tau_ext


def _events_active(events, t0: float, t1: float) -> bool:
    return any(ev.t_start < t1 and t0 < ev.t_start + ev.duration for ev in events)


@dataclass
class TraceLog:
    """Time series of one closed-loop run.

    Vector columns have shape (rows, n).  ``ctrl_compute_time`` repeats the
    most recent controller wall-clock time (seconds) on every logged row;
    ``ctrl_times`` additionally keeps the undecimated per-cycle record.
    """

    t: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    theta: np.ndarray
    dtheta: np.ndarray
    tau: np.ndarray
    tau_m: np.ndarray
    tau_m_slow: np.ndarray
    tau_m_fast: np.ndarray
    q_d: np.ndarray
    dq_d: np.ndarray
    tau_ext: np.ndarray
    ctrl_compute_time: np.ndarray
    ctrl_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    safety_stop: bool = False
    safety_stop_reason: str | None = None

    def __post_init__(self):
        rows = self.t.shape[0]
        for name in ("q", "dq", "theta", "dtheta", "tau", "tau_m", "tau_m_slow",
                     "tau_m_fast", "q_d", "dq_d", "tau_ext"):
            if getattr(self, name).shape[0] != rows:
                raise ValueError("all trace columns must have equal length")
        if self.ctrl_compute_time.shape[0] != rows:
            raise ValueError("all trace columns must have equal length")
        if rows > 1 and not np.all(np.diff(self.t) > 0.0):
            raise ValueError("t must be strictly increasing")

    @property
    def rows(self) -> int:
        return self.t.shape[0]

    @property
    def n(self) -> int:
        return self.q.shape[1]

    def to_csv(self, path) -> None:
        """Write the log; single-joint runs use the exact canonical header."""
        names = []
        cols = []
        for name in CSV_COLUMNS:
            if name == "t":
                names.append("t")
                cols.append(self.t)
            elif name == "ctrl_us":
                names.append("ctrl_us")
                cols.append(self.ctrl_compute_time * 1e6)
            else:
                data = getattr(self, name)
                if self.n == 1:
                    names.append(name)
                    cols.append(data[:, 0])
                else:
                    for j in range(self.n):
                        names.append(f"{name}_{j}")
                        cols.append(data[:, j])
        with open(path, "w") as fh:
            fh.write(",".join(names) + "\n")
            for i in range(self.rows):
                fh.write(",".join(repr(float(c[i])) for c in cols) + "\n")

    @classmethod
    def from_csv(cls, path) -> "TraceLog":
        data = np.genfromtxt(path, delimiter=",", names=True)
        names = data.dtype.names
        if names is None:
            raise ValueError("empty or malformed trace CSV")

        def grab(base):
            if base in names:
                return np.atleast_1d(data[base]).reshape(-1, 1)
            joint_cols = [f"{base}_{j}" for j in range(len(names)) if f"{base}_{j}" in names]
            if not joint_cols:
                raise ValueError(f"trace CSV is missing column {base!r}")
            return np.column_stack([np.atleast_1d(data[c]) for c in joint_cols])

        kwargs = {name: grab(name) for name in CSV_COLUMNS if name not in ("t", "ctrl_us")}
        return cls(
            t=np.atleast_1d(data["t"]),
            ctrl_compute_time=np.atleast_1d(data["ctrl_us"]) * 1e-6,
            **kwargs,
        )


def step_rk4(
    params: PlantParams,
    state: FullState,
    tau_m,
    tau_ext,
    dt: float,
    steps: int = 1,
) -> FullState:
    """Advance the plant by ``steps`` RK4 steps with constant (ZOH) inputs."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    tau_m = np.ascontiguousarray(np.atleast_1d(np.asarray(tau_m, dtype=float)))
    tau_ext = np.ascontiguousarray(np.atleast_1d(np.asarray(tau_ext, dtype=float)))
    x = kernels.rk4_span(
        params.M_link, params.B, params.K, params.g_amp,
        np.ascontiguousarray(state.to_array()), tau_m, tau_ext, dt, steps,
    )
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise IntegrationDivergedError(t=np.nan)
    return FullState.from_array(x)


class _TraceBuilder:
    def __init__(self, n: int):
        self.n = n
        self.rows: list[tuple] = []
        self.ctrl_times: list[float] = []

    def log(self, t, x, tau, tau_m, tau_m_slow, tau_m_fast, ref, tau_ext, ctrl_time):
        n = self.n
        self.rows.append((
            t, x[0:n].copy(), x[n:2 * n].copy(), x[2 * n:3 * n].copy(), x[3 * n:4 * n].copy(),
            tau.copy(), tau_m.copy(), tau_m_slow.copy(), tau_m_fast.copy(),
            ref.q_d.copy(), ref.dq_d.copy(), tau_ext.copy(), ctrl_time,
        ))

    def build(self, safety_stop=False, reason=None) -> TraceLog:
        if self.rows:
            cols = list(zip(*self.rows))
        else:
            cols = [[] for _ in range(13)]
        return TraceLog(
            t=np.asarray(cols[0], dtype=float),
            q=np.asarray(cols[1], dtype=float).reshape(-1, self.n),
            dq=np.asarray(cols[2], dtype=float).reshape(-1, self.n),
            theta=np.asarray(cols[3], dtype=float).reshape(-1, self.n),
            dtheta=np.asarray(cols[4], dtype=float).reshape(-1, self.n),
            tau=np.asarray(cols[5], dtype=float).reshape(-1, self.n),
            tau_m=np.asarray(cols[6], dtype=float).reshape(-1, self.n),
            tau_m_slow=np.asarray(cols[7], dtype=float).reshape(-1, self.n),
            tau_m_fast=np.asarray(cols[8], dtype=float).reshape(-1, self.n),
            q_d=np.asarray(cols[9], dtype=float).reshape(-1, self.n),
            dq_d=np.asarray(cols[10], dtype=float).reshape(-1, self.n),
            tau_ext=np.asarray(cols[11], dtype=float).reshape(-1, self.n),
            ctrl_compute_time=np.asarray(cols[12], dtype=float),
            ctrl_times=np.asarray(self.ctrl_times, dtype=float),
            safety_stop=safety_stop,
            safety_stop_reason=reason,
        )


def run_closed_loop(
    params: PlantParams,
    controller: Controller,
    reference_source: ReferenceSource,
    events,
    sim: SimConfig,
    x0: FullState | None = None,
) -> TraceLog:
    """Simulate the controlled plant and record a trace.

    The controller's slow and fast command components are summed, clamped to
    the actuator bound (the only place saturation is applied) and held
    zero-order until the next control instant.  Controller infeasibility
    flags the returned partial log as a safety stop; a non-finite plant state
    raises :class:`IntegrationDivergedError` with the partial log attached.
    """
    n = params.n
    spc = sim.steps_per_ctrl
    dec = sim.record_decimation
    total_steps = int(round(sim.T_end / sim.dt_plant))
    events = list(events)

    x = (x0 or FullState.zeros(n)).to_array().copy()
    controller.reset()

    builder = _TraceBuilder(n)
    tau_m = np.zeros(n)
    tau_m_slow = np.zeros(n)
    tau_m_fast = np.zeros(n)
    ref = reference_source(0.0)
    ctrl_time = 0.0

    mlink, b, k, gamp = params.M_link, params.B, params.K, params.g_amp
    i = 0
    while True:
        t = i * sim.dt_plant
        if i % spc == 0 and i < total_steps:
            ref = reference_source(t)
            state = FullState.from_array(x)
            tic = time.perf_counter()
            try:
                out = controller.step(t, state, ref)
            except ControllerInfeasibleError as exc:
                if i % dec == 0:
                    tau = k * (x[2 * n:3 * n] - x[0:n])
                    builder.log(t, x, tau, tau_m, tau_m_slow, tau_m_fast, ref,
                                apply_events(events, t, n), ctrl_time)
                return builder.build(safety_stop=True, reason=f"controller-infeasible: {exc}")
            ctrl_time = time.perf_counter() - tic
            builder.ctrl_times.append(ctrl_time)
            tau_m_slow = out.tau_m_slow
            tau_m_fast = out.tau_m_fast
            tau_m = np.clip(tau_m_slow + tau_m_fast, -params.tau_max, params.tau_max)

        if i % dec == 0:
            tau = k * (x[2 * n:3 * n] - x[0:n])
            builder.log(t, x, tau, tau_m, tau_m_slow, tau_m_fast, ref,
                        apply_events(events, t, n), ctrl_time)
        if i >= total_steps:
            break

        next_ctrl = (i // spc + 1) * spc
        next_log = (i // dec + 1) * dec
        span_end = min(next_ctrl, next_log, total_steps)
        t_span_end = span_end * sim.dt_plant
        if _events_active(events, t, t_span_end):
            span = 1
            tau_ext = apply_events(events, t, n)
        else:
            span = span_end - i
            tau_ext = np.zeros(n)
        x = kernels.rk4_span(mlink, b, k, gamp, x, tau_m, tau_ext, sim.dt_plant, span)
        x = np.asarray(x)
        if not np.all(np.isfinite(x)):
            t_fail = span_end * sim.dt_plant
            raise IntegrationDivergedError(
                t_fail, partial_log=builder.build(safety_stop=True, reason="integration-diverged")
            )
        i += span

    return builder.build()
