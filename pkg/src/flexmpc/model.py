"""Flexible-joint plant model.

A robot joint with intrinsic torsional elasticity is described by the link
coordinates ``q`` and the motor coordinates ``theta``, coupled through the
joint stiffness ``K``:

    M(q) q'' + C(q, q') q' + g(q) = K (theta - q) + tau_ext
    B theta''                     = tau_m - K (theta - q)

The built-in plant keeps ``M``, ``B``, ``K`` constant and diagonal, which
covers the canonical single-joint testbed and decoupled n-joint stacks.
Configuration-dependent inertia is an extension hook (swap the model
functions), not built in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PlantParams",
    "FullState",
    "mass_matrix",
    "coriolis_matrix",
    "gravity_torque",
    "joint_torque",
    "total_energy",
    "dynamics_rhs",
]


def _as_diag_vector(value, n: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim == 2:
        if arr.shape != (n, n):
            raise ValueError(f"{name}: expected shape ({n},) or ({n},{n}), got {arr.shape}")
        off = arr - np.diag(np.diag(arr))
        if np.any(off != 0.0):
            raise ValueError(f"{name}: only diagonal matrices are supported")
        arr = np.diag(arr).copy()
    if arr.shape == (1,) and n > 1:
        arr = np.full(n, arr[0])
    if arr.shape != (n,):
        raise ValueError(f"{name}: expected {n} entries, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class PlantParams:
    """Physical constants of the flexible joint(s).

    ``M_link``, ``B``, ``K`` hold the diagonal entries of the link inertia,
    motor inertia and joint stiffness matrices.  ``g_amp`` parameterizes the
    gravity torque ``g_i(q) = g_amp_i * sin(q_i)`` and ``tau_max`` is the
    per-joint motor torque bound.
    """

    n: int
    M_link: np.ndarray
    B: np.ndarray
    K: np.ndarray
    g_amp: np.ndarray = field(default=None)  # type: ignore[assignment]
    tau_max: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("joint count must be >= 1")
        object.__setattr__(self, "M_link", _as_diag_vector(self.M_link, self.n, "M_link"))
        object.__setattr__(self, "B", _as_diag_vector(self.B, self.n, "B"))
        object.__setattr__(self, "K", _as_diag_vector(self.K, self.n, "K"))
        g = 0.0 if self.g_amp is None else self.g_amp
        t = 100.0 if self.tau_max is None else self.tau_max
        object.__setattr__(self, "g_amp", _as_diag_vector(g, self.n, "g_amp"))
        object.__setattr__(self, "tau_max", _as_diag_vector(t, self.n, "tau_max"))
        for name in ("M_link", "B", "K", "tau_max"):
            if np.any(getattr(self, name) <= 0.0):
                raise ValueError(f"{name} must be positive definite (positive entries)")

    @classmethod
    def canonical(cls, g_amp: float = 0.0) -> "PlantParams":
        """Single joint with the identified testbed constants."""
        return cls(n=1, M_link=1.0, B=0.5980, K=362.0, g_amp=g_amp, tau_max=100.0)

    @classmethod
    def from_dict(cls, d: dict) -> "PlantParams":
        allowed = {"n", "M_link", "B", "K", "g_amp", "tau_max"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"plant: unknown keys {sorted(unknown)}")
        missing = {"n", "M_link", "B", "K"} - set(d)
        if missing:
            raise ValueError(f"plant: missing keys {sorted(missing)}")
        return cls(
            n=int(d["n"]),
            M_link=d["M_link"],
            B=d["B"],
            K=d["K"],
            g_amp=d.get("g_amp", 0.0),
            tau_max=d.get("tau_max", 100.0),
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "M_link": self.M_link.tolist(),
            "B": self.B.tolist(),
            "K": self.K.tolist(),
            "g_amp": self.g_amp.tolist(),
            "tau_max": self.tau_max.tolist(),
        }


@dataclass(frozen=True)
class FullState:
    """Link/motor positions and velocities at one instant."""

    q: np.ndarray
    dq: np.ndarray
    theta: np.ndarray
    dtheta: np.ndarray

    def __post_init__(self):
        for name in ("q", "dq", "theta", "dtheta"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        n = self.q.shape[0]
        for name in ("dq", "theta", "dtheta"):
            if getattr(self, name).shape != (n,):
                raise ValueError("state vectors must all have the same length")

    @classmethod
    def zeros(cls, n: int) -> "FullState":
        z = np.zeros(n)
        return cls(q=z, dq=z, theta=z, dtheta=z)

    def to_array(self) -> np.ndarray:
        """Packed state vector ``[q, dq, theta, dtheta]``."""
        return np.concatenate([self.q, self.dq, self.theta, self.dtheta])

    @classmethod
    def from_array(cls, x: np.ndarray) -> "FullState":
        n = x.shape[0] // 4
        return cls(q=x[0:n], dq=x[n : 2 * n], theta=x[2 * n : 3 * n], dtheta=x[3 * n : 4 * n])


def _check_len(params: PlantParams, vec: np.ndarray, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(vec, dtype=float))
    if arr.shape != (params.n,):
        raise ValueError(f"{name}: expected length {params.n}, got shape {arr.shape}")
    return arr


def mass_matrix(params: PlantParams, q) -> np.ndarray:
    """Link-side inertia matrix M(q); constant diagonal for the built-in plant."""
    _check_len(params, q, "q")
    return np.diag(params.M_link)


def coriolis_matrix(params: PlantParams, q, dq) -> np.ndarray:
    """Coriolis/centrifugal matrix C(q, q').

    The factorization satisfies dM/dt = C + C'; with constant inertia that
    forces C + C' = 0 and the chosen factorization is C = 0.
    """
    _check_len(params, q, "q")
    _check_len(params, dq, "dq")
    return np.zeros((params.n, params.n))


def gravity_torque(params: PlantParams, q) -> np.ndarray:
    """Gravity torque g(q) with g_i = g_amp_i * sin(q_i)."""
    q = _check_len(params, q, "q")
    return params.g_amp * np.sin(q)


def joint_torque(params: PlantParams, state: FullState) -> np.ndarray:
    """Elastic joint torque K (theta - q) transmitted between motor and link."""
    return params.K * (state.theta - state.q)


def total_energy(params: PlantParams, state: FullState) -> float:
    """Kinetic + elastic + gravity potential energy of the plant, in joules."""
    kin_link = 0.5 * float(state.dq @ (params.M_link * state.dq))
    kin_motor = 0.5 * float(state.dtheta @ (params.B * state.dtheta))
    defl = state.theta - state.q
    elastic = 0.5 * float(defl @ (params.K * defl))
    potential = float(np.sum(params.g_amp * (1.0 - np.cos(state.q))))
    return kin_link + kin_motor + elastic + potential


def dynamics_rhs(params: PlantParams, state: FullState, tau_m, tau_ext) -> np.ndarray:
    """Time derivative of the packed state under motor and external torque.

    Saturation is deliberately not applied here; clamping the commanded
    torque is the closed-loop simulator's job.
    """
    tau_m = _check_len(params, tau_m, "tau_m")
    tau_ext = _check_len(params, tau_ext, "tau_ext")
    tau = joint_torque(params, state)
    m = mass_matrix(params, state.q)
    c = coriolis_matrix(params, state.q, state.dq)
    rhs_link = tau + tau_ext - c @ state.dq - gravity_torque(params, state.q)
    try:
        ddq = np.linalg.solve(m, rhs_link)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular link inertia matrix") from exc
    ddtheta = (tau_m - tau) / params.B
    return np.concatenate([state.dq, ddq, state.dtheta, ddtheta])
