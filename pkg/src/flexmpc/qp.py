"""Box-constrained convex quadratic programming.

Solves min 0.5 u'Hu + f'u over lb <= u <= ub for small dense positive
definite H, as produced each control cycle by the condensed MPC problems.
The solver is a projected-gradient method with a fixed 1/L step,
over-relaxation and a final active-set polish; it has deterministic
per-iteration cost, which suits a hard per-cycle compute budget.

An exhaustive active-set enumeration (:func:`solve_box_qp_exhaustive`) is
provided as an independent oracle for testing; it is exponential in the
problem size and must never be used on the control path.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from . import _kernels_py

__all__ = [
    "BoxQp",
    "QpSolution",
    "solve_box_qp",
    "kkt_residual",
    "solve_box_qp_exhaustive",
]


@dataclass(frozen=True)
class BoxQp:
    """Quadratic program min 0.5 u'Hu + f'u with box bounds lb <= u <= ub.

    ``warm_start`` is an optional solver hint (e.g. the previous cycle's
    shifted solution); it does not affect the minimizer.
    """

    H: np.ndarray
    f: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    warm_start: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        H = np.ascontiguousarray(np.asarray(self.H, dtype=float))
        f = np.ascontiguousarray(np.atleast_1d(np.asarray(self.f, dtype=float)))
        lb = np.ascontiguousarray(np.atleast_1d(np.asarray(self.lb, dtype=float)))
        ub = np.ascontiguousarray(np.atleast_1d(np.asarray(self.ub, dtype=float)))
        p = f.shape[0]
        if H.shape != (p, p):
            raise ValueError(f"H must be ({p},{p}), got {H.shape}")
        if lb.shape != (p,) or ub.shape != (p,):
            raise ValueError("bound vectors must match f in length")
        if np.max(np.abs(H - H.T), initial=0.0) >= 1e-12 * max(1.0, np.max(np.abs(H))):
            raise ValueError("H must be symmetric")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)
        if self.warm_start is not None:
            ws = np.ascontiguousarray(np.atleast_1d(np.asarray(self.warm_start, dtype=float)))
            if ws.shape != (p,):
                raise ValueError("warm_start must match f in length")
            object.__setattr__(self, "warm_start", ws)

    @property
    def p(self) -> int:
        return self.f.shape[0]

    def cost(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return 0.5 * float(u @ (self.H @ u)) + float(self.f @ u)

    def to_json(self) -> str:
        """Debug dump for offline reproduction."""
        return json.dumps(
            {
                "H": self.H.tolist(),
                "f": self.f.tolist(),
                "lb": self.lb.tolist(),
                "ub": self.ub.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "BoxQp":
        d = json.loads(text)
        return cls(H=np.array(d["H"]), f=np.array(d["f"]), lb=np.array(d["lb"]), ub=np.array(d["ub"]))


@dataclass
class QpSolution:
    u_star: np.ndarray
    iterations: int
    kkt_residual: float
    status: str  # "optimal" | "max-iter" | "infeasible-bounds"


def solve_box_qp(
    qp: BoxQp,
    tol: float = 1e-8,
    max_iter: int = 500,
    warm_start: np.ndarray | None = None,
    L: float | None = None,
    debug: bool = False,
) -> QpSolution:
    """Solve the box QP with the active numerical backend.

    ``L`` optionally supplies a cached largest eigenvalue of H (useful when
    the same Hessian is solved every control cycle).  ``debug=True`` routes
    through the pure-python kernel, which asserts monotone cost descent.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if np.any(qp.lb > qp.ub):
        return QpSolution(
            u_star=np.full(qp.p, np.nan),
            iterations=0,
            kkt_residual=np.inf,
            status="infeasible-bounds",
        )
    if warm_start is None:
        warm_start = qp.warm_start
    u0 = np.zeros(qp.p) if warm_start is None else np.asarray(warm_start, dtype=float)
    impl = _kernels_py if debug else kernels
    kwargs = {"debug": True} if debug else {}
    u, iters, _, code = impl.box_qp(
        qp.H, qp.f, qp.lb, qp.ub, np.ascontiguousarray(u0), tol, max_iter,
        0.0 if L is None else float(L), **kwargs,
    )
    u = np.asarray(u)
    residual = kkt_residual(qp, u)
    # the polish can land the exact optimum even when the projected-gradient
    # loop ran out of iterations; the KKT residual is the certificate
    optimal = code == _kernels_py.STATUS_OPTIMAL or residual < tol
    return QpSolution(
        u_star=u,
        iterations=int(iters),
        kkt_residual=residual,
        status="optimal" if optimal else "max-iter",
    )


def kkt_residual(qp: BoxQp, u) -> float:
    """Optimality certificate for a feasible point.

    Per coordinate: |g_i| on free coordinates, max(0, -g_i) at the lower
    bound and max(0, g_i) at the upper bound, with g = Hu + f; the residual
    is the maximum over coordinates.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(u < qp.lb) or np.any(u > qp.ub):
        raise ValueError("point is outside the bounds")
    g = qp.H @ u + qp.f
    at_lb = u == qp.lb
    at_ub = u == qp.ub
    res = np.abs(g)
    res[at_lb] = np.maximum(0.0, -g[at_lb])
    res[at_ub] = np.maximum(0.0, g[at_ub])
    # a coordinate pinched by equal bounds is always optimal
    res[at_lb & at_ub] = 0.0
    return float(res.max(initial=0.0))


def solve_box_qp_exhaustive(qp: BoxQp) -> QpSolution:
    """Global minimizer by enumerating all 3^p active-bound patterns.

    Independent test oracle: for every pattern (free / at lower / at upper
    per coordinate) the equality-constrained system is solved exactly and
    the best feasible candidate wins.  Exponential cost; p <= ~8 only.
    """
    if np.any(qp.lb > qp.ub):
        return QpSolution(
            u_star=np.full(qp.p, np.nan),
            iterations=0,
            kkt_residual=np.inf,
            status="infeasible-bounds",
        )
    p = qp.p
    best_u = None
    best_cost = np.inf
    for pattern in itertools.product((0, 1, 2), repeat=p):
        pat = np.array(pattern)
        u = np.where(pat == 1, qp.lb, np.where(pat == 2, qp.ub, 0.0))
        free = pat == 0
        if free.any():
            Hff = qp.H[np.ix_(free, free)]
            rhs = -(qp.f[free] + qp.H[np.ix_(free, ~free)] @ u[~free])
            try:
                uf = np.linalg.solve(Hff, rhs)
            except np.linalg.LinAlgError:
                continue
            if np.any(uf < qp.lb[free] - 1e-12) or np.any(uf > qp.ub[free] + 1e-12):
                continue
            u[free] = np.clip(uf, qp.lb[free], qp.ub[free])
        c = qp.cost(u)
        if c < best_cost:
            best_cost = c
            best_u = u
    assert best_u is not None  # the all-at-lower pattern is always feasible
    return QpSolution(
        u_star=best_u,
        iterations=3**p,
        kkt_residual=kkt_residual(qp, best_u),
        status="optimal",
    )
