"""Pure-numpy implementations of the hot numerical kernels.

This module is the fallback backend used when the compiled extension
(``flexmpc._kernels``) is unavailable or disabled.  Both backends implement
the same two kernels with identical semantics and constants:

* ``rk4_span`` -- classical RK4 integration of the diagonal flexible-joint
  plant over a number of fixed steps with zero-order-hold inputs.
* ``box_qp`` -- projected-gradient solver with over-relaxation and an
  active-set polish for small dense box-constrained QPs.

Keep the arithmetic here in lockstep with ``_kernels.pyx``: the cross-backend
tests compare outputs to near machine precision.
"""

import numpy as np

BACKEND_NAME = "python"

# box_qp status codes, shared with the compiled backend
STATUS_OPTIMAL = 0
STATUS_MAX_ITER = 1

_OVER_RELAX = 1.6
_POWER_ITER_TOL = 1e-6
_POWER_ITER_MAX = 200


def rk4_span(mlink, b, k, gamp, x, tau_m, tau_ext, dt, steps):
    """Integrate the diagonal flexible-joint plant for ``steps`` RK4 steps.

    State layout is the packed vector ``[q, dq, theta, dtheta]`` (length 4n).
    ``tau_m`` and ``tau_ext`` are held constant over the whole span (ZOH).
    Returns the new packed state; finiteness is checked by the caller.
    """
    n = mlink.shape[0]
    q = x[0:n].copy()
    dq = x[n : 2 * n].copy()
    th = x[2 * n : 3 * n].copy()
    dth = x[3 * n : 4 * n].copy()

    def accel(q_, dq_, th_, dth_):
        tau = k * (th_ - q_)
        ddq = (tau + tau_ext - gamp * np.sin(q_)) / mlink
        ddth = (tau_m - tau) / b
        return ddq, ddth

    half = 0.5 * dt
    sixth = dt / 6.0
    for _ in range(steps):
        a1q, a1t = accel(q, dq, th, dth)
        k1_q, k1_t = dq, dth

        q2 = q + half * k1_q
        th2 = th + half * k1_t
        dq2 = dq + half * a1q
        dth2 = dth + half * a1t
        a2q, a2t = accel(q2, dq2, th2, dth2)

        q3 = q + half * dq2
        th3 = th + half * dth2
        dq3 = dq + half * a2q
        dth3 = dth + half * a2t
        a3q, a3t = accel(q3, dq3, th3, dth3)

        q4 = q + dt * dq3
        th4 = th + dt * dth3
        dq4 = dq + dt * a3q
        dth4 = dth + dt * a3t
        a4q, a4t = accel(q4, dq4, th4, dth4)

        q = q + sixth * (k1_q + 2.0 * dq2 + 2.0 * dq3 + dq4)
        th = th + sixth * (k1_t + 2.0 * dth2 + 2.0 * dth3 + dth4)
        dq = dq + sixth * (a1q + 2.0 * a2q + 2.0 * a3q + a4q)
        dth = dth + sixth * (a1t + 2.0 * a2t + 2.0 * a3t + a4t)

    out = np.empty(4 * n)
    out[0:n] = q
    out[n : 2 * n] = dq
    out[2 * n : 3 * n] = th
    out[3 * n : 4 * n] = dth
    return out


def power_iteration(H):
    """Largest eigenvalue of a symmetric PSD matrix, 1e-6 relative accuracy."""
    p = H.shape[0]
    v = np.full(p, 1.0 / np.sqrt(p))
    lam = 0.0
    for _ in range(_POWER_ITER_MAX):
        w = H @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        lam_new = float(v @ (H @ v))
        if abs(lam_new - lam) <= _POWER_ITER_TOL * max(abs(lam_new), 1.0):
            return lam_new
        lam = lam_new
    return lam


def _cost(H, f, u):
    return 0.5 * float(u @ (H @ u)) + float(f @ u)


def _polish(H, f, lb, ub, u):
    """Fix active bounds, solve the free block exactly, keep if it improves."""
    active = (u == lb) | (u == ub)
    free = ~active
    if not free.any():
        return u
    Hff = H[np.ix_(free, free)]
    rhs = -(f[free] + H[np.ix_(free, active)] @ u[active])
    try:
        c = np.linalg.cholesky(Hff)
    except np.linalg.LinAlgError:
        return u
    uf = np.linalg.solve(c.T, np.linalg.solve(c, rhs))
    if np.any(uf < lb[free]) or np.any(uf > ub[free]):
        return u
    cand = u.copy()
    cand[free] = uf
    if _cost(H, f, cand) <= _cost(H, f, u):
        return cand
    return u


def box_qp(H, f, lb, ub, u0, tol, max_iter, L=0.0, debug=False):
    """Solve min 0.5 u'Hu + f'u subject to lb <= u <= ub.

    Projected gradient with fixed step 1/L and over-relaxation, followed by
    one active-set polish.  ``L`` <= 0 triggers an internal power iteration.
    Returns ``(u, iterations, pg_residual, status)``.
    """
    u = np.clip(u0, lb, ub)
    if L <= 0.0:
        # Rayleigh quotients approach the top eigenvalue from below; inflate
        # so the fixed step stays within the guaranteed-descent range.
        L = power_iteration(H) * (1.0 + 1e-4)
    if L <= 0.0:
        L = 1.0
    step = 1.0 / L

    status = STATUS_MAX_ITER
    it = 0
    resid = np.inf
    prev_cost = _cost(H, f, u) if debug else 0.0
    for it in range(max_iter + 1):
        g = H @ u + f
        resid = float(np.max(np.abs(u - np.clip(u - g, lb, ub)))) if u.size else 0.0
        if resid < tol:
            status = STATUS_OPTIMAL
            break
        if it == max_iter:
            break
        v = np.clip(u - step * g, lb, ub)
        w = np.clip(u + _OVER_RELAX * (v - u), lb, ub)
        u = w if _cost(H, f, w) <= _cost(H, f, v) else v
        if debug:
            cost_now = _cost(H, f, u)
            assert cost_now <= prev_cost + 1e-12 * (1.0 + abs(prev_cost))
            prev_cost = cost_now

    u = _polish(H, f, lb, ub, u)
    return u, it, resid, status
