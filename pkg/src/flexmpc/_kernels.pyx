# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled numerical kernels: RK4 plant integration and the box-QP solver.

Mirror of ``_kernels_py`` (same algorithms, same constants, same operation
order); the cross-backend tests hold the two implementations together.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sin, sqrt

cnp.import_array()

BACKEND_NAME = "cython"

STATUS_OPTIMAL = 0
STATUS_MAX_ITER = 1

cdef double OVER_RELAX = 1.6
cdef double POWER_ITER_TOL = 1e-6
cdef int POWER_ITER_MAX = 200


def rk4_span(double[::1] mlink, double[::1] b, double[::1] k, double[::1] gamp,
             double[::1] x, double[::1] tau_m, double[::1] tau_ext,
             double dt, Py_ssize_t steps):
    """Integrate the diagonal flexible-joint plant for ``steps`` RK4 steps."""
    cdef Py_ssize_t n = mlink.shape[0]
    cdef cnp.ndarray out_arr = np.empty(4 * n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef cnp.ndarray scratch = np.empty(16 * n, dtype=np.float64)
    cdef double[::1] w = scratch

    cdef double[::1] q = out[0:n]
    cdef double[::1] dq = out[n:2 * n]
    cdef double[::1] th = out[2 * n:3 * n]
    cdef double[::1] dth = out[3 * n:4 * n]
    cdef Py_ssize_t i, s
    for i in range(n):
        q[i] = x[i]
        dq[i] = x[n + i]
        th[i] = x[2 * n + i]
        dth[i] = x[3 * n + i]

    cdef double[::1] a1q = w[0:n]
    cdef double[::1] a1t = w[n:2 * n]
    cdef double[::1] dq2 = w[2 * n:3 * n]
    cdef double[::1] dth2 = w[3 * n:4 * n]
    cdef double[::1] a2q = w[4 * n:5 * n]
    cdef double[::1] a2t = w[5 * n:6 * n]
    cdef double[::1] dq3 = w[6 * n:7 * n]
    cdef double[::1] dth3 = w[7 * n:8 * n]
    cdef double[::1] a3q = w[8 * n:9 * n]
    cdef double[::1] a3t = w[9 * n:10 * n]
    cdef double[::1] dq4 = w[10 * n:11 * n]
    cdef double[::1] dth4 = w[11 * n:12 * n]
    cdef double[::1] a4q = w[12 * n:13 * n]
    cdef double[::1] a4t = w[13 * n:14 * n]

    cdef double half = 0.5 * dt
    cdef double sixth = dt / 6.0
    cdef double tau, q2i, th2i, q3i, th3i, q4i, th4i

    for s in range(steps):
        for i in range(n):
            tau = k[i] * (th[i] - q[i])
            a1q[i] = (tau + tau_ext[i] - gamp[i] * sin(q[i])) / mlink[i]
            a1t[i] = (tau_m[i] - tau) / b[i]
        for i in range(n):
            q2i = q[i] + half * dq[i]
            th2i = th[i] + half * dth[i]
            dq2[i] = dq[i] + half * a1q[i]
            dth2[i] = dth[i] + half * a1t[i]
            tau = k[i] * (th2i - q2i)
            a2q[i] = (tau + tau_ext[i] - gamp[i] * sin(q2i)) / mlink[i]
            a2t[i] = (tau_m[i] - tau) / b[i]
        for i in range(n):
            q3i = q[i] + half * dq2[i]
            th3i = th[i] + half * dth2[i]
            dq3[i] = dq[i] + half * a2q[i]
            dth3[i] = dth[i] + half * a2t[i]
            tau = k[i] * (th3i - q3i)
            a3q[i] = (tau + tau_ext[i] - gamp[i] * sin(q3i)) / mlink[i]
            a3t[i] = (tau_m[i] - tau) / b[i]
        for i in range(n):
            q4i = q[i] + dt * dq3[i]
            th4i = th[i] + dt * dth3[i]
            dq4[i] = dq[i] + dt * a3q[i]
            dth4[i] = dth[i] + dt * a3t[i]
            tau = k[i] * (th4i - q4i)
            a4q[i] = (tau + tau_ext[i] - gamp[i] * sin(q4i)) / mlink[i]
            a4t[i] = (tau_m[i] - tau) / b[i]
        for i in range(n):
            q[i] = q[i] + sixth * (dq[i] + 2.0 * dq2[i] + 2.0 * dq3[i] + dq4[i])
            th[i] = th[i] + sixth * (dth[i] + 2.0 * dth2[i] + 2.0 * dth3[i] + dth4[i])
            dq[i] = dq[i] + sixth * (a1q[i] + 2.0 * a2q[i] + 2.0 * a3q[i] + a4q[i])
            dth[i] = dth[i] + sixth * (a1t[i] + 2.0 * a2t[i] + 2.0 * a3t[i] + a4t[i])

    return out_arr


cdef void _matvec(double[:, ::1] H, double[::1] u, double[::1] out) noexcept:
    cdef Py_ssize_t p = H.shape[0]
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(p):
        acc = 0.0
        for j in range(p):
            acc += H[i, j] * u[j]
        out[i] = acc


cdef double _cost(double[:, ::1] H, double[::1] f, double[::1] u,
                  double[::1] scratch) noexcept:
    cdef Py_ssize_t p = H.shape[0]
    cdef Py_ssize_t i
    cdef double quad = 0.0
    cdef double lin = 0.0
    _matvec(H, u, scratch)
    for i in range(p):
        quad += u[i] * scratch[i]
        lin += f[i] * u[i]
    return 0.5 * quad + lin


def power_iteration(double[:, ::1] H):
    """Largest eigenvalue of a symmetric PSD matrix, 1e-6 relative accuracy."""
    cdef Py_ssize_t p = H.shape[0]
    cdef cnp.ndarray varr = np.full(p, 1.0 / sqrt(<double> p), dtype=np.float64)
    cdef cnp.ndarray warr = np.empty(p, dtype=np.float64)
    cdef double[::1] v = varr
    cdef double[::1] w = warr
    cdef double lam = 0.0
    cdef double lam_new, nrm, hi
    cdef Py_ssize_t i, it
    for it in range(POWER_ITER_MAX):
        _matvec(H, v, w)
        nrm = 0.0
        for i in range(p):
            nrm += w[i] * w[i]
        nrm = sqrt(nrm)
        if nrm == 0.0:
            return 0.0
        for i in range(p):
            v[i] = w[i] / nrm
        _matvec(H, v, w)
        lam_new = 0.0
        for i in range(p):
            lam_new += v[i] * w[i]
        hi = fabs(lam_new)
        if hi < 1.0:
            hi = 1.0
        if fabs(lam_new - lam) <= POWER_ITER_TOL * hi:
            return lam_new
        lam = lam_new
    return lam


cdef bint _cholesky(double[:, ::1] a, Py_ssize_t m) noexcept:
    """In-place lower Cholesky; returns False on a non-positive pivot."""
    cdef Py_ssize_t i, j, kk
    cdef double acc
    for j in range(m):
        acc = a[j, j]
        for kk in range(j):
            acc -= a[j, kk] * a[j, kk]
        if acc <= 0.0:
            return False
        a[j, j] = sqrt(acc)
        for i in range(j + 1, m):
            acc = a[i, j]
            for kk in range(j):
                acc -= a[i, kk] * a[j, kk]
            a[i, j] = acc / a[j, j]
    return True


def box_qp(double[:, ::1] H, double[::1] f, double[::1] lb, double[::1] ub,
           double[::1] u0, double tol, int max_iter, double L=0.0):
    """Projected gradient with over-relaxation plus an active-set polish.

    Semantics match ``_kernels_py.box_qp``; returns (u, iterations,
    pg_residual, status).
    """
    cdef Py_ssize_t p = f.shape[0]
    cdef cnp.ndarray uarr = np.empty(p, dtype=np.float64)
    cdef double[::1] u = uarr
    cdef cnp.ndarray scratch = np.empty(5 * p, dtype=np.float64)
    cdef double[::1] g = scratch[0:p]
    cdef double[::1] v = scratch[p:2 * p]
    cdef double[::1] w = scratch[2 * p:3 * p]
    cdef double[::1] tmp = scratch[3 * p:4 * p]
    cdef double[::1] mv = scratch[4 * p:5 * p]
    cdef Py_ssize_t i, j, it
    cdef double step, resid, r, cand, cw, cv

    for i in range(p):
        u[i] = u0[i]
        if u[i] < lb[i]:
            u[i] = lb[i]
        if u[i] > ub[i]:
            u[i] = ub[i]

    if L <= 0.0:
        L = power_iteration(H) * (1.0 + 1e-4)
    if L <= 0.0:
        L = 1.0
    step = 1.0 / L

    cdef int status = STATUS_MAX_ITER
    it = 0
    resid = np.inf
    for it in range(max_iter + 1):
        _matvec(H, u, g)
        for i in range(p):
            g[i] += f[i]
        resid = 0.0
        for i in range(p):
            cand = u[i] - g[i]
            if cand < lb[i]:
                cand = lb[i]
            if cand > ub[i]:
                cand = ub[i]
            r = fabs(u[i] - cand)
            if r > resid:
                resid = r
        if resid < tol:
            status = STATUS_OPTIMAL
            break
        if it == max_iter:
            break
        for i in range(p):
            cand = u[i] - step * g[i]
            if cand < lb[i]:
                cand = lb[i]
            if cand > ub[i]:
                cand = ub[i]
            v[i] = cand
            cand = u[i] + OVER_RELAX * (v[i] - u[i])
            if cand < lb[i]:
                cand = lb[i]
            if cand > ub[i]:
                cand = ub[i]
            w[i] = cand
        cw = _cost(H, f, w, mv)
        cv = _cost(H, f, v, mv)
        if cw <= cv:
            for i in range(p):
                u[i] = w[i]
        else:
            for i in range(p):
                u[i] = v[i]

    _polish(H, f, lb, ub, u, tmp, mv)
    return uarr, it, resid, status


cdef void _polish(double[:, ::1] H, double[::1] f, double[::1] lb,
                  double[::1] ub, double[::1] u, double[::1] tmp,
                  double[::1] mv):
    cdef Py_ssize_t p = f.shape[0]
    cdef Py_ssize_t i, j, m
    cdef cnp.ndarray free_arr = np.empty(p, dtype=np.intp)
    cdef Py_ssize_t[::1] free = free_arr
    m = 0
    for i in range(p):
        if u[i] != lb[i] and u[i] != ub[i]:
            free[m] = i
            m += 1
    if m == 0:
        return

    cdef cnp.ndarray hff_arr = np.empty((m, m), dtype=np.float64)
    cdef cnp.ndarray rhs_arr = np.empty(m, dtype=np.float64)
    cdef double[:, ::1] hff = hff_arr
    cdef double[::1] rhs = rhs_arr
    cdef double acc
    for i in range(m):
        for j in range(m):
            hff[i, j] = H[free[i], free[j]]
        acc = -f[free[i]]
        for j in range(p):
            acc -= H[free[i], j] * u[j]
        # add back the free contribution so only active coordinates remain
        for j in range(m):
            acc += H[free[i], free[j]] * u[free[j]]
        rhs[i] = acc

    if not _cholesky(hff, m):
        return
    # forward then backward triangular solves, in place on rhs
    for i in range(m):
        acc = rhs[i]
        for j in range(i):
            acc -= hff[i, j] * rhs[j]
        rhs[i] = acc / hff[i, i]
    for i in range(m - 1, -1, -1):
        acc = rhs[i]
        for j in range(i + 1, m):
            acc -= hff[j, i] * rhs[j]
        rhs[i] = acc / hff[i, i]

    for i in range(m):
        if rhs[i] < lb[free[i]] or rhs[i] > ub[free[i]]:
            return
    cdef double old_cost = _cost(H, f, u, mv)
    for i in range(m):
        tmp[i] = u[free[i]]
        u[free[i]] = rhs[i]
    if _cost(H, f, u, mv) > old_cost:
        for i in range(m):
            u[free[i]] = tmp[i]
