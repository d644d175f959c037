import numpy as np
import pytest

from flexmpc.model import PlantParams
from flexmpc.sp_core import (
    epsilon_from_stiffness,
    fast_torque,
    inertia_shaping,
    motor_pd_gains,
    reduced_inertia,
    self_consistent_slow_torque,
    slow_torque,
    synthesize_gains,
)


def test_epsilon_from_stiffness():
    np.testing.assert_allclose(epsilon_from_stiffness(362.0, 1.0), 1.0 / np.sqrt(362.0))
    assert epsilon_from_stiffness(5.0, 5.0) == 1.0
    assert epsilon_from_stiffness(4.0, 1.0) == 0.5
    # disagreeing ratios fall back to the largest epsilon
    np.testing.assert_allclose(
        epsilon_from_stiffness([4.0, 16.0], [1.0, 1.0]), 0.5
    )
    with pytest.raises(ValueError):
        epsilon_from_stiffness(-1.0, 1.0)


def test_slow_torque(canonical):
    # coefficient M/(M+B) multiplies tau_m_slow/... : direct evaluation
    expected = (1.0 / (1.0 + 1.0 / 0.598)) * (10.0 / 0.598)
    np.testing.assert_allclose(slow_torque(canonical, [10.0], [0.0], [0.0]), [expected])
    np.testing.assert_allclose(slow_torque(canonical, [0.0], [0.1], [0.0]), [0.0])
    unit = PlantParams(n=1, M_link=1.0, B=1.0, K=100.0)
    np.testing.assert_allclose(slow_torque(unit, [2.0], [0.0], [0.0]), [1.0])


def test_slow_torque_with_gravity():
    p = PlantParams(n=1, M_link=1.0, B=0.598, K=362.0, g_amp=5.0)
    q = np.array([np.pi / 2])
    s = 1.0 / (1.0 / 1.0 + 1.0 / 0.598)
    np.testing.assert_allclose(
        slow_torque(p, [0.0], q, [0.0]), [s * 5.0], rtol=1e-12
    )


def test_fast_torque():
    np.testing.assert_array_equal(fast_torque([5.0], [5.0]), [0.0])
    np.testing.assert_allclose(fast_torque([10.0], [6.2578]), [3.7422])
    np.testing.assert_array_equal(fast_torque([0.0], [-1.0]), [1.0])
    with pytest.raises(ValueError):
        fast_torque([1.0, 2.0], [1.0])


def test_decomposition_identity(canonical, rng):
    for _ in range(50):
        tau = rng.normal(size=1) * 50.0
        tau_ms = rng.normal(size=1) * 50.0
        q, dq = rng.normal(size=1), rng.normal(size=1)
        ts = slow_torque(canonical, tau_ms, q, dq)
        assert abs((fast_torque(tau, ts) + ts) - tau) < 1e-12


def test_reduced_inertia():
    np.testing.assert_array_equal(reduced_inertia(0.598, 0.0), [0.598])
    np.testing.assert_allclose(reduced_inertia(0.598, 1.0), [0.299])
    np.testing.assert_allclose(reduced_inertia(0.598, 3.0), [0.1495])
    for gamma in (1.0, 1.5, 2.0, 4.0):
        np.testing.assert_array_equal(
            reduced_inertia(0.598, gamma - 1.0), [0.598 / gamma]
        )
    # matrix form agrees with the diagonal shortcut
    np.testing.assert_allclose(
        reduced_inertia(np.diag([0.598, 1.2]), np.diag([1.0, 3.0])),
        np.diag([0.299, 0.3]),
    )


def test_synthesize_gains_canonical(canonical):
    g = synthesize_gains(canonical, omega_n=15.0, zeta=1.0, gamma_rf=2.0, zeta_f=1.0)
    np.testing.assert_allclose(g.K_T, [1.0])
    np.testing.assert_allclose(g.B_d, [0.299])
    np.testing.assert_allclose(g.K_q, [15.0**2 * 1.299])
    np.testing.assert_allclose(g.D_q, [2.0 * 15.0 * 1.299])
    np.testing.assert_allclose(g.epsilon, 1.0 / np.sqrt(362.0))
    # fast loop: eps*K_S = 2 zeta_f w_f B / K with w_f = sqrt(K(1/M + 1/B_d))
    w_f = np.sqrt(362.0 * (1.0 + 1.0 / 0.299))
    np.testing.assert_allclose(g.eps_K_S, [2.0 * w_f * 0.598 / 362.0], rtol=1e-12)


def test_synthesize_gains_no_shaping(canonical):
    g = synthesize_gains(canonical, omega_n=15.0, zeta=1.0, gamma_rf=1.0, zeta_f=1.0)
    np.testing.assert_array_equal(g.K_T, [0.0])
    np.testing.assert_array_equal(g.B_d, [0.598])


def test_motor_pd_rule(canonical):
    k_p, k_d = motor_pd_gains(canonical, omega_n=14.0, zeta=0.7)
    np.testing.assert_allclose(k_p, [14.0**2 * 1.598])
    np.testing.assert_allclose(k_d, [2.0 * 0.7 * 14.0 * 1.598])


def test_gains_validation(canonical):
    with pytest.raises(ValueError):
        synthesize_gains(canonical, omega_n=-1.0, zeta=1.0, gamma_rf=2.0, zeta_f=1.0)
    with pytest.raises(ValueError):
        synthesize_gains(canonical, omega_n=15.0, zeta=1.0, gamma_rf=0.5, zeta_f=1.0)


def test_slow_pole_placement(canonical):
    # linearized slow subsystem: (M + B_d) e'' + D_q e' + K_q e = 0 must have
    # characteristic polynomial s^2 + 2 zeta w s + w^2
    for omega_n, zeta in ((15.0, 1.0), (7.0, 0.4), (22.0, 1.3)):
        g = synthesize_gains(canonical, omega_n, zeta, 2.0, 1.0)
        inertia = canonical.M_link + g.B_d
        coeffs = np.array([1.0, float((g.D_q / inertia)[0]), float((g.K_q / inertia)[0])])
        target = np.array([1.0, 2.0 * zeta * omega_n, omega_n**2])
        np.testing.assert_allclose(coeffs, target, atol=1e-9)


def test_fast_pole_placement(canonical):
    # closing tau_fast'' = -K(1/M+1/B) tau_fast + (K/B) u with
    # u = -K_T tau_fast - eps K_S tau_fast' must give s^2 + 2 zf wf s + wf^2
    for gamma_rf, zeta_f in ((2.0, 1.0), (1.5, 0.6), (4.0, 1.2)):
        g = synthesize_gains(canonical, 15.0, 1.0, gamma_rf, zeta_f)
        K, M, B = 362.0, 1.0, 0.598
        stiff = K * (1.0 / M + 1.0 / B) + K / B * float(g.K_T[0])
        damp = K / B * float(g.eps_K_S[0])
        w_f = np.sqrt(K * (1.0 / M + 1.0 / float(g.B_d[0])))
        np.testing.assert_allclose(stiff, w_f**2, rtol=1e-12)
        np.testing.assert_allclose(damp, 2.0 * zeta_f * w_f, rtol=1e-12)


def test_bd_monotone_in_gamma(canonical):
    prev = np.inf
    for gamma in (1.0, 1.5, 2.0, 3.0, 4.0, 8.0):
        b_d, _ = inertia_shaping(canonical, gamma)
        assert float(b_d[0]) < prev
        prev = float(b_d[0])


def test_self_consistent_slow_torque(canonical):
    g = synthesize_gains(canonical, 15.0, 1.0, 2.0, 1.0)
    tau_d = np.array([10.0])
    ts = self_consistent_slow_torque(canonical, g, tau_d, [0.0], [0.0])
    # feeding the implied slow command back through the quasi-steady map
    # must reproduce the same tau_slow
    tau_ms = (1.0 + g.K_T) * tau_d - g.K_T * ts
    np.testing.assert_allclose(slow_torque(canonical, tau_ms, [0.0], [0.0]), ts, rtol=1e-12)
