import numpy as np
import pytest

from flexmpc.qp import BoxQp, kkt_residual, solve_box_qp, solve_box_qp_exhaustive


def random_qp(rng, p, bound=1.0):
    a = rng.normal(size=(p, p))
    H = a @ a.T + 0.3 * np.eye(p)
    f = rng.normal(size=p)
    return BoxQp(H=H, f=f, lb=-bound * np.ones(p), ub=bound * np.ones(p))


def test_identity_unconstrained():
    c = np.array([0.7, -1.3, 0.2])
    qp = BoxQp(H=np.eye(3), f=-c, lb=-1e9 * np.ones(3), ub=1e9 * np.ones(3))
    sol = solve_box_qp(qp)
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.u_star, c, atol=1e-8)


def test_scalar_clamp():
    qp = BoxQp(H=np.eye(1), f=np.array([-3.0]), lb=np.array([-1.0]), ub=np.array([1.0]))
    sol = solve_box_qp(qp)
    np.testing.assert_array_equal(sol.u_star, [1.0])
    assert sol.status == "optimal"


def test_oracle_equivalence(rng):
    for _ in range(100):
        p = int(rng.integers(1, 7))
        qp = random_qp(rng, p)
        sol = solve_box_qp(qp)
        ora = solve_box_qp_exhaustive(qp)
        assert sol.status == "optimal"
        gap = qp.cost(sol.u_star) - qp.cost(ora.u_star)
        assert gap < 1e-8 * (1.0 + abs(qp.cost(ora.u_star)))
        assert np.all(sol.u_star >= qp.lb) and np.all(sol.u_star <= qp.ub)


def test_feasibility_exact(rng):
    # solutions never leave the box, not even by one ulp
    for _ in range(50):
        qp = random_qp(rng, int(rng.integers(1, 7)), bound=float(rng.uniform(0.01, 10)))
        u = solve_box_qp(qp).u_star
        assert np.all(u >= qp.lb)
        assert np.all(u <= qp.ub)


def test_infeasible_bounds():
    qp = BoxQp(H=np.eye(2), f=np.zeros(2), lb=np.array([1.0, 0.0]), ub=np.array([0.0, 1.0]))
    sol = solve_box_qp(qp)
    assert sol.status == "infeasible-bounds"


def test_warm_start_consistency(rng):
    for _ in range(20):
        qp = random_qp(rng, int(rng.integers(1, 7)))
        first = solve_box_qp(qp)
        again = solve_box_qp(qp, warm_start=first.u_star)
        assert again.iterations <= 2
        np.testing.assert_allclose(again.u_star, first.u_star, atol=1e-7)


def test_monotone_descent_debug(rng):
    # the pure-python kernel asserts per-iteration descent in debug mode
    for _ in range(20):
        qp = random_qp(rng, int(rng.integers(2, 7)))
        sol = solve_box_qp(qp, debug=True)
        assert sol.status == "optimal"


def test_max_iter_carries_best_iterate(rng):
    qp = random_qp(rng, 6)
    sol = solve_box_qp(qp, max_iter=1)
    assert sol.status in ("optimal", "max-iter")
    assert np.all(np.isfinite(sol.u_star))
    assert np.all(sol.u_star >= qp.lb) and np.all(sol.u_star <= qp.ub)


def test_kkt_residual_interior():
    qp = BoxQp(H=np.eye(2), f=np.array([-0.5, 0.25]), lb=-np.ones(2), ub=np.ones(2))
    sol = solve_box_qp(qp, tol=1e-10)
    assert kkt_residual(qp, sol.u_star) < 1e-9


def test_kkt_residual_active_bound_sign():
    # at a correctly-active upper bound the gradient may point outward
    qp = BoxQp(H=np.eye(1), f=np.array([-3.0]), lb=np.array([-1.0]), ub=np.array([1.0]))
    assert kkt_residual(qp, np.array([1.0])) == 0.0
    # and an interior suboptimal point scores its full gradient
    assert kkt_residual(qp, np.array([0.0])) == pytest.approx(3.0)


def test_kkt_residual_first_order_growth(rng):
    qp = random_qp(rng, 4, bound=100.0)  # interior optimum
    u_star = solve_box_qp(qp, tol=1e-12).u_star
    base = kkt_residual(qp, u_star)
    for scale in (1e-6, 1e-4, 1e-2):
        delta = rng.normal(size=4)
        delta /= np.linalg.norm(delta)
        grown = kkt_residual(qp, u_star + scale * delta)
        expected = np.max(np.abs(qp.H @ (scale * delta)))
        assert abs(grown - base) <= expected + 1e-10
        assert grown >= 0.2 * scale * np.min(np.abs(np.linalg.eigvalsh(qp.H)))


def test_kkt_residual_rejects_out_of_bounds():
    qp = BoxQp(H=np.eye(1), f=np.zeros(1), lb=np.array([-1.0]), ub=np.array([1.0]))
    with pytest.raises(ValueError):
        kkt_residual(qp, np.array([2.0]))


def test_qp_validation():
    with pytest.raises(ValueError):
        BoxQp(H=np.array([[1.0, 0.5], [0.0, 1.0]]), f=np.zeros(2),
              lb=-np.ones(2), ub=np.ones(2))
    with pytest.raises(ValueError):
        BoxQp(H=np.eye(2), f=np.zeros(3), lb=-np.ones(2), ub=np.ones(2))


def test_json_round_trip(rng):
    qp = random_qp(rng, 3)
    back = BoxQp.from_json(qp.to_json())
    np.testing.assert_array_equal(back.H, qp.H)
    np.testing.assert_array_equal(back.f, qp.f)
    np.testing.assert_array_equal(back.lb, qp.lb)
    np.testing.assert_array_equal(back.ub, qp.ub)


def test_pinched_bounds(rng):
    # lb == ub on some coordinates: solution is pinned there
    qp = random_qp(rng, 4)
    lb = qp.lb.copy()
    ub = qp.ub.copy()
    lb[1] = ub[1] = 0.37
    pinched = BoxQp(H=qp.H, f=qp.f, lb=lb, ub=ub)
    sol = solve_box_qp(pinched)
    assert sol.u_star[1] == 0.37
    ora = solve_box_qp_exhaustive(pinched)
    assert pinched.cost(sol.u_star) - pinched.cost(ora.u_star) < 1e-8
