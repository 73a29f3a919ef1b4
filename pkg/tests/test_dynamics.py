import numpy as np
import pytest
import scipy.linalg

from pmpc import accel, dynamics


class LinearTestPlant:
    """xdot = M x + N u, discretized with the same RK4 as the real plants."""

    def __init__(self, M, N, dt):
        self.M = M
        self.N = N
        self.dt = dt
        self.kind = "linear-test"

    def step(self, x, u, disturbance=None):
        f = lambda xx, uu: xx @ self.M.T + np.asarray(uu) @ self.N.T
        return dynamics.rk4_step(f, x, u, self.dt)


def test_rk4_zero_field():
    x = np.array([1.0, -2.0, 3.0])
    out = dynamics.rk4_step(lambda xx, uu: np.zeros(3), x, None, 0.7)
    np.testing.assert_array_equal(out, x)


def test_rk4_constant_field_exact():
    out = dynamics.rk4_step(lambda xx, uu: np.array([uu]), np.array([0.0]), 1.0, 0.1)
    assert out[0] == pytest.approx(0.1, abs=1e-15)


def test_rk4_nilpotent_matrix_exponential():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    out = dynamics.rk4_step(lambda xx, uu: A @ xx, np.array([0.0, 1.0]), None, 1.0)
    # expm(A) for nilpotent A is exactly I + A; RK4 reproduces it exactly.
    np.testing.assert_allclose(out, np.array([1.0, 1.0]), atol=1e-15)


def test_rk4_nonfinite_stage_reports_stage():
    def f(xx, uu):
        return np.array([np.inf])

    with pytest.raises(ValueError, match="stage 1"):
        dynamics.rk4_step(f, np.array([0.0]), None, 0.1)


def test_freeflyer_rest_equilibrium():
    ff = dynamics.freeflyer()
    d = dynamics.freeflyer_derivative(np.zeros(6), np.zeros(9), 0, ff)
    np.testing.assert_array_equal(d, np.zeros(6))


def test_freeflyer_all_failed_mask_leaves_wheel():
    ff = dynamics.freeflyer()
    u = np.ones(9)
    u[8] = 0.07
    d = dynamics.freeflyer_derivative(np.zeros(6), u, 0b1111, ff)
    np.testing.assert_allclose(d[3:5], 0.0)
    assert d[5] == pytest.approx(0.07 / ff.inertia)


def test_freeflyer_px_pair_symmetric_fire():
    ff = dynamics.freeflyer()
    u = np.zeros(9)
    u[0] = u[1] = 0.8  # +x pair, symmetric -> no torque
    d = dynamics.freeflyer_derivative(np.zeros(6), u, 0, ff)
    assert d[3] == pytest.approx(1.6 / ff.mass)
    assert d[4] == pytest.approx(0.0, abs=1e-15)
    assert d[5] == pytest.approx(0.0, abs=1e-15)


def test_freeflyer_differential_pair_torque():
    ff = dynamics.freeflyer()
    u = np.zeros(9)
    u[0] = 1.0
    d = dynamics.freeflyer_derivative(np.zeros(6), u, 0, ff)
    assert d[5] == pytest.approx(ff.lever * 1.0 / ff.inertia)


def test_freeflyer_rotated_frame():
    ff = dynamics.freeflyer()
    x = np.zeros(6)
    x[2] = np.pi / 2  # body +x now points along world +y
    u = np.zeros(9)
    u[0] = u[1] = 1.0
    d = dynamics.freeflyer_derivative(x, u, 0, ff)
    assert d[3] == pytest.approx(0.0, abs=1e-12)
    assert d[4] == pytest.approx(2.0 / ff.mass)


def test_quadrotor_hover_balance():
    quad = dynamics.quadrotor()
    u = np.full(2, quad.mass * quad.gravity / 2.0)
    d = dynamics.quadrotor_derivative(np.zeros(6), u, np.zeros(2), quad)
    np.testing.assert_allclose(d[3:], 0.0, atol=1e-14)


def test_quadrotor_free_fall():
    quad = dynamics.quadrotor()
    d = dynamics.quadrotor_derivative(np.zeros(6), np.zeros(2), np.zeros(2), quad)
    assert d[4] == pytest.approx(-quad.gravity)
    assert d[5] == pytest.approx(0.0)


def test_quadrotor_torque_balance():
    quad = dynamics.quadrotor()
    delta = 0.3
    u = np.array([1.0 + delta, 1.0])
    d = dynamics.quadrotor_derivative(np.zeros(6), u, np.zeros(2), quad)
    assert d[5] == pytest.approx(quad.lever * delta / quad.inertia)


def test_quadrotor_wind_is_additive_acceleration():
    quad = dynamics.quadrotor()
    w = np.array([0.4, -0.2])
    d0 = dynamics.quadrotor_derivative(np.zeros(6), np.zeros(2), np.zeros(2), quad)
    d1 = dynamics.quadrotor_derivative(np.zeros(6), np.zeros(2), w, quad)
    np.testing.assert_allclose(d1[3:5] - d0[3:5], w, atol=1e-15)


def test_linearize_matches_exact_discretization():
    rng = np.random.default_rng(7)
    n, m, dt = 4, 2, 0.05
    M = 0.4 * rng.standard_normal((n, n))
    N = rng.standard_normal((n, m))
    plant = LinearTestPlant(M, N, dt)
    lin = dynamics.linearize(plant, rng.standard_normal(n), rng.standard_normal(m))
    # oracle 1: exact zero-order-hold discretization via the matrix exponential
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = M * dt
    aug[:n, n:] = N * dt
    E = scipy.linalg.expm(aug)
    Ad, Bd = E[:n, :n], E[:n, n:]
    assert np.max(np.abs(lin.A - Ad)) <= 1e-8 * max(1.0, np.abs(Ad).max())
    assert np.max(np.abs(lin.B - Bd)) <= 1e-8 * max(1.0, np.abs(Bd).max())
    # oracle 2: the RK4 map of a linear field is the degree-4 Taylor polynomial
    P = np.eye(n)
    A_rk4 = np.eye(n)
    S = np.zeros((n, n))
    fact = 1.0
    for k in range(1, 5):
        fact *= k
        P = P @ (M * dt)
        A_rk4 = A_rk4 + P / fact
        S = S + np.linalg.matrix_power(M * dt, k - 1) / fact
    B_rk4 = dt * (S @ N)
    np.testing.assert_allclose(lin.A, A_rk4, atol=1e-9)
    np.testing.assert_allclose(lin.B, B_rk4, atol=1e-9)


def test_linearize_b_zero_when_u_unused():
    class NoU:
        def step(self, x, u, disturbance=None):
            return dynamics.rk4_step(lambda xx, uu: -xx, x, u, 0.1)

    lin = dynamics.linearize(NoU(), np.ones(3), np.ones(2))
    np.testing.assert_allclose(lin.B, 0.0, atol=1e-9)


def test_quadrotor_hover_jacobian_structure():
    quad = dynamics.quadrotor()
    u = np.full(2, quad.mass * quad.gravity / 2.0)
    lin = dynamics.linearize(quad, np.zeros(6), u, np.zeros(2))
    # position rows: x_{k+1} = x_k + dt*v_k + O(dt^2 theta coupling)
    assert lin.A[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert lin.A[0, 3] == pytest.approx(quad.dt, abs=1e-6)
    assert lin.A[1, 4] == pytest.approx(quad.dt, abs=1e-6)
    assert lin.A[2, 5] == pytest.approx(quad.dt, abs=1e-9)
    # at hover, vertical acceleration is insensitive to theta to first order
    assert abs(lin.A[4, 2]) < 1e-6
    # pitching couples theta into horizontal acceleration: d(vx+)/dtheta = -g*dt
    assert lin.A[3, 2] == pytest.approx(-quad.gravity * quad.dt, rel=1e-3)


@pytest.mark.parametrize("kind", ["freeflyer", "quadrotor"])
def test_rk4_order_vs_fine_integrator(kind):
    plant = dynamics.freeflyer() if kind == "freeflyer" else dynamics.quadrotor()
    rng = np.random.default_rng(3)
    ratios = []
    for _ in range(5):
        x = rng.uniform(-1, 1, 6)
        u = rng.uniform(plant.u_lower, plant.u_upper)
        d = 5 if kind == "freeflyer" else rng.uniform(-1, 1, 2)
        if kind == "freeflyer":
            f = lambda xx, uu: dynamics.freeflyer_derivative(xx, uu, d, plant)
        else:
            f = lambda xx, uu: dynamics.quadrotor_derivative(xx, uu, d, plant)
        dt = plant.dt

        def integrate(n_sub):
            y = x
            for _ in range(n_sub):
                y = dynamics.rk4_step(f, y, u, dt / n_sub)
            return y

        exact = integrate(1000)
        e_coarse = np.linalg.norm(integrate(1) - exact)
        e_fine = np.linalg.norm(integrate(2) - exact)
        if e_coarse > 1e-13:  # skip trivially-exact draws
            ratios.append(e_coarse / max(e_fine, 1e-300))
    assert len(ratios) >= 3
    assert all(r >= 12.0 for r in ratios)


@pytest.mark.parametrize("kind", ["freeflyer", "quadrotor"])
def test_jacobians_match_forward_differences(kind):
    plant = dynamics.freeflyer() if kind == "freeflyer" else dynamics.quadrotor()
    rng = np.random.default_rng(11)
    m = plant.action_dim
    for _ in range(100):
        x = rng.uniform(-2, 2, 6)
        u = rng.uniform(plant.u_lower, plant.u_upper)
        if kind == "freeflyer":
            dist = int(rng.integers(0, 16))
        else:
            dist = rng.uniform(-1, 1, 2)
        lin = dynamics.linearize(plant, x, u, dist)
        h = 1e-6
        A_f = np.empty((6, 6))
        B_f = np.empty((6, m))
        base = dynamics.step(plant, x, u, dist)
        for i in range(6):
            xp = x.copy()
            xp[i] += h
            A_f[:, i] = (dynamics.step(plant, xp, u, dist) - base) / h
        for i in range(m):
            up = u.copy()
            up[i] += h
            B_f[:, i] = (dynamics.step(plant, x, up, dist) - base) / h
        scale = max(1.0, np.abs(lin.A).max())
        assert np.abs(lin.A - A_f).max() <= 1e-5 * scale
        assert np.abs(lin.B - B_f).max() <= 1e-5 * max(1.0, np.abs(lin.B).max())


def test_zero_mask_equals_no_failure_model():
    ff = dynamics.freeflyer()
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, 6)
    us = rng.uniform(ff.u_lower, ff.u_upper, (10, 9))
    a = dynamics.rollout(ff, x, us, disturbances=None)
    b = dynamics.rollout(ff, x, us, disturbances=np.zeros(10, dtype=int))
    assert (a == b).all()


@pytest.mark.parametrize("kind", ["freeflyer", "quadrotor"])
def test_batch_rollout_matches_sequential(kind):
    plant = dynamics.freeflyer() if kind == "freeflyer" else dynamics.quadrotor()
    rng = np.random.default_rng(5)
    B, H = 4, 7
    m = plant.action_dim
    x0s = rng.uniform(-1, 1, (B, 6))
    us = rng.uniform(plant.u_lower, plant.u_upper, (B, H, m))
    if kind == "freeflyer":
        d = rng.integers(0, 16, (B, H))
    else:
        d = rng.uniform(-1, 1, (B, H, 2))
    xs = dynamics.rollout_batch(plant, x0s, us, d)
    for b in range(B):
        ref = dynamics.rollout(plant, x0s[b], us[b], d[b])
        np.testing.assert_allclose(xs[b], ref, atol=1e-12)


@pytest.mark.parametrize("kind", ["freeflyer", "quadrotor"])
def test_batch_kernels_numba_numpy_agree(kind):
    plant = dynamics.freeflyer() if kind == "freeflyer" else dynamics.quadrotor()
    rng = np.random.default_rng(9)
    B, H = 3, 6
    m = plant.action_dim
    x0s = rng.uniform(-1, 1, (B, 6))
    us = rng.uniform(plant.u_lower, plant.u_upper, (B, H, m))
    xs_ref = rng.uniform(-1, 1, (B, H, 6))
    if kind == "freeflyer":
        d = rng.integers(0, 16, (B, H))
    else:
        d = rng.uniform(-1, 1, (B, H, 2))
    fast_roll = dynamics.rollout_batch(plant, x0s, us, d)
    fast_lin = dynamics.linearize_rollout(plant, xs_ref, us, d)
    with accel.force_numpy():
        slow_roll = dynamics.rollout_batch(plant, x0s, us, d)
        slow_lin = dynamics.linearize_rollout(plant, xs_ref, us, d)
    np.testing.assert_allclose(fast_roll, slow_roll, atol=1e-12)
    for fa, sl in zip(fast_lin, slow_lin):
        np.testing.assert_allclose(fa, sl, atol=1e-9)


def test_linearize_rollout_matches_pointwise():
    plant = dynamics.quadrotor()
    rng = np.random.default_rng(13)
    B, H = 2, 4
    xs = rng.uniform(-1, 1, (B, H, 6))
    us = rng.uniform(plant.u_lower, plant.u_upper, (B, H, 2))
    d = rng.uniform(-1, 1, (B, H, 2))
    As, Bs, fnext = dynamics.linearize_rollout(plant, xs, us, d)
    for b in range(B):
        for j in range(H):
            lin = dynamics.linearize(plant, xs[b, j], us[b, j], d[b, j])
            np.testing.assert_allclose(As[b, j], lin.A, atol=1e-9)
            np.testing.assert_allclose(Bs[b, j], lin.B, atol=1e-9)
            np.testing.assert_allclose(
                fnext[b, j], dynamics.step(plant, xs[b, j], us[b, j], d[b, j]),
                atol=1e-12,
            )


def test_plant_model_validation():
    with pytest.raises(ValueError):
        dynamics.freeflyer(mass=-1.0)
    with pytest.raises(ValueError):
        dynamics.quadrotor(dt=0.0)
    with pytest.raises(ValueError):
        dynamics.PlantModel(
            kind="hovercraft", mass=1, inertia=1, lever=1, gravity=0,
            dt=0.1, u_lower=np.zeros(2), u_upper=np.ones(2),
        )
    with pytest.raises(ValueError):
        dynamics.quadrotor(u_lower=np.ones(2), u_upper=np.zeros(2))
