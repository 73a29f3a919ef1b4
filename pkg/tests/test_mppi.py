"""Sampling-baseline planner tests: weighting math, update invariants,
and agreement with the convex planner on a problem both can solve."""

from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmpc import costs
from pmpc.mppi import MPPIParams, mppi_plan, softmax_weights
from pmpc.scp import Particle, SCPConfig, initial_guess, scp_solve


class Integrator1D:
    """x' = x + u + d, scalar everything."""

    u_lower = np.array([-50.0])
    u_upper = np.array([50.0])

    def step(self, x, u, disturbance=None):
        d = 0.0 if disturbance is None else float(np.asarray(disturbance))
        return np.asarray(x, dtype=float) + u[0] + d


class Lin2D:
    """Position/velocity chain with a force disturbance, dt = 0.5."""

    u_lower = np.array([-5.0])
    u_upper = np.array([5.0])

    def step(self, x, u, disturbance=None):
        d = 0.0 if disturbance is None else float(np.asarray(disturbance))
        p, v = x
        return np.array([p + 0.5 * v, v + 0.5 * (u[0] + d)])

    def linearize(self, x, u, disturbance=None):
        A = np.array([[1.0, 0.5], [0.0, 1.0]])
        B = np.array([[0.0], [0.5]])
        c = self.step(x, u, disturbance) - A @ x - B @ u
        return A, B, c


def quad_cost_1d(goal, r=0.01):
    return costs.CostModel(stage=costs.QuadraticStage(
        Q=np.array([[1.0]]), R=np.array([[r]]),
        x_goal=np.array([float(goal)])))


def rollout_total(plant, cost, x0, us, dist=None):
    x = np.asarray(x0, dtype=float)
    total = 0.0
    for t, u in enumerate(us):
        d = None if dist is None else dist[t]
        total += float(costs.stage_cost(cost, x, u))
        x = plant.step(x, u, d)
    return total


# ---------------------------------------------------------------------------
# exponential weights
# ---------------------------------------------------------------------------


def test_softmax_two_costs_hand_formula():
    lam = 0.7
    c = 2.3
    w = softmax_weights([0.0, c], lam)
    expect = np.array([1.0, np.exp(-c / lam)])
    expect /= expect.sum()
    np.testing.assert_allclose(w, expect, rtol=1e-15)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12),
    st.floats(1e-3, 1e2),
    st.floats(-1e3, 1e3),
)
def test_softmax_normalized_and_offset_invariant(cs, lam, offset):
    w = softmax_weights(cs, lam)
    assert w.shape == (len(cs),)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) < 1e-12
    w_shift = softmax_weights(np.asarray(cs) + offset, lam)
    np.testing.assert_allclose(w_shift, w, atol=1e-9)


def test_softmax_tiny_lambda_is_one_hot():
    cs = np.array([3.0, 1.0, 4.0, 1.5, 9.0])
    w = softmax_weights(cs, 1e-12)
    assert w[1] == 1.0
    assert np.all(w[[0, 2, 3, 4]] == 0.0)


def test_softmax_equal_costs_are_uniform():
    w = softmax_weights(np.full(8, 17.0), 1e-12)
    np.testing.assert_array_equal(w, np.full(8, 0.125))


def test_softmax_survives_huge_costs():
    # min-subtraction means no underflow of every entry at once
    w = softmax_weights([1e9, 1e9 + 1.0], 1e-3)
    assert w[0] == 1.0 and np.isfinite(w).all()


# ---------------------------------------------------------------------------
# parameter validation
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("bad", [
    dict(iterations=-1),
    dict(n_sequences=1),
    dict(n_sequences=7),   # antithetic pairs need an even count
    dict(sigma=0.0),
    dict(lam=0.0),
    dict(lam=-1.0),
    dict(Nc=9),
    dict(Nc=-1),
])
def test_params_validation(bad):
    kw = dict(iterations=5, n_sequences=8, sigma=0.3, lam=1e-3, N=8, Nc=3)
    kw.update(bad)
    with pytest.raises(ValueError):
        MPPIParams(**kw)


def test_shared_len_counts_consensus_inclusive():
    assert MPPIParams(1, 8, 0.3, 1e-3, N=8, Nc=3).shared_len == 4
    assert MPPIParams(1, 8, 0.3, 1e-3, N=8, Nc=8).shared_len == 9


# ---------------------------------------------------------------------------
# planner update semantics
# ---------------------------------------------------------------------------


def test_zero_iterations_returns_nominal():
    plant = Integrator1D()
    cost = quad_cost_1d(3.0)
    params = MPPIParams(iterations=0, n_sequences=8, sigma=0.5, lam=1e-3,
                        N=4, Nc=4)
    base = np.linspace(-1.0, 1.0, 5)[:, None]
    plan = mppi_plan([Particle(x0=np.zeros(1))], plant, cost, params,
                     np.random.default_rng(0), nominal=base)
    np.testing.assert_array_equal(plan.actions, base[None])
    np.testing.assert_array_equal(plan.first_action, base[0])


def test_zero_iterations_clips_the_returned_action():
    plant = Integrator1D()
    cost = quad_cost_1d(0.0)
    params = MPPIParams(iterations=0, n_sequences=8, sigma=0.5, lam=1e-3,
                        N=2, Nc=2)
    base = np.full((3, 1), 99.0)  # outside the +-50 action box
    plan = mppi_plan([Particle(x0=np.zeros(1))], plant, cost, params,
                     np.random.default_rng(0), nominal=base)
    np.testing.assert_array_equal(plan.first_action, [50.0])


def test_flat_cost_leaves_nominal_exactly_unchanged():
    # Antithetic pairs with uniform weights cancel bitwise, so a cost
    # surface with no information moves nothing.  The constructor insists
    # on R > 0, so build the all-zero cost model field by field.
    zero = SimpleNamespace(
        stage=SimpleNamespace(Q=np.zeros((1, 1)), R=np.zeros((1, 1)),
                              x_goal=np.zeros(1)),
        obstacles=[])
    params = MPPIParams(iterations=4, n_sequences=16, sigma=0.5, lam=1e-3,
                        N=5, Nc=5)
    base = 0.5 * np.ones((6, 1))
    plan = mppi_plan([Particle(x0=np.zeros(1))], Integrator1D(), zero,
                     params, np.random.default_rng(7), nominal=base)
    np.testing.assert_array_equal(plan.actions[0], base)


def test_tiny_lambda_steps_to_the_best_sampled_sequence():
    # One iteration, one antithetic pair, nominal at zero: the update must
    # land exactly on the better of the two candidates.  The rejected
    # candidate is the reflection -u of the accepted one.
    plant = Integrator1D()
    cost = quad_cost_1d(4.0)
    params = MPPIParams(iterations=1, n_sequences=2, sigma=1.0, lam=1e-12,
                        N=3, Nc=3)
    plan = mppi_plan([Particle(x0=np.zeros(1))], plant, cost, params,
                     np.random.default_rng(11))
    picked = plan.actions[0]
    assert np.abs(picked).max() > 0
    assert (rollout_total(plant, cost, np.zeros(1), picked)
            <= rollout_total(plant, cost, np.zeros(1), -picked))


def test_same_seed_reproduces_the_plan_bitwise():
    plant = Lin2D()
    cost = costs.CostModel(stage=costs.QuadraticStage(
        Q=np.diag([1.0, 0.2]), R=np.array([[0.05]]), x_goal=np.zeros(2)))
    params = MPPIParams(iterations=10, n_sequences=12, sigma=0.3, lam=1e-3,
                        N=6, Nc=2)
    parts = [Particle(x0=np.array([1.0, 0.0]),
                      disturbance=np.zeros(7), weight=0.5),
             Particle(x0=np.array([1.0, 0.0]),
                      disturbance=np.full(7, 1.0), weight=0.5)]
    a = mppi_plan(parts, plant, cost, params, np.random.default_rng(42))
    b = mppi_plan(parts, plant, cost, params, np.random.default_rng(42))
    np.testing.assert_array_equal(a.actions, b.actions)
    assert a.expected_cost == b.expected_cost


def test_shared_prefix_agrees_and_tails_split():
    plant = Lin2D()
    cost = costs.CostModel(stage=costs.QuadraticStage(
        Q=np.diag([1.0, 0.2]), R=np.array([[0.05]]), x_goal=np.zeros(2)))
    params = MPPIParams(iterations=8, n_sequences=16, sigma=0.3, lam=1e-3,
                        N=6, Nc=2)
    parts = [Particle(x0=np.array([1.0, 0.0]),
                      disturbance=np.zeros(7), weight=0.5),
             Particle(x0=np.array([1.0, 0.0]),
                      disturbance=np.full(7, 2.0), weight=0.5)]
    plan = mppi_plan(parts, plant, cost, params, np.random.default_rng(3))
    shared = plan.actions[:, :3]  # indices 0..Nc inclusive
    np.testing.assert_array_equal(shared[0], shared[1])
    assert not np.array_equal(plan.actions[0, 3:], plan.actions[1, 3:])
    np.testing.assert_array_equal(plan.first_action, plan.actions[0, 0])


def test_expected_cost_matches_hand_rollout():
    plant = Lin2D()
    cost = costs.CostModel(stage=costs.QuadraticStage(
        Q=np.diag([1.0, 0.2]), R=np.array([[0.05]]), x_goal=np.zeros(2)))
    params = MPPIParams(iterations=5, n_sequences=8, sigma=0.3, lam=1e-3,
                        N=5, Nc=5)
    d0, d1 = np.zeros(6), np.full(6, 1.5)
    parts = [Particle(x0=np.array([1.0, 0.0]), disturbance=d0, weight=0.25),
             Particle(x0=np.array([1.0, 0.0]), disturbance=d1, weight=0.75)]
    plan = mppi_plan(parts, plant, cost, params, np.random.default_rng(5))
    by_hand = 0.25 * rollout_total(plant, cost, parts[0].x0,
                                   plan.actions[0], d0) \
        + 0.75 * rollout_total(plant, cost, parts[1].x0, plan.actions[1], d1)
    np.testing.assert_allclose(plan.expected_cost, by_hand, rtol=1e-12)


def test_rejects_empty_particle_list():
    params = MPPIParams(iterations=1, n_sequences=2, sigma=0.3, lam=1e-3,
                        N=2, Nc=2)
    with pytest.raises(ValueError):
        mppi_plan([], Integrator1D(), quad_cost_1d(0.0), params,
                  np.random.default_rng(0))


def test_rejects_misshapen_nominal():
    params = MPPIParams(iterations=1, n_sequences=2, sigma=0.3, lam=1e-3,
                        N=4, Nc=4)
    with pytest.raises(ValueError):
        mppi_plan([Particle(x0=np.zeros(1))], Integrator1D(),
                  quad_cost_1d(0.0), params, np.random.default_rng(0),
                  nominal=np.zeros((3, 1)))  # needs N+1 = 5 rows


def test_nominal_accepts_trajectory_like_objects():
    class Prev:
        actions = np.zeros((5, 1))

    params = MPPIParams(iterations=0, n_sequences=2, sigma=0.3, lam=1e-3,
                        N=4, Nc=4)
    plan = mppi_plan([Particle(x0=np.zeros(1))], Integrator1D(),
                     quad_cost_1d(0.0), params, np.random.default_rng(0),
                     nominal=Prev())
    np.testing.assert_array_equal(plan.actions[0], Prev.actions)


# ---------------------------------------------------------------------------
# agreement with the convex planner
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("budget", [
    # (iterations, sequences, sigma, lambda): the two benchmark grids
    (50, 60, 0.3, 1e-3),
    (30, 100, 0.2, 1e-5),
])
def test_first_action_matches_convex_planner_within_10pct(budget):
    iters, n_seq, sigma, lam = budget
    plant = Lin2D()
    cost = costs.CostModel(stage=costs.QuadraticStage(
        Q=np.diag([1.0, 0.2]), R=np.array([[0.05]]), x_goal=np.zeros(2)))
    x0 = np.array([2.5, 0.0])
    N = 10
    parts = [Particle(x0=x0)]

    cfg = SCPConfig(N=N, Nc=N, rho_x=1e-6, max_scp_iter=50, eps=1e-10)
    guess = initial_guess(x0, np.zeros(2), N, "interpolate", action_dim=1)
    u_ref = scp_solve(parts, guess, plant, cost, cfg).trajectories[0].actions[0]

    params = MPPIParams(iterations=iters, n_sequences=n_seq, sigma=sigma,
                        lam=lam, N=N, Nc=N)
    plan = mppi_plan(parts, plant, cost, params, np.random.default_rng(0))
    rel = np.linalg.norm(plan.first_action - u_ref) / np.linalg.norm(u_ref)
    assert rel < 0.10
