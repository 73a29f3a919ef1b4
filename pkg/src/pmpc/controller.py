"""Receding-horizon control loop.

Each step: turn the current belief into weighted particles, plan (convex
consensus planner, its single-nominal special case, or the sampling
baseline), execute the shared first action on the true system, observe,
and update the belief.  ``run_episode`` drives that loop against a world
object that owns the hidden true realization (failure mask, wind path, or
position offset).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .costs import CostModel, penetration, stage_cost
from .errors import BeliefCollapseError, PMPCError
from .mppi import MPPIParams, MPPIPlan, mppi_plan
from .scp import (
    Particle,
    PlanResult,
    SCPConfig,
    Trajectory,
    _action_bounds,
    initial_guess,
    scp_solve,
)
from .uncertainty import (
    DiscreteBelief,
    OUProcess,
    PositionBelief,
    RangeSensor,
    bayes_update,
    map_failure_sequence,
    pf_update,
    range_measure,
    sample_particles,
)

__all__ = [
    "ControllerSpec",
    "EpisodeTrace",
    "ce_nominal",
    "plan_step",
    "shift_plan",
    "run_episode",
    "FailureWorld",
    "WindWorld",
    "SensingWorld",
]

_KINDS = ("pmpc", "ce", "mppi")
_UNCERTAINTIES = ("failure", "wind", "sensing", "learning")

COLLISION_EPS = 1e-9


@dataclass
class ControllerSpec:
    """Everything the planner side of the loop needs."""

    kind: str
    M: int
    scp: SCPConfig
    uncertainty: str
    plant: object
    cost: CostModel
    p_fail: float = 0.05
    mppi: MPPIParams | None = None
    models: list | None = None     # learning: one dynamics model per particle
    ce_model: object = None        # learning: the single model used nominally

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown controller kind: {self.kind!r}")
        if self.uncertainty not in _UNCERTAINTIES:
            raise ValueError(
                f"unknown uncertainty kind: {self.uncertainty!r}")
        if self.M < 1:
            raise ValueError("need at least one particle")
        if self.kind == "ce" and self.M != 1:
            raise ValueError("the nominal controller uses exactly one "
                             "particle")
        if self.kind == "mppi":
            if self.mppi is None:
                raise ValueError("mppi controller needs MPPIParams")
            if self.mppi.N != self.scp.N:
                raise ValueError("mppi horizon must match the planning "
                                 "horizon")

    @property
    def action_dim(self) -> int:
        lower = getattr(self.plant, "u_lower", None)
        if lower is not None:
            return np.asarray(lower).shape[0]
        return self.cost.stage.R.shape[0]


@dataclass
class EpisodeTrace:
    """Everything one closed-loop episode produced.

    ``plan_times`` is wall clock and therefore excluded from any
    reproducibility comparison; all other fields are deterministic in
    (world, spec, seed).
    """

    states: np.ndarray          # (T'+1, nx) executed states
    actions: np.ndarray         # (T', nu)
    stage_costs: np.ndarray     # (T',) cost of each executed (x, u)
    penetrations: np.ndarray    # (T'+1,) obstacle depth at each state, m
    beliefs: list               # (T'+1) belief snapshot arrays
    plan_times: np.ndarray      # (T',) seconds per plan
    failed: bool = False
    failure_msg: str = ""

    @property
    def steps(self) -> int:
        return self.actions.shape[0]

    @property
    def total_cost(self) -> float:
        return float(self.stage_costs.sum())

    @property
    def collided(self) -> bool:
        return bool(np.any(self.penetrations > COLLISION_EPS))


def ce_nominal(belief, kind: str, *, x0, N: int, p_fail: float = 0.05,
               model=None) -> Particle:
    """Single nominal particle: the belief collapsed to a best guess.

    failure -> per-step most-probable mask of the simulated failure chain;
    wind -> the current wind held constant; sensing -> the weighted-mean
    position; learning -> one designated dynamics model.
    """
    x0 = np.asarray(x0, dtype=float)
    if kind == "failure":
        seq = map_failure_sequence(belief, p_fail, N)
        return Particle(x0=x0.copy(), disturbance=seq, weight=1.0)
    if kind == "wind":
        dist = np.tile(belief.state, (N + 1, 1))
        return Particle(x0=x0.copy(), disturbance=dist, weight=1.0)
    if kind == "sensing":
        xi = x0.copy()
        xi[:2] += belief.mean_deviation()
        return Particle(x0=xi, weight=1.0)
    if kind == "learning":
        if model is None:
            raise ValueError("learning setting needs a nominal model")
        return Particle(x0=x0.copy(), weight=1.0, model=model)
    raise ValueError(f"unknown uncertainty kind: {kind!r}")


def plan_step(belief, spec: ControllerSpec, guess, *, x0, rng):
    """One planning call: belief -> particles -> plan -> shared action.

    Returns ``(u0, result)`` where ``result`` is the full plan (used to
    warm-start the next call via :func:`shift_plan`).  The returned action
    is clipped to the plant's action box.
    """
    if spec.kind == "ce":
        particles = [ce_nominal(belief, spec.uncertainty, x0=x0,
                                N=spec.scp.N, p_fail=spec.p_fail,
                                model=spec.ce_model)]
    else:
        particles = sample_particles(belief, spec.uncertainty, spec.M,
                                     spec.scp.N, rng, x0=x0,
                                     p_fail=spec.p_fail, models=spec.models)
    lo, hi = _action_bounds(spec.plant, spec.action_dim)
    if spec.kind == "mppi":
        plan = mppi_plan(particles, spec.plant, spec.cost, spec.mppi, rng,
                         nominal=guess)
        return np.clip(plan.first_action, lo, hi), plan
    if guess is None:
        guess = initial_guess(np.asarray(x0, dtype=float),
                              spec.cost.stage.x_goal, spec.scp.N,
                              "interpolate", action_dim=spec.action_dim)
    result = scp_solve(particles, guess, spec.plant, spec.cost, spec.scp)
    u0 = result.trajectories[0].actions[0]
    return np.clip(u0, lo, hi), result


def shift_plan(result):
    """Warm start for the next step: drop the executed step, repeat the
    tail entry."""
    if isinstance(result, PlanResult):
        return shift_plan(result.trajectories[0])
    if isinstance(result, MPPIPlan):
        acts = result.actions[0]
        return np.vstack([acts[1:], acts[-1:]])
    if isinstance(result, Trajectory):
        return Trajectory(
            states=np.vstack([result.states[1:], result.states[-1:]]),
            actions=np.vstack([result.actions[1:], result.actions[-1:]]))
    acts = np.asarray(result)
    return np.vstack([acts[1:], acts[-1:]])


def _max_penetration(cost: CostModel, x) -> float:
    p = np.asarray(x, dtype=float)[:2]
    depth = 0.0
    for rect in cost.obstacles:
        depth = max(depth, float(penetration(p, rect)))
    return depth


def _belief_snapshot(belief):
    for attr in ("weights", "state"):
        v = getattr(belief, attr, None)
        if v is not None:
            return np.array(v, dtype=float)
    return None


def run_episode(world, spec: ControllerSpec, T: int, seed,
                action_noise: float = 0.0) -> EpisodeTrace:
    """Closed loop for ``T`` steps; aborts into a partial trace if a plan
    fails.

    ``action_noise`` perturbs each executed action with clipped Gaussian
    noise (exploration during learning); the planner never sees it.
    """
    if T < 1:
        raise ValueError("episode needs at least one step")
    rng = np.random.default_rng(seed)
    world.reset(rng)
    x = np.array(world.x_start, dtype=float)
    belief = world.init_belief(rng)
    guess = initial_guess(x, spec.cost.stage.x_goal, spec.scp.N,
                          "interpolate", action_dim=spec.action_dim)
    lo, hi = _action_bounds(spec.plant, spec.action_dim)
    states = [x.copy()]
    pens = [_max_penetration(spec.cost, x)]
    beliefs = [_belief_snapshot(belief)]
    actions, costs, times = [], [], []
    failed, msg = False, ""
    for t in range(T):
        tic = time.perf_counter()
        try:
            u0, result = plan_step(belief, spec, guess, x0=x, rng=rng)
        except PMPCError as exc:
            failed, msg = True, f"plan failed at step {t}: {exc}"
            break
        times.append(time.perf_counter() - tic)
        if action_noise > 0.0:
            u0 = np.clip(u0 + rng.normal(0.0, action_noise, u0.shape),
                         lo, hi)
        x_next = world.step_true(x, u0, rng)
        actions.append(u0)
        costs.append(float(stage_cost(spec.cost, x, u0)))
        try:
            belief = world.update_belief(belief, x, u0, x_next, rng)
        except BeliefCollapseError:
            belief = world.reset_belief(belief)
        x = x_next
        states.append(x.copy())
        pens.append(_max_penetration(spec.cost, x))
        beliefs.append(_belief_snapshot(belief))
        guess = shift_plan(result)
    nu = spec.action_dim
    return EpisodeTrace(
        states=np.asarray(states),
        actions=(np.asarray(actions) if actions
                 else np.zeros((0, nu))),
        stage_costs=np.asarray(costs, dtype=float),
        penetrations=np.asarray(pens, dtype=float),
        beliefs=beliefs,
        plan_times=np.asarray(times, dtype=float),
        failed=failed,
        failure_msg=msg,
    )


# ---------------------------------------------------------------------------
# true worlds
# ---------------------------------------------------------------------------


@dataclass
class FailureWorld:
    """Free-flyer whose thruster pairs die for good at random.

    Failures strike at the start of a step, matching the filter's
    predict-then-correct update order.  ``initial_mask`` is the state at
    episode start; the initial belief is a point mass on
    ``init_belief_mask`` (pass the same value to model a controller that
    knows the starting condition).
    """

    plant: object
    x_start: np.ndarray
    p_fail: float = 0.05
    initial_mask: int = 0
    init_belief_mask: int = 0
    n_pairs: int = 4
    resid_std: float = 0.05
    _mask: int = field(default=0, init=False, repr=False)

    def reset(self, rng):
        self._mask = int(self.initial_mask)

    def init_belief(self, rng) -> DiscreteBelief:
        w = np.zeros(1 << self.n_pairs)
        w[self.init_belief_mask] = 1.0
        return DiscreteBelief(w, self.n_pairs)

    def step_true(self, x, u, rng):
        working = [k for k in range(self.n_pairs)
                   if not (self._mask >> k) & 1]
        for k in working:
            if rng.random() < self.p_fail:
                self._mask |= 1 << k
        return dynamics._plant_step(self.plant, x, u, self._mask)

    def update_belief(self, belief, x, u, x_next, rng):
        return bayes_update(belief, self.p_fail, (x, u, x_next),
                            self.plant, self.resid_std)

    def reset_belief(self, belief) -> DiscreteBelief:
        n = 1 << self.n_pairs
        return DiscreteBelief(np.full(n, 1.0 / n), self.n_pairs)

    @property
    def true_mask(self) -> int:
        return self._mask


@dataclass
class WindWorld:
    """Quadrotor in a gust field that evolves by the same recursion the
    planner samples from; the current gust is fully observed."""

    plant: object
    x_start: np.ndarray
    alpha: float = 0.9
    noise_var: float = 2.0
    stationary_start: bool = True
    _wind: np.ndarray = field(default_factory=lambda: np.zeros(2),
                              init=False, repr=False)

    def reset(self, rng):
        if self.stationary_start:
            std = np.sqrt(self.noise_var / (1.0 - self.alpha ** 2))
            self._wind = rng.normal(0.0, std, 2)
        else:
            self._wind = np.zeros(2)

    def init_belief(self, rng) -> OUProcess:
        return OUProcess(self.alpha, self.noise_var, self._wind.copy())

    def step_true(self, x, u, rng):
        x_next = dynamics._plant_step(self.plant, x, u, self._wind)
        self._wind = (self.alpha * self._wind
                      + rng.normal(0.0, np.sqrt(self.noise_var), 2))
        return x_next

    def update_belief(self, belief, x, u, x_next, rng) -> OUProcess:
        return OUProcess(self.alpha, self.noise_var, self._wind.copy())

    def reset_belief(self, belief) -> OUProcess:
        return OUProcess(self.alpha, self.noise_var, self._wind.copy())

    @property
    def true_wind(self) -> np.ndarray:
        return self._wind.copy()


@dataclass
class SensingWorld:
    """Deterministic vehicle whose position is known only up to a fixed
    offset cloud, narrowed online by four body-frame range sensors.

    Position offsets are invariant under both plants' dynamics (position
    never feeds back into the derivatives), so hypothesis i always sits at
    the true state plus its initial deviation; the truth carries deviation
    zero.  Hypotheses inside a wall are scored with an unattainable
    prediction, driving their weight to zero.
    """

    plant: object
    x_start: np.ndarray
    walls: tuple
    sensor: RangeSensor
    cloud_std: float
    cloud_size: int

    def reset(self, rng):
        pass

    def init_belief(self, rng) -> PositionBelief:
        devs = np.zeros((self.cloud_size, 2))
        devs[1:] = rng.normal(0.0, self.cloud_std, (self.cloud_size - 1, 2))
        w = np.full(self.cloud_size, 1.0 / self.cloud_size)
        return PositionBelief(devs, w, index_of_truth=0)

    def step_true(self, x, u, rng):
        return dynamics._plant_step(self.plant, x, u, None)

    def _predicted(self, belief: PositionBelief, x_true):
        quiet = RangeSensor(0.0, self.sensor.sigma_filter,
                            self.sensor.max_range)
        pred = np.empty((belief.size, 4))
        for i, dv in enumerate(belief.deviations):
            xi = np.asarray(x_true, dtype=float).copy()
            xi[:2] += dv
            try:
                pred[i] = range_measure(xi, self.walls, quiet)
            except ValueError:
                pred[i] = 1e6  # hypothesis inside a wall: refuted
        return pred

    def update_belief(self, belief, x, u, x_next, rng) -> PositionBelief:
        try:
            measured = range_measure(x_next, self.walls, self.sensor, rng)
        except ValueError:
            return belief  # vehicle inside a wall: sensors blind
        predicted = self._predicted(belief, x_next)
        return pf_update(belief, measured, predicted,
                         self.sensor.sigma_filter)

    def reset_belief(self, belief) -> PositionBelief:
        w = np.full(belief.size, 1.0 / belief.size)
        return PositionBelief(belief.deviations, w, belief.index_of_truth)


@dataclass
class NominalWorld:
    """Fully observed plant with no disturbance at all.

    Used when the uncertainty lives in the planner's dynamics models
    (learning) rather than in the world; transitions are noise-free."""

    plant: object
    x_start: np.ndarray

    def reset(self, rng):
        pass

    def init_belief(self, rng):
        return None

    def step_true(self, x, u, rng):
        return dynamics._plant_step(self.plant, x, u, None)

    def update_belief(self, belief, x, u, x_next, rng):
        return belief

    def reset_belief(self, belief):
        return belief
