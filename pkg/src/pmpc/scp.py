"""Sequential convex programming over particle bundles with partial consensus.

A plan couples M sampled dynamics realizations ("particles") through a
single optimization: each particle carries its own state trajectory, but
the first ``Nc+1`` actions are constrained equal across particles.  Each
outer iteration linearizes dynamics and the non-convex cost term around
the current reference, solves one sparse QP in the stacked deviation
variables, and applies the deviations.  Trust-region penalties
``rho_x, rho_u`` damp the update; defect terms in the dynamics rows let
the reference be dynamically infeasible (so a static initial guess is
fine).  After convergence the returned states are recomputed by rolling
the true nonlinear dynamics with the returned actions, so reported
trajectories never contain linearization artifacts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import dynamics
from .costs import CostModel, obstacle_affines
from .dynamics import PlantModel, linearize, rollout
from .errors import PMPCError, QPInfeasibleError, ScpDivergenceError
from .qpsolver import SparseQP, solve_qp


@dataclass
class Trajectory:
    """A state/action pair: states (H+1, nx), actions (H, nu)."""

    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise ValueError("states and actions must be 2-D arrays")
        if self.states.shape[0] != self.actions.shape[0] + 1:
            raise ValueError("need exactly one more state than actions")

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def copy(self) -> "Trajectory":
        return Trajectory(self.states.copy(), self.actions.copy())


@dataclass
class Particle:
    """One sampled realization: initial state, per-step disturbance, weight.

    ``disturbance`` is indexed by step (failure-mask ints, wind rows, ...)
    or None.  ``model`` optionally overrides the plant for this particle
    (e.g. a learned-ensemble member).
    """

    x0: np.ndarray
    disturbance: Any = None
    weight: float = 1.0
    model: Any = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        if self.weight < 0:
            raise ValueError("particle weight must be >= 0")


@dataclass
class SCPConfig:
    N: int = 20
    Nc: int = 20
    rho_x: float = 10.0
    alpha_ratio: float = 10.0
    rho_u: float | None = None
    eps: float | None = None            # None -> 1e-3 * M at solve time
    max_scp_iter: int = 30
    consensus_inclusive: bool = True
    qp_eps_abs: float = 1e-6
    qp_eps_rel: float = 1e-6
    qp_max_iter: int = 20000

    def __post_init__(self):
        if not 0 <= self.Nc <= self.N:
            raise ValueError("need 0 <= Nc <= N")
        if self.rho_u is None:
            self.rho_u = self.rho_x / self.alpha_ratio
        if self.rho_x <= 0 or self.rho_u <= 0:
            raise ValueError("trust-region weights must be positive")
        if self.eps is not None and self.eps <= 0:
            raise ValueError("eps must be positive")

    def consensus_indices(self) -> np.ndarray:
        """Action indices shared across particles."""
        hi = self.Nc + 1 if self.consensus_inclusive else self.Nc
        return np.arange(min(hi, self.N + 1))


@dataclass
class IterStats:
    iteration: int
    deviation: float
    qp_iterations: int
    qp_status: str
    qp_objective: float


@dataclass
class PlanResult:
    trajectories: list[Trajectory]
    converged: bool
    scp_iterations: int
    deviation: float
    stats: list[IterStats] = field(default_factory=list)


@dataclass
class VarMap:
    """Index map into the stacked deviation vector.

    Per-particle layout: [dx0 du0 dx1 du1 ... dxN duN dx_{N+1}]; the
    obstacle-penalty hinge slacks (one per particle, stage, and obstacle)
    sit in a single block after all particle blocks.
    """

    M: int
    N: int
    nx: int
    nu: int
    n_obs: int = 0

    @property
    def per_particle(self) -> int:
        return (self.N + 1) * (self.nx + self.nu) + self.nx

    @property
    def total(self) -> int:
        return self.M * self.per_particle + self.M * (self.N + 1) * self.n_obs

    def x_slice(self, i: int, j: int) -> slice:
        base = i * self.per_particle + j * (self.nx + self.nu)
        return slice(base, base + self.nx)

    def u_slice(self, i: int, j: int) -> slice:
        base = i * self.per_particle + j * (self.nx + self.nu) + self.nx
        return slice(base, base + self.nu)

    def slack_index(self, i: int, j: int, o: int) -> int:
        return (self.M * self.per_particle
                + (i * (self.N + 1) + j) * self.n_obs + o)


@dataclass
class ParticleLinearization:
    """Dynamics data for one particle at its current reference."""

    traj: Trajectory          # reference: states (N+2, nx), actions (N+1, nu)
    As: np.ndarray            # (N+1, nx, nx)
    Bs: np.ndarray            # (N+1, nx, nu)
    fnext: np.ndarray         # (N+1, nx): step evaluated at the reference
    u_lower: np.ndarray
    u_upper: np.ndarray


@dataclass
class CostLinearization:
    """Cost data for one particle at its current reference."""

    Q: np.ndarray
    R: np.ndarray
    x_goal: np.ndarray
    pen_vals: np.ndarray      # (n_obs, N+1): signed nearest-edge values
    pen_grads: np.ndarray     # (n_obs, N+1, 2): active-face gradients
    pen_weights: np.ndarray   # (n_obs,): penalty weights


def initial_guess(x0, x_goal, N: int, kind: str = "static", *,
                  action_dim: int) -> Trajectory:
    """Reference to start from: ``static`` repeats x0, ``interpolate``
    moves linearly to x_goal over the costed states.  Actions are zero
    either way; dynamic feasibility is not required."""
    x0 = np.asarray(x0, dtype=float).ravel()
    x_goal = np.asarray(x_goal, dtype=float).ravel()
    if kind == "static":
        states = np.tile(x0, (N + 2, 1))
    elif kind == "interpolate":
        t = np.minimum(np.arange(N + 2), max(N, 1)) / max(N, 1)
        states = x0 + t[:, None] * (x_goal - x0)
    else:
        raise ValueError(f"unknown guess kind {kind!r}")
    return Trajectory(states=states, actions=np.zeros((N + 1, action_dim)))


def build_qp(particles: Sequence[Particle],
             linearizations: Sequence[ParticleLinearization],
             cost_linearizations: Sequence[CostLinearization],
             config: SCPConfig) -> tuple[SparseQP, VarMap]:
    """Assemble the stacked deviation QP.

    Objective: (1/M) sum_i { M*w_i * [convex stage cost at ref+delta
    + sum_o weight_o * t_ijo] + rho_x |dx|^2 + rho_u |du|^2 }, stages
    0..N, where each hinge slack t_ijo >= max(0, pen_val + pen_grad . dp)
    models the linearized obstacle penalty.
    Rows: initial-condition equalities, linearized dynamics equalities
    with defect right-hand sides, action boxes, hinge/positivity rows for
    the slacks, and consensus chains du_i = du_{i+1} on every consensus
    index.
    """
    M = len(particles)
    if not (M == len(linearizations) == len(cost_linearizations)):
        raise ValueError("per-particle sequences must have equal length")
    w = np.array([p.weight for p in particles], dtype=float)
    if abs(w.sum() - 1.0) > 1e-6:
        raise ValueError("particle weights must sum to 1")
    N = config.N
    nx = linearizations[0].traj.states.shape[1]
    nu = linearizations[0].traj.actions.shape[1]
    n_obs = cost_linearizations[0].pen_weights.shape[0]
    vm = VarMap(M=M, N=N, nx=nx, nu=nu, n_obs=n_obs)
    cons_idx = config.consensus_indices()

    ref_u0 = linearizations[0].traj.actions
    for lin in linearizations[1:]:
        if not np.array_equal(ref_u0[cons_idx], lin.traj.actions[cons_idx]):
            raise ValueError(
                "reference actions differ across particles on consensus "
                "indices")

    # ---- objective ----
    rho_x = config.rho_x / M
    rho_u = config.rho_u / M
    Q = cost_linearizations[0].Q
    R = cost_linearizations[0].R
    qmask = (Q != 0) | np.eye(nx, dtype=bool)
    rmask = (R != 0) | np.eye(nu, dtype=bool)
    qmr, qmc = np.nonzero(qmask)
    rmr, rmc = np.nonzero(rmask)
    stage = nx + nu
    p_rows, p_cols, p_vals = [], [], []
    qvec = np.zeros(vm.total)
    for i in range(M):
        cl = cost_linearizations[i]
        traj = linearizations[i].traj
        Qblk = 2.0 * (w[i] * cl.Q + rho_x * np.eye(nx))
        Rblk = 2.0 * (w[i] * cl.R + rho_u * np.eye(nu))
        base = i * vm.per_particle
        joff = base + np.arange(N + 1) * stage                    # (N+1,)
        p_rows.append((joff[:, None] + qmr[None, :]).ravel())
        p_cols.append((joff[:, None] + qmc[None, :]).ravel())
        p_vals.append(np.tile(Qblk[qmask], N + 1))
        p_rows.append((joff[:, None] + nx + rmr[None, :]).ravel())
        p_cols.append((joff[:, None] + nx + rmc[None, :]).ravel())
        p_vals.append(np.tile(Rblk[rmask], N + 1))
        qx = w[i] * (2.0 * (traj.states[: N + 1] - cl.x_goal) @ cl.Q)
        qu = w[i] * (2.0 * traj.actions @ cl.R)
        for j in range(N + 1):
            qvec[vm.x_slice(i, j)] = qx[j]
            qvec[vm.u_slice(i, j)] = qu[j]
        if n_obs:
            s0 = vm.slack_index(i, 0, 0)
            s1 = vm.slack_index(i, N, n_obs - 1) + 1
            qvec[s0:s1] = w[i] * np.tile(cl.pen_weights, N + 1)
    P = sp.csc_matrix(
        (np.concatenate(p_vals),
         (np.concatenate(p_rows), np.concatenate(p_cols))),
        shape=(vm.total, vm.total))

    # ---- constraint rows ----
    a_rows, a_cols, a_vals, lo, hi = [], [], [], [], []
    r0 = 0
    ar_x = np.arange(nx)
    ar_u = np.arange(nu)
    for i in range(M):
        lin = linearizations[i]
        base = i * vm.per_particle
        # initial condition: dx0 = x0_i - ref
        a_rows.append(r0 + ar_x)
        a_cols.append(base + ar_x)
        a_vals.append(np.ones(nx))
        d0 = particles[i].x0 - lin.traj.states[0]
        lo.append(d0)
        hi.append(d0)
        r0 += nx
        # dynamics: A dx_j + B du_j - dx_{j+1} = ref_{j+1} - fnext_j
        jrow = r0 + (np.arange(N + 1) * nx)[:, None, None]
        xo = base + (np.arange(N + 1) * stage)[:, None, None]
        a_rows.append((jrow + ar_x[None, :, None]
                       + np.zeros((1, 1, nx), int)).ravel())
        a_cols.append((xo + ar_x[None, None, :]
                       + np.zeros((1, nx, 1), int)).ravel())
        a_vals.append(lin.As.ravel())
        a_rows.append((jrow + ar_x[None, :, None]
                       + np.zeros((1, 1, nu), int)).ravel())
        a_cols.append((xo + nx + ar_u[None, None, :]
                       + np.zeros((1, nx, 1), int)).ravel())
        a_vals.append(lin.Bs.ravel())
        nxt = base + (np.arange(1, N + 2) * stage)[:, None]
        a_rows.append(((r0 + (np.arange(N + 1) * nx)[:, None])
                       + ar_x[None, :]).ravel())
        a_cols.append((nxt + ar_x[None, :]).ravel())
        a_vals.append(np.full((N + 1) * nx, -1.0))
        defect_rhs = lin.traj.states[1:] - lin.fnext
        lo.append(defect_rhs.ravel())
        hi.append(defect_rhs.ravel())
        r0 += (N + 1) * nx
        # action boxes: u_lower - ref_u <= du <= u_upper - ref_u
        uo = base + (np.arange(N + 1) * stage)[:, None] + nx
        a_rows.append(np.arange(r0, r0 + (N + 1) * nu))
        a_cols.append((uo + ar_u[None, :]).ravel())
        a_vals.append(np.ones((N + 1) * nu))
        lo.append((lin.u_lower - lin.traj.actions).ravel())
        hi.append((lin.u_upper - lin.traj.actions).ravel())
        r0 += (N + 1) * nu
        if n_obs:
            cl = cost_linearizations[i]
            n_slack = (N + 1) * n_obs
            srange = np.arange(vm.slack_index(i, 0, 0),
                               vm.slack_index(i, N, n_obs - 1) + 1)
            # hinge: pen_grad . dp - t <= -pen_val  (t >= linearized depth)
            hrow = np.arange(r0, r0 + n_slack)
            pos_cols = (base + (np.arange(N + 1) * stage)[None, :, None]
                        + np.arange(2)[None, None, :])          # (1, N+1, 2)
            a_rows.append(np.repeat(hrow, 2))
            a_cols.append(np.broadcast_to(
                pos_cols, (n_obs, N + 1, 2)).transpose(1, 0, 2).ravel())
            a_vals.append(cl.pen_grads.transpose(1, 0, 2).ravel())
            a_rows.append(hrow)
            a_cols.append(srange)
            a_vals.append(np.full(n_slack, -1.0))
            lo.append(np.full(n_slack, -np.inf))
            hi.append(-cl.pen_vals.T.ravel())
            r0 += n_slack
            # positivity: t >= 0
            a_rows.append(np.arange(r0, r0 + n_slack))
            a_cols.append(srange)
            a_vals.append(np.ones(n_slack))
            lo.append(np.zeros(n_slack))
            hi.append(np.full(n_slack, np.inf))
            r0 += n_slack
    for j in cons_idx:
        for i in range(M - 1):
            s_a = i * vm.per_particle + j * stage + nx
            s_b = (i + 1) * vm.per_particle + j * stage + nx
            a_rows.append(np.repeat(np.arange(r0, r0 + nu), 2))
            a_cols.append(np.stack([s_a + ar_u, s_b + ar_u], axis=1).ravel())
            a_vals.append(np.tile([1.0, -1.0], nu))
            lo.append(np.zeros(nu))
            hi.append(np.zeros(nu))
            r0 += nu
    A = sp.csc_matrix(
        (np.concatenate(a_vals),
         (np.concatenate(a_rows), np.concatenate(a_cols))),
        shape=(r0, vm.total))
    qp = SparseQP(P=P, q=qvec, A=A,
                  lb=np.concatenate(lo), ub=np.concatenate(hi))
    return qp, vm


def _plant_for(particle: Particle, plant) -> Any:
    return plant if particle.model is None else particle.model


def _expand_disturbance(d, H: int):
    """Promote a scalar disturbance (constant failure mask) to a sequence."""
    if d is None:
        return None
    if np.ndim(d) == 0:
        return np.repeat(np.asarray(d)[None], H, axis=0)
    return d


def _action_bounds(plant, nu: int) -> tuple[np.ndarray, np.ndarray]:
    lo = getattr(plant, "u_lower", None)
    hi = getattr(plant, "u_upper", None)
    if lo is None or hi is None:
        return np.full(nu, -np.inf), np.full(nu, np.inf)
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def _linearize_particles(particles, dists, plant, xs, us
                         ) -> list[ParticleLinearization]:
    """Dynamics linearizations for every particle at its reference.

    xs: (M, N+2, nx); us: (M, N+1, nu).  Batches all particles into one
    call when they share a closed-form plant."""
    M, H = us.shape[0], us.shape[1]
    nu = us.shape[2]
    batchable = isinstance(plant, PlantModel) and all(
        p.model is None for p in particles)
    out = []
    if batchable:
        if plant.kind == "freeflyer":
            dist = np.zeros((M, H), dtype=np.int64)
        else:
            dist = np.zeros((M, H, 2))
        for i in range(M):
            if dists[i] is not None:
                dist[i] = np.asarray(dists[i])[:H]
        As, Bs, fnext = dynamics.linearize_rollout(plant, xs[:, :H], us, dist)
        lo, hi = _action_bounds(plant, nu)
        for i in range(M):
            out.append(ParticleLinearization(
                traj=Trajectory(xs[i], us[i]), As=As[i], Bs=Bs[i],
                fnext=fnext[i], u_lower=lo, u_upper=hi))
        return out
    for i, p in enumerate(particles):
        plant_i = _plant_for(p, plant)
        if hasattr(plant_i, "linearize_rollout"):
            As, Bs, fnext = plant_i.linearize_rollout(
                xs[i, :H], us[i], dists[i])
        else:
            nx = xs.shape[2]
            As = np.empty((H, nx, nx))
            Bs = np.empty((H, nx, nu))
            fnext = np.empty((H, nx))
            for j in range(H):
                d = None if dists[i] is None else dists[i][j]
                lin = linearize(plant_i, xs[i, j], us[i, j], d)
                As[j], Bs[j] = lin.A, lin.B
                fnext[j] = dynamics._plant_step(plant_i, xs[i, j], us[i, j], d)
        lo, hi = _action_bounds(plant_i, nu)
        out.append(ParticleLinearization(
            traj=Trajectory(xs[i], us[i]), As=As, Bs=Bs, fnext=fnext,
            u_lower=lo, u_upper=hi))
    return out


def _cost_linearizations(cost: CostModel, xs, M, N) -> list[CostLinearization]:
    weights = np.array([r.weight for r in cost.obstacles], dtype=float)
    out = []
    for i in range(M):
        vals, grads = obstacle_affines(cost, xs[i, : N + 1])
        out.append(CostLinearization(
            Q=cost.stage.Q, R=cost.stage.R, x_goal=cost.stage.x_goal,
            pen_vals=vals, pen_grads=grads, pen_weights=weights))
    return out


def scp_solve(particles: Sequence[Particle], guess, plant, cost: CostModel,
              config: SCPConfig, *, trace=None, qp_warm: bool = True
              ) -> PlanResult:
    """Iterate linearize / solve QP / update until the summed deviation
    norm drops below eps.

    ``guess`` is one Trajectory (shared across particles) or a sequence of
    M Trajectories whose actions agree on the consensus indices.  Raises
    :class:`QPInfeasibleError` (with the iteration index) if a subproblem
    is infeasible, and :class:`ScpDivergenceError` if the deviation norm
    grows five iterations in a row.
    """
    M = len(particles)
    N = config.N
    eps = config.eps if config.eps is not None else 1e-3 * M
    guesses = [guess] * M if isinstance(guess, Trajectory) else list(guess)
    if len(guesses) != M:
        raise ValueError("need one guess per particle")
    nx = guesses[0].states.shape[1]
    nu = guesses[0].actions.shape[1]
    for g in guesses:
        if g.states.shape != (N + 2, nx) or g.actions.shape != (N + 1, nu):
            raise ValueError("guess shape inconsistent with config.N")
    xs = np.stack([g.states for g in guesses]).astype(float)
    us = np.stack([g.actions for g in guesses]).astype(float)
    cons_idx = config.consensus_indices()
    dists = [_expand_disturbance(p.disturbance, N + 1) for p in particles]

    trace_fh = None
    if trace is not None:
        trace_fh = open(trace, "w") if isinstance(trace, (str, bytes)) else trace
        trace_fh.write("iteration,deviation,qp_iterations,qp_objective\n")

    stats: list[IterStats] = []
    converged = False
    deviation = math.inf
    grow_count = 0
    prev_dev = None
    warm_y = None
    it = 0
    try:
        for it in range(1, config.max_scp_iter + 1):
            lins = _linearize_particles(particles, dists, plant, xs, us)
            costs_lin = _cost_linearizations(cost, xs, M, N)
            qp, vm = build_qp(particles, lins, costs_lin, config)
            sol = solve_qp(qp, eps_abs=config.qp_eps_abs,
                           eps_rel=config.qp_eps_rel,
                           max_iter=config.qp_max_iter, y0=warm_y)
            if sol.status == "infeasible":
                raise QPInfeasibleError(
                    f"convexified subproblem infeasible at SCP iteration {it}",
                    scp_iteration=it)
            if qp_warm:
                warm_y = sol.y
            dxs = np.empty_like(xs)
            dus = np.empty_like(us)
            for i in range(M):
                for j in range(N + 2):
                    dxs[i, j] = sol.x[vm.x_slice(i, j)]
                for j in range(N + 1):
                    dus[i, j] = sol.x[vm.u_slice(i, j)]
            deviation = float(
                np.linalg.norm(dxs[:, : N + 1], axis=2).sum()
                + np.linalg.norm(dus, axis=2).sum())
            xs += dxs
            us += dus
            # kill solver roundoff so consensus actions are exactly equal
            us[:, cons_idx] = us[:, cons_idx].mean(axis=0, keepdims=True)
            assert all(
                np.array_equal(us[0][cons_idx], us[i][cons_idx])
                for i in range(1, M))
            stats.append(IterStats(
                iteration=it, deviation=deviation,
                qp_iterations=sol.iterations, qp_status=sol.status,
                qp_objective=qp.objective(sol.x)))
            if trace_fh is not None:
                trace_fh.write(
                    f"{it},{deviation:.17g},{sol.iterations},"
                    f"{qp.objective(sol.x):.17g}\n")
            if deviation < eps:
                converged = True
                break
            if prev_dev is not None and deviation > prev_dev:
                grow_count += 1
                if grow_count >= 5:
                    raise ScpDivergenceError(
                        "deviation norm grew 5 consecutive iterations "
                        f"(last {deviation:.3g}): increase rho")
            else:
                grow_count = 0
            prev_dev = deviation
    finally:
        if trace_fh is not None and trace_fh is not trace:
            trace_fh.close()

    # report trajectories consistent with the true nonlinear dynamics
    trajectories = []
    for i, p in enumerate(particles):
        states = rollout(_plant_for(p, plant), p.x0, us[i], dists[i])
        trajectories.append(Trajectory(states=states, actions=us[i].copy()))
    return PlanResult(trajectories=trajectories, converged=converged,
                      scp_iterations=it, deviation=deviation, stats=stats)


def rho_bisection(problem: Callable[[float], Any], rho_lo: float,
                  rho_hi: float, trials: int) -> float:
    """Smallest tested trust-region weight for which ``problem`` converges.

    ``problem(rho_x)`` runs a plan attempt and returns a PlanResult (or
    anything with a ``converged`` attribute, or a bool); planner errors
    count as failures.  Bisection is on a log scale; with ``trials=0`` the
    conservative upper end is returned untested.
    """
    if not rho_lo < rho_hi:
        raise ValueError("need rho_lo < rho_hi")
    if trials <= 0:
        return rho_hi

    def ok(r: float) -> bool:
        try:
            res = problem(r)
        except PMPCError:
            return False
        return bool(getattr(res, "converged", res))

    if ok(rho_lo):
        return rho_lo
    if trials == 1 or not ok(rho_hi):
        raise PMPCError("no tested trust-region weight converged")
    lo, hi = rho_lo, rho_hi
    for _ in range(trials - 2):
        mid = math.sqrt(lo * hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi
