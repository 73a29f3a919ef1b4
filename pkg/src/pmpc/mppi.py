"""Sampling-based planner baseline: iterative path-integral updates.

Each iteration perturbs a nominal action sequence with Gaussian noise,
scores every perturbed sequence on every dynamics realization, and moves
the nominal by the exponentially-weighted average of the perturbations.
Actions up to the consensus index are updated with model-averaged weights
(one shared sequence); actions past it are re-weighted separately per
model, mirroring the shared/free split of the convex planner.

Perturbations are drawn antithetically (each noise draw appears with both
signs), so the update collapses to ``(w_plus - w_minus) @ eps`` and a flat
cost landscape leaves the nominal sequence exactly unchanged instead of
performing a random walk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics
from .costs import CostModel, stage_cost
from .dynamics import PlantModel
from .scp import Particle, _action_bounds, _expand_disturbance, _plant_for

__all__ = ["MPPIParams", "MPPIPlan", "mppi_plan", "softmax_weights"]


@dataclass
class MPPIParams:
    """Budget and shaping knobs for one planning call."""

    iterations: int
    n_sequences: int
    sigma: float
    lam: float
    N: int
    Nc: int

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iteration count must be nonnegative")
        if self.n_sequences < 2 or self.n_sequences % 2:
            raise ValueError("sequence count must be even (antithetic "
                             "pairs) and at least 2")
        if self.sigma <= 0 or self.lam <= 0:
            raise ValueError("sampling std and temperature must be positive")
        if not 0 <= self.Nc <= self.N:
            raise ValueError("need 0 <= Nc <= N")

    @property
    def shared_len(self) -> int:
        """Number of leading actions updated jointly across models."""
        return min(self.Nc + 1, self.N + 1)


@dataclass
class MPPIPlan:
    actions: np.ndarray        # (M, N+1, nu), shared on the leading block
    first_action: np.ndarray   # (nu,)
    expected_cost: float       # weight-averaged cost of the final plan


def softmax_weights(costs, lam: float) -> np.ndarray:
    """Exponential weights ``exp(-(c - min c)/lam)``, normalized.

    Subtracting the minimum cost first makes the weights invariant to a
    constant cost offset and immune to underflow of every entry at once.
    """
    costs = np.asarray(costs, dtype=float)
    w = np.exp(-(costs - costs.min()) / lam)
    return w / w.sum()


def _rollout_set(particle: Particle, plant, us_batch, H):
    """States for one dynamics realization under a batch of action plans."""
    S = us_batch.shape[0]
    model = _plant_for(particle, plant)
    dist = _expand_disturbance(particle.disturbance, H)
    if isinstance(model, PlantModel) and particle.model is None:
        x0s = np.tile(particle.x0, (S, 1))
        if dist is None:
            d = None
        else:
            d = np.tile(np.asarray(dist)[:H], (S,) + (1,) * np.asarray(
                dist).ndim)
        return dynamics.rollout_batch(model, x0s, us_batch, d)
    hook = getattr(model, "rollout_batch", None)
    if hook is not None:
        return hook(np.tile(particle.x0, (S, 1)), us_batch, dist)
    return np.stack([dynamics.rollout(model, particle.x0, us_batch[s], dist)
                     for s in range(S)])


def mppi_plan(particles: list[Particle], plant, cost: CostModel,
              params: MPPIParams, rng, nominal=None) -> MPPIPlan:
    """Plan with iterative importance-weighted action averaging.

    ``nominal`` seeds the search: absent it starts at zeros; a (N+1, nu)
    array (or an object with an ``actions`` attribute, e.g. a previous
    plan's trajectory) is shared across all models.
    """
    M = len(particles)
    if M < 1:
        raise ValueError("need at least one dynamics realization")
    N, H = params.N, params.N + 1
    lo, hi = _action_bounds(plant, _nu_of(plant, nominal, particles))
    nu = lo.shape[0]

    if nominal is None:
        base = np.zeros((H, nu))
    else:
        base = np.asarray(getattr(nominal, "actions", nominal), dtype=float)
        if base.shape != (H, nu):
            raise ValueError(f"nominal actions must be ({H}, {nu})")
    plans = np.tile(base, (M, 1, 1))

    beta = np.array([p.weight for p in particles], dtype=float)
    total = beta.sum()
    if total <= 0:
        raise ValueError("particle weights must have positive mass")
    beta = beta / total

    k = params.shared_len
    half = params.n_sequences // 2
    S = params.n_sequences

    for _ in range(params.iterations):
        eps_half = rng.normal(0.0, params.sigma, (half, H, nu))
        eps = np.concatenate([eps_half, -eps_half], axis=0)
        model_costs = np.empty((M, S))
        cands = np.empty((M, S, H, nu))
        for m, p in enumerate(particles):
            cands[m] = np.clip(plans[m][None] + eps, lo, hi)
            xs = _rollout_set(p, plant, cands[m], H)
            sc = stage_cost(cost, xs[:, :H], cands[m])  # (S, H)
            model_costs[m] = sc.sum(axis=1)
        avg_costs = beta @ model_costs
        w_shared = softmax_weights(avg_costs, params.lam)
        dw = w_shared[:half] - w_shared[half:]
        delta = np.einsum("s,sjk->jk", dw, eps_half)
        plans[:, :k] = np.clip(plans[0, :k] + delta[:k], lo, hi)
        if k < H:
            for m in range(M):
                w_m = softmax_weights(model_costs[m], params.lam)
                dw_m = w_m[:half] - w_m[half:]
                delta_m = np.einsum("s,sjk->jk", dw_m, eps_half[:, k:])
                plans[m, k:] = np.clip(plans[m, k:] + delta_m, lo, hi)

    final_costs = np.empty(M)
    for m, p in enumerate(particles):
        xs = _rollout_set(p, plant, plans[m][None], H)
        final_costs[m] = stage_cost(cost, xs[0, :H], plans[m]).sum()
    return MPPIPlan(actions=plans,
                    first_action=np.clip(plans[0, 0].copy(), lo, hi),
                    expected_cost=float(beta @ final_costs))


def _nu_of(plant, nominal, particles):
    if nominal is not None:
        arr = np.asarray(getattr(nominal, "actions", nominal))
        return arr.shape[-1]
    lower = getattr(plant, "u_lower", None)
    if lower is not None:
        return np.asarray(lower).shape[0]
    raise ValueError("cannot infer action dimension; pass a nominal")
