"""Exact two-scenario toy system showing why the consensus horizon matters.

A three-state chain: state 0 is safe but costs 1 per step, state 1 is free
but demands the action match the disturbance bit exactly — mismatching
falls into the absorbing violation state 2.  The two equally-likely
disturbance sequences agree (all zero) before a reveal step and alternate
complementarily afterwards, so no shared action can keep state 1 alive
once they diverge.

A planner whose shared-action window ends before the reveal step happily
descends to state 1 (its free tail pretends it will know the bit in
time); replanning cannot undo the descent because state 1 has no way
back, and the plant violates at the reveal.  A window covering the reveal
step postpones the descent forever and stays safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

__all__ = ["ToyMDP", "ConsensusPlan", "exhaustive_plan", "simulate_receding",
           "verify_theorem", "INFINITE_COST"]

# Saturating by IEEE semantics: inf + finite = inf, ordered above all
# finite costs. Never produced by overflowing finite arithmetic.
INFINITE_COST = math.inf

VIOLATION_STATE = 2


@dataclass(frozen=True)
class ToyMDP:
    """States {0,1} plus absorbing violation state 2; actions/bits {0,1}."""

    n_star: int

    def __post_init__(self):
        if self.n_star < 2:
            raise ValueError("the reveal step must be at least 2")

    @staticmethod
    def step(x: int, u: int, w: int) -> int:
        if x == 0:
            return 1 if u else 0
        if x == 1:
            return 1 if u == w else VIOLATION_STATE
        return VIOLATION_STATE

    @staticmethod
    def cost(x: int) -> float:
        if x == 0:
            return 1.0
        if x == 1:
            return 0.0
        return INFINITE_COST

    def disturbance(self, scenario: int, j: int) -> int:
        """Bit of scenario 0 or 1 at absolute step j."""
        if j < self.n_star:
            return 0
        return (j + scenario) % 2


@dataclass(frozen=True)
class ConsensusPlan:
    shared: tuple          # actions at indices 0..min(Nc, N)
    tails: tuple           # one free action tuple per scenario
    expected_cost: float

    @property
    def first_action(self) -> int:
        return self.shared[0]


def _rollout_cost(toy: ToyMDP, x0: int, t0: int, actions, scenario: int
                  ) -> float:
    """Sum of state costs after each action; saturates at violation."""
    x = x0
    total = 0.0
    for j, u in enumerate(actions):
        x = toy.step(x, u, toy.disturbance(scenario, t0 + j))
        if x == VIOLATION_STATE:
            return INFINITE_COST
        total += toy.cost(x)
    return total


def exhaustive_plan(toy: ToyMDP, x0: int, t0: int, N: int, Nc: int
                    ) -> ConsensusPlan:
    """Exact minimizer of the expected two-scenario cost over all plans
    whose first min(Nc, N)+1 actions are shared.

    Enumerates every shared prefix (free tails optimized per scenario);
    ties go to the lexicographically smallest actions, i.e. toward 0.
    """
    if x0 not in (0, 1, VIOLATION_STATE):
        raise ValueError("state must be 0, 1, or 2")
    if Nc < 0 or N < 0:
        raise ValueError("need N >= 0 and Nc >= 0")
    n_shared = min(Nc, N) + 1
    n_free = (N + 1) - n_shared
    best = None
    for shared in product((0, 1), repeat=n_shared):
        tails, exp = [], 0.0
        for scenario in (0, 1):
            tail_best = None
            for tail in product((0, 1), repeat=n_free):
                c = _rollout_cost(toy, x0, t0, shared + tail, scenario)
                if tail_best is None or c < tail_best[0]:
                    tail_best = (c, tail)
            tails.append(tail_best[1])
            exp += 0.5 * tail_best[0]
        if best is None or exp < best.expected_cost:
            best = ConsensusPlan(shared=shared, tails=tuple(tails),
                                 expected_cost=exp)
    return best


def simulate_receding(toy: ToyMDP, Nc: int, true_scenario: int, T: int,
                      N: int) -> list[int]:
    """Replan each step, execute the shared first action under one true
    disturbance sequence; returns the visited states (violation stops)."""
    x = 0
    states = [x]
    for t in range(T):
        plan = exhaustive_plan(toy, x, t, N, Nc)
        x = toy.step(x, plan.first_action,
                     toy.disturbance(true_scenario, t))
        states.append(x)
        if x == VIOLATION_STATE:
            break
    return states


def verify_theorem(n_star: int, K: int, N: int | None = None
                   ) -> tuple[bool, bool]:
    """(violates with window K, violates with window n_star), each checked
    under both true disturbance sequences.

    The horizon defaults to n_star + 2 so the reveal step is always
    visible to the planner.
    """
    if n_star < 2:
        raise ValueError("need n_star >= 2")
    if not 1 <= K <= n_star:
        raise ValueError("need 1 <= K <= n_star")
    toy = ToyMDP(n_star)
    if N is None:
        N = n_star + 2
    T = n_star + 4
    results = []
    for nc in (K, n_star):
        violated = False
        for scenario in (0, 1):
            states = simulate_receding(toy, nc, scenario, T, N)
            violated = violated or states[-1] == VIOLATION_STATE
        results.append(violated)
    return tuple(results)
