"""Disturbance processes and the filters that track them online.

Three settings are covered:

* thruster failures — an absorbing Markov chain over 4-bit failure masks
  (bit ``k`` set means thruster pair ``k`` is dead and stays dead),
  tracked by a discrete Bayes filter over all mask hypotheses;
* wind — a first-order autoregressive (Ornstein-Uhlenbeck style) gust
  process, fully observed at the current step but uncertain ahead;
* position offset — a fixed cloud of position deviations reweighted by a
  particle filter from body-frame range measurements.

``sample_particles`` converts the current belief of any setting into the
weighted particle set the planner consumes.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import BeliefCollapseError
from .scp import Particle

__all__ = [
    "OUProcess",
    "DiscreteBelief",
    "PositionBelief",
    "RangeSensor",
    "ou_rollout",
    "failure_rollout",
    "transition_matrix",
    "bayes_update",
    "map_failure_sequence",
    "range_measure",
    "pf_update",
    "sample_particles",
]


# ---------------------------------------------------------------------------
# wind
# ---------------------------------------------------------------------------


@dataclass
class OUProcess:
    """First-order gust recursion ``v <- alpha * v + eps``.

    ``eps`` is zero-mean Gaussian with variance ``noise_var`` per axis, so
    the stationary variance is ``noise_var / (1 - alpha**2)``.
    """

    alpha: float = 0.9
    noise_var: float = 2.0
    state: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("decay must satisfy 0 <= alpha < 1")
        if self.noise_var < 0.0:
            raise ValueError("noise variance must be nonnegative")
        self.state = np.atleast_1d(np.asarray(self.state, dtype=float))


def ou_rollout(proc: OUProcess, N: int, rng) -> np.ndarray:
    """Sample the next ``N`` values of the gust process, shape (N, dim).

    The returned sequence starts one step *after* ``proc.state``; the
    process object is not advanced.
    """
    if N < 1:
        raise ValueError("need at least one step")
    dim = proc.state.shape[0]
    eps = rng.normal(0.0, np.sqrt(proc.noise_var), size=(N, dim))
    # v[j] = alpha^(j+1) v0 + sum_k alpha^(j-k) eps[k]
    out = lfilter([1.0], [1.0, -proc.alpha], eps, axis=0)
    out += proc.alpha ** np.arange(1, N + 1)[:, None] * proc.state
    return out


# ---------------------------------------------------------------------------
# thruster failures
# ---------------------------------------------------------------------------


def failure_rollout(mask: int, p_fail: float, N: int, rng,
                    n_pairs: int = 4) -> np.ndarray:
    """Evolve a failure mask ``N`` transitions forward; entry j is the mask
    after j+1 transitions.  Each still-working pair fails independently
    with probability ``p_fail`` per step and never recovers."""
    if not 0.0 <= p_fail <= 1.0:
        raise ValueError("failure probability must be in [0, 1]")
    mask = int(mask)
    if not 0 <= mask < (1 << n_pairs):
        raise ValueError("mask out of range")
    if N < 1:
        raise ValueError("need at least one step")
    fresh = rng.random((N, n_pairs)) < p_fail
    hit = np.logical_or.accumulate(fresh, axis=0)
    bits = (mask >> np.arange(n_pairs)) & 1
    hit |= bits.astype(bool)
    return (hit << np.arange(n_pairs)).sum(axis=1).astype(np.int64)


def transition_matrix(p_fail: float, n_pairs: int = 4) -> np.ndarray:
    """One-step transition matrix over all ``2**n_pairs`` failure masks.

    ``T[m, m']`` is the probability of moving from mask ``m`` to ``m'``;
    masks can only gain bits, so the chain is absorbing at all-failed.
    """
    if not 0.0 <= p_fail <= 1.0:
        raise ValueError("failure probability must be in [0, 1]")
    n = 1 << n_pairs
    masks = np.arange(n)
    T = np.zeros((n, n))
    popcount = np.array([bin(m).count("1") for m in range(n)])
    for m in range(n):
        grow = (masks & m) == m  # supersets of m reachable
        new_bits = popcount[masks] - popcount[m]
        working = n_pairs - popcount[m]
        T[m, grow] = (p_fail ** new_bits[grow]
                      * (1.0 - p_fail) ** (working - new_bits[grow]))
    return T


@dataclass
class DiscreteBelief:
    """Normalized weights over every failure-mask hypothesis."""

    weights: np.ndarray
    n_pairs: int = 4

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (1 << self.n_pairs,):
            raise ValueError("need one weight per mask")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")

    def predict(self, p_fail: float) -> "DiscreteBelief":
        """Push the belief one step through the failure chain."""
        w = self.weights @ transition_matrix(p_fail, self.n_pairs)
        return DiscreteBelief(w / w.sum(), self.n_pairs)

    def map_mask(self) -> int:
        """Most probable mask; exact ties resolve to the smallest mask."""
        return int(np.argmax(self.weights))


def bayes_update(belief: DiscreteBelief, p_fail: float, observed_transition,
                 plant, resid_std: float = 0.05) -> DiscreteBelief:
    """Condition the failure belief on one observed state transition.

    Predicts through the failure chain, then reweights each mask by the
    Gaussian likelihood of the observed next state under that mask's
    deterministic step (residual std ``resid_std`` per state dimension).
    """
    x, u, x_next = (np.asarray(a, dtype=float) for a in observed_transition)
    predicted = belief.weights @ transition_matrix(p_fail, belief.n_pairs)
    lik = np.empty_like(predicted)
    for m in range(predicted.shape[0]):
        r = (x_next - _plant_step(plant, x, u, m)) / resid_std
        lik[m] = np.exp(-0.5 * float(r @ r))
    post = predicted * lik
    total = post.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise BeliefCollapseError(
            "belief collapse: no mask explains the observed transition")
    return DiscreteBelief(post / total, belief.n_pairs)


def map_failure_sequence(belief: DiscreteBelief, p_fail: float,
                         N: int) -> np.ndarray:
    """Per-step most-probable mask over a horizon of ``N + 1`` steps.

    Entry 0 is the MAP mask of the current belief; each later entry is the
    MAP mask after one more prediction through the failure chain.
    """
    out = np.empty(N + 1, dtype=np.int64)
    cur = belief
    out[0] = cur.map_mask()
    for j in range(1, N + 1):
        cur = cur.predict(p_fail)
        out[j] = cur.map_mask()
    return out


def _plant_step(plant, x, u, disturbance):
    from .dynamics import _plant_step as step
    return step(plant, x, u, disturbance)


# ---------------------------------------------------------------------------
# position cloud + range sensing
# ---------------------------------------------------------------------------


@dataclass
class PositionBelief:
    """Fixed cloud of position deviations with evolving weights.

    The deviation points are sampled once per episode and never move; only
    the weights change as measurements arrive.
    """

    deviations: np.ndarray
    weights: np.ndarray
    index_of_truth: int | None = None

    def __post_init__(self):
        self.deviations = np.array(self.deviations, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.deviations.ndim != 2 or self.deviations.shape[1] != 2:
            raise ValueError("deviations must be (M, 2)")
        if self.weights.shape != (self.deviations.shape[0],):
            raise ValueError("need one weight per deviation point")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        self.deviations.flags.writeable = False

    @property
    def size(self) -> int:
        return self.deviations.shape[0]

    def mean_deviation(self) -> np.ndarray:
        return self.weights @ self.deviations


@dataclass
class RangeSensor:
    """Four rays along the body axes, ordered (+x, +y, -x, -y).

    ``sigma_true`` corrupts simulated measurements; ``sigma_filter`` is
    the (possibly deliberately inflated) noise the filter assumes.
    """

    sigma_true: float
    sigma_filter: float
    max_range: float = 100.0

    def __post_init__(self):
        if self.sigma_true < 0 or self.sigma_filter <= 0:
            raise ValueError("sensor noise must be nonnegative "
                             "(filter std strictly positive)")


_BODY_RAYS = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


def _ray_rect_distance(p, d, rect) -> float:
    """Distance along ray p + t d (t > 0) to an axis-aligned rectangle."""
    t_enter, t_exit = -np.inf, np.inf
    for k, (lo, hi) in enumerate(((rect.xmin, rect.xmax),
                                  (rect.ymin, rect.ymax))):
        if abs(d[k]) < 1e-300:
            if not lo <= p[k] <= hi:
                return np.inf
        else:
            t0 = (lo - p[k]) / d[k]
            t1 = (hi - p[k]) / d[k]
            if t0 > t1:
                t0, t1 = t1, t0
            t_enter = max(t_enter, t0)
            t_exit = min(t_exit, t1)
    if t_exit < max(t_enter, 0.0):
        return np.inf
    return max(t_enter, 0.0)


def range_measure(x, walls, sensor: RangeSensor, rng=None) -> np.ndarray:
    """Distances from position ``x[:2]`` along the four body rays.

    Rays that hit nothing read ``sensor.max_range``.  Gaussian noise of
    std ``sensor.sigma_true`` is added when an ``rng`` is supplied.
    """
    x = np.asarray(x, dtype=float)
    p, theta = x[:2], x[2]
    for rect in walls:
        if rect.xmin < p[0] < rect.xmax and rect.ymin < p[1] < rect.ymax:
            raise ValueError("measurement point is inside an obstacle")
    c, s = np.cos(theta), np.sin(theta)
    R = np.array([[c, -s], [s, c]])
    out = np.empty(4)
    for k, ray in enumerate(_BODY_RAYS):
        d = R @ ray
        best = min((_ray_rect_distance(p, d, rect) for rect in walls),
                   default=np.inf)
        out[k] = min(best, sensor.max_range)
    if rng is not None and sensor.sigma_true > 0:
        out = out + rng.normal(0.0, sensor.sigma_true, 4)
    return out


def pf_update(belief: PositionBelief, measured, predicted_per_particle,
              sigma_filter: float) -> PositionBelief:
    """Reweight the cloud by Gaussian measurement likelihoods.

    ``predicted_per_particle`` holds each particle's noiseless readings,
    shape (M, 4).  Deviation points are untouched.  If every particle's
    likelihood underflows to zero the belief has collapsed and the caller
    should reset it.
    """
    measured = np.asarray(measured, dtype=float)
    predicted = np.asarray(predicted_per_particle, dtype=float)
    if predicted.shape != (belief.size, measured.shape[0]):
        raise ValueError("need one predicted reading set per particle")
    r = (measured[None, :] - predicted) / sigma_filter
    lik = np.exp(-0.5 * np.sum(r * r, axis=1))
    w = belief.weights * lik
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise BeliefCollapseError(
            "belief collapse: measurement likelihood underflowed "
            "for every particle")
    return PositionBelief(belief.deviations, w / total,
                          belief.index_of_truth)


# ---------------------------------------------------------------------------
# belief -> particles
# ---------------------------------------------------------------------------


def sample_particles(belief, uncertainty_kind: str, M: int, N: int, rng,
                     x0=None, p_fail: float = 0.05,
                     models=None) -> list[Particle]:
    """Draw the planner's particle set from the current belief.

    * ``failure``: hypotheses are visited round-robin in decreasing-weight
      order (ties toward the smaller mask); each particle rolls a failure
      sequence from its root hypothesis and carries that root's belief
      weight, split evenly among particles sharing the root.
    * ``wind``: M gust rollouts, all anchored at the observed current wind.
    * ``sensing``: the fixed cloud itself, one particle per deviation
      point, with the filter's current weights.
    * ``learning``: one particle per dynamics model in ``models``.
    """
    if M < 1:
        raise ValueError("need at least one particle")
    if uncertainty_kind == "failure":
        return _failure_particles(belief, M, N, rng, x0, p_fail)
    if uncertainty_kind == "wind":
        return _wind_particles(belief, M, N, rng, x0)
    if uncertainty_kind == "sensing":
        return _sensing_particles(belief, M, x0)
    if uncertainty_kind == "learning":
        if models is None or len(models) != M:
            raise ValueError("learning setting needs one model per particle")
        return [Particle(x0=np.array(x0, dtype=float), weight=1.0 / M,
                         model=m) for m in models]
    raise ValueError(f"unknown uncertainty kind: {uncertainty_kind!r}")


def _failure_particles(belief: DiscreteBelief, M, N, rng, x0, p_fail):
    if x0 is None:
        raise ValueError("failure setting needs the current state")
    w = belief.weights
    order = np.lexsort((np.arange(w.shape[0]), -w))
    live = [int(m) for m in order if w[m] > 0.0]
    roots = [live[i % len(live)] for i in range(M)]
    counts = Counter(roots)
    total = sum(w[m] for m in counts)
    particles = []
    for root in roots:
        seq = failure_rollout(root, p_fail, N, rng, belief.n_pairs)
        dist = np.concatenate(([root], seq)).astype(np.int64)
        particles.append(Particle(
            x0=np.array(x0, dtype=float), disturbance=dist,
            weight=float(w[root] / counts[root] / total)))
    return particles


def _wind_particles(proc: OUProcess, M, N, rng, x0):
    if x0 is None:
        raise ValueError("wind setting needs the current state")
    particles = []
    for _ in range(M):
        dist = np.vstack([proc.state, ou_rollout(proc, N, rng)])
        particles.append(Particle(x0=np.array(x0, dtype=float),
                                  disturbance=dist, weight=1.0 / M))
    return particles


def _sensing_particles(belief: PositionBelief, M, x0):
    if x0 is None:
        raise ValueError("sensing setting needs the nominal state")
    if M != belief.size:
        raise ValueError(
            f"sensing particle count must match the cloud ({belief.size})")
    x0 = np.asarray(x0, dtype=float)
    particles = []
    for i in range(belief.size):
        xi = x0.copy()
        xi[:2] += belief.deviations[i]
        particles.append(Particle(x0=xi, weight=float(belief.weights[i])))
    return particles
