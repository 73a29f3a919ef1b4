"""Stage costs: quadratic tracking plus exact-penalty rectangle obstacles.

The obstacle term is clipped-linear in penetration depth (zero outside,
``weight * depth`` inside), so a large enough weight recovers the
constrained optimum exactly while keeping the planner's subproblems
penalty-based rather than hard-constrained.  The penalty is non-convex;
:func:`linearize_ncvx` returns the subgradient used by the sequential
convexification loop, with deterministic tie-breaking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class QuadraticStage:
    """Tracking weights: (x-x_goal)' Q (x-x_goal) + u' R u."""

    Q: np.ndarray
    R: np.ndarray
    x_goal: np.ndarray

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.x_goal = np.asarray(self.x_goal, dtype=float)
        if np.linalg.eigvalsh((self.Q + self.Q.T) / 2).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh((self.R + self.R.T) / 2).min() <= 0:
            raise ValueError("R must be positive definite")


@dataclass
class RectObstacle:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    weight: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError("degenerate rectangle")
        if not self.weight > 0:
            raise ValueError("penalty weight must be positive")


@dataclass
class CostModel:
    stage: QuadraticStage
    obstacles: list[RectObstacle] = field(default_factory=list)


def default_cost(x_goal, action_dim: int, obstacles=None) -> CostModel:
    """Default weights: position 1, velocity/angle 0.1, R = 1e-2 I."""
    Q = np.diag([1.0, 1.0, 0.1, 0.1, 0.1, 0.1])
    R = 1e-2 * np.eye(action_dim)
    return CostModel(
        stage=QuadraticStage(Q=Q, R=R, x_goal=np.asarray(x_goal, dtype=float)),
        obstacles=list(obstacles or []),
    )


def penetration(p, rect: RectObstacle):
    """Depth of ``p`` inside the closed rectangle (0 outside).

    Inside, the depth is the distance to the nearest edge.  Broadcasts
    over leading axes of ``p`` (shape ``(..., 2)``).
    """
    p = np.asarray(p, dtype=float)
    px, py = p[..., 0], p[..., 1]
    inside = (
        (px >= rect.xmin) & (px <= rect.xmax)
        & (py >= rect.ymin) & (py <= rect.ymax)
    )
    depth = np.minimum(
        np.minimum(rect.xmax - px, px - rect.xmin),
        np.minimum(rect.ymax - py, py - rect.ymin),
    )
    return np.where(inside, depth, 0.0)


def penalty(model: CostModel, x):
    """Sum of weighted penetrations of the position components of ``x``."""
    x = np.asarray(x, dtype=float)
    total = np.zeros(x.shape[:-1])
    for rect in model.obstacles:
        total = total + rect.weight * penetration(x[..., :2], rect)
    return total


def stage_cost(model: CostModel, x, u):
    """(x-g)'Q(x-g) + u'Ru + obstacle penalties; broadcasts over batches."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    dx = x - model.stage.x_goal
    cq = np.einsum("...i,ij,...j->...", dx, model.stage.Q, dx)
    cr = np.einsum("...i,ij,...j->...", u, model.stage.R, u)
    return cq + cr + penalty(model, x)


def trajectory_cost(model: CostModel, xs, us):
    """Sum of stage costs over action steps (final expanded state unweighted)."""
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    H = us.shape[-2]
    return stage_cost(model, xs[..., :H, :], us).sum(axis=-1)


# Edge order for subgradient tie-breaking: right, left, top, bottom.
_EDGE_GRADS = np.array(
    [
        [-1.0, 0.0],  # right edge active: depth = xmax - px
        [1.0, 0.0],   # left:  depth = px - xmin
        [0.0, -1.0],  # top:   depth = ymax - py
        [0.0, 1.0],   # bottom: depth = py - ymin
    ]
)


def obstacle_affines(model: CostModel, x_ref):
    """Signed nearest-edge value and its gradient, per obstacle.

    For each rectangle the value is ``min(xmax-px, px-xmin, ymax-py,
    py-ymin)`` — the penetration depth inside, minus the distance to the
    nearest face outside — so an affine model ``value + grad . dp`` sees
    a wall before the reference crosses it.  The gradient belongs to the
    active (minimal) face, ties broken right/left/top/bottom.  Returns
    ``(values, grads)`` shaped ``(n_obs, ...)`` and ``(n_obs, ..., 2)``
    for ``x_ref`` of shape ``(..., nx)``; weights are not applied.
    """
    x_ref = np.asarray(x_ref, dtype=float)
    px, py = x_ref[..., 0], x_ref[..., 1]
    n_obs = len(model.obstacles)
    values = np.zeros((n_obs,) + px.shape)
    grads = np.zeros((n_obs,) + px.shape + (2,))
    for o, rect in enumerate(model.obstacles):
        dists = np.stack(
            [rect.xmax - px, px - rect.xmin, rect.ymax - py, py - rect.ymin],
            axis=-1,
        )
        active = np.argmin(dists, axis=-1)
        values[o] = np.take_along_axis(
            dists, active[..., None], axis=-1)[..., 0]
        grads[o] = _EDGE_GRADS[active]
    return values, grads


def linearize_ncvx(model: CostModel, x_ref):
    """Subgradient of the obstacle penalty at ``x_ref``.

    Zero when the position is strictly outside every obstacle.  Inside
    (closed rectangle, boundary included) the gradient follows the
    nearest edge, ties broken right/left/top/bottom.  Broadcasts over
    leading axes; returns an array shaped like ``x_ref``.
    """
    x_ref = np.asarray(x_ref, dtype=float)
    grad = np.zeros_like(x_ref)
    if not model.obstacles:
        return grad
    px, py = x_ref[..., 0], x_ref[..., 1]
    for rect in model.obstacles:
        inside = (
            (px >= rect.xmin) & (px <= rect.xmax)
            & (py >= rect.ymin) & (py <= rect.ymax)
        )
        dists = np.stack(
            [rect.xmax - px, px - rect.xmin, rect.ymax - py, py - rect.ymin],
            axis=-1,
        )
        active = np.argmin(dists, axis=-1)  # first minimum = fixed tie order
        g = rect.weight * _EDGE_GRADS[active]  # (..., 2)
        grad[..., :2] += np.where(inside[..., None], g, 0.0)
    return grad
