"""Planar plant models, RK4 discretization, and Jacobian linearization.

Two plants share the 6-D state layout ``(x, y, theta, vx, vy, omega)``:

* ``freeflyer`` — 8 gas thrusters mounted as 4 opposing pairs (+x, -x,
  +y, -y body faces; pair k = action entries 2k, 2k+1) plus a reaction
  wheel (action entry 8).  Thruster 2k sits at +lever, 2k+1 at -lever,
  so symmetric firing of a pair is torque-free and differential firing
  turns the body.  A 4-bit failure mask zeroes the thrust of the
  corresponding pair; the wheel never fails.
* ``quadrotor`` — planar birotor with thrusts ``u1, u2`` at arm ``l``
  and additive wind acceleration ``(wx, wy)``.

Batched rollout/linearization kernels are numba-compiled with a pure
numpy fallback (see :mod:`pmpc.accel`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import accel
from .accel import njit

STATE_DIM = 6


@dataclass
class PlantModel:
    """Physical parameters and discretization step for one plant.

    Parameters
    ----------
    kind:
        ``"freeflyer"`` or ``"quadrotor"``.
    mass, inertia:
        Rigid-body mass (kg) and moment of inertia (kg m^2).
    lever:
        Thruster lever arm (free-flyer) or rotor arm (quadrotor), m.
    gravity:
        Gravitational acceleration (quadrotor only), m/s^2.
    dt:
        Discretization step, s.
    u_lower, u_upper:
        Elementwise action box bounds.
    """

    kind: str
    mass: float
    inertia: float
    lever: float
    gravity: float
    dt: float
    u_lower: np.ndarray
    u_upper: np.ndarray

    def __post_init__(self):
        if self.kind not in ("freeflyer", "quadrotor"):
            raise ValueError(f"unknown plant kind {self.kind!r}")
        for name in ("mass", "inertia", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        self.u_lower = np.asarray(self.u_lower, dtype=float)
        self.u_upper = np.asarray(self.u_upper, dtype=float)
        if self.u_lower.shape != self.u_upper.shape:
            raise ValueError("action bound shapes differ")
        if np.any(self.u_lower > self.u_upper):
            raise ValueError("action bounds must satisfy lower <= upper")

    @property
    def state_dim(self) -> int:
        return STATE_DIM

    @property
    def action_dim(self) -> int:
        return self.u_lower.shape[0]

    def step(self, x, u, disturbance=None):
        return step(self, x, u, disturbance)

    def clip_action(self, u):
        return np.clip(u, self.u_lower, self.u_upper)


def freeflyer(**overrides) -> PlantModel:
    """Default free-flyer: 16 kg, 10 N thrusters, +-0.1 N m wheel."""
    params = dict(
        kind="freeflyer",
        mass=16.0,
        inertia=0.18,
        lever=0.15,
        gravity=0.0,
        dt=0.25,
        u_lower=np.array([0.0] * 8 + [-0.1]),
        u_upper=np.array([10.0] * 8 + [0.1]),
    )
    params.update(overrides)
    return PlantModel(**params)


def quadrotor(**overrides) -> PlantModel:
    """Default planar quadrotor: 1 kg, 0.3 m arm, rotor thrust in [0, 10] N."""
    params = dict(
        kind="quadrotor",
        mass=1.0,
        inertia=0.01,
        lever=0.3,
        gravity=9.81,
        dt=0.1,
        u_lower=np.zeros(2),
        u_upper=np.full(2, 10.0),
    )
    params.update(overrides)
    return PlantModel(**params)


@dataclass
class LinearizedStep:
    """Discrete-step Jacobians d(step)/dx and d(step)/du at a reference."""

    A: np.ndarray
    B: np.ndarray


# ---------------------------------------------------------------------------
# Continuous-time derivatives (broadcast over leading axes)
# ---------------------------------------------------------------------------

def freeflyer_derivative(x, u, fail_mask, params) -> np.ndarray:
    """Planar rigid-body derivative with per-pair thrust failures.

    ``fail_mask`` is a 4-bit integer (broadcastable array accepted); bit
    k zeroes pair k's thrust.  Wheel torque ``u[..., 8]`` is unaffected.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    mask = np.asarray(fail_mask)
    s = [1.0 - ((mask >> k) & 1) for k in range(4)]
    fx = s[0] * (u[..., 0] + u[..., 1]) - s[1] * (u[..., 2] + u[..., 3])
    fy = s[2] * (u[..., 4] + u[..., 5]) - s[3] * (u[..., 6] + u[..., 7])
    torque = params.lever * (
        s[0] * (u[..., 0] - u[..., 1])
        + s[1] * (u[..., 2] - u[..., 3])
        + s[2] * (u[..., 4] - u[..., 5])
        + s[3] * (u[..., 6] - u[..., 7])
    ) + u[..., 8]
    c, sn = np.cos(x[..., 2]), np.sin(x[..., 2])
    out = np.empty(np.broadcast_shapes(x.shape[:-1], u.shape[:-1], mask.shape) + (6,))
    out[..., 0] = x[..., 3]
    out[..., 1] = x[..., 4]
    out[..., 2] = x[..., 5]
    out[..., 3] = (c * fx - sn * fy) / params.mass
    out[..., 4] = (sn * fx + c * fy) / params.mass
    out[..., 5] = torque / params.inertia
    return out


def quadrotor_derivative(x, u, wind, params) -> np.ndarray:
    """Planar birotor derivative with additive wind acceleration."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.zeros(2) if wind is None else np.asarray(wind, dtype=float)
    thrust = u[..., 0] + u[..., 1]
    c, sn = np.cos(x[..., 2]), np.sin(x[..., 2])
    out = np.empty(
        np.broadcast_shapes(x.shape[:-1], u.shape[:-1], w.shape[:-1]) + (6,)
    )
    out[..., 0] = x[..., 3]
    out[..., 1] = x[..., 4]
    out[..., 2] = x[..., 5]
    out[..., 3] = -thrust * sn / params.mass + w[..., 0]
    out[..., 4] = thrust * c / params.mass - params.gravity + w[..., 1]
    out[..., 5] = params.lever * (u[..., 0] - u[..., 1]) / params.inertia
    return out


# ---------------------------------------------------------------------------
# RK4
# ---------------------------------------------------------------------------

def rk4_step(f_cont, x, u, dt: float):
    """One classical Runge-Kutta 4 step of ``xdot = f_cont(x, u)``."""
    if not dt > 0:
        raise ValueError("dt must be strictly positive")
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(f_cont(x, u), dtype=float)
    _check_stage(k1, 1)
    k2 = np.asarray(f_cont(x + 0.5 * dt * k1, u), dtype=float)
    _check_stage(k2, 2)
    k3 = np.asarray(f_cont(x + 0.5 * dt * k2, u), dtype=float)
    _check_stage(k3, 3)
    k4 = np.asarray(f_cont(x + dt * k3, u), dtype=float)
    _check_stage(k4, 4)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_stage(k, i):
    if not np.all(np.isfinite(k)):
        raise ValueError(f"RK4 stage {i} produced non-finite values")


def step(plant: PlantModel, x, u, disturbance=None):
    """Discrete RK4 step of ``plant`` under a zero-order-hold disturbance.

    ``disturbance`` is a failure mask (free-flyer, default 0) or a wind
    acceleration 2-vector (quadrotor, default zero).  Broadcasts over
    leading axes of ``x``/``u``/``disturbance``.
    """
    if plant.kind == "freeflyer":
        mask = 0 if disturbance is None else disturbance
        f = lambda xx, uu: freeflyer_derivative(xx, uu, mask, plant)
    else:
        f = lambda xx, uu: quadrotor_derivative(xx, uu, disturbance, plant)
    return rk4_step(f, x, u, plant.dt)


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------

def linearize(plant, x_ref, u_ref, disturbance=None) -> LinearizedStep:
    """Central finite-difference Jacobians of the discrete step.

    Step sizes are ``1e-5 * max(1, |value|)`` per coordinate.  Works for
    any object exposing ``step(x, u, disturbance)``.
    """
    x_ref = np.asarray(x_ref, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    n, m = x_ref.shape[0], u_ref.shape[0]
    A = np.empty((n, n))
    B = np.empty((n, m))
    for i in range(n):
        h = 1e-5 * max(1.0, abs(x_ref[i]))
        xp, xm = x_ref.copy(), x_ref.copy()
        xp[i] += h
        xm[i] -= h
        A[:, i] = (
            _plant_step(plant, xp, u_ref, disturbance)
            - _plant_step(plant, xm, u_ref, disturbance)
        ) / (2.0 * h)
    for i in range(m):
        h = 1e-5 * max(1.0, abs(u_ref[i]))
        up, um = u_ref.copy(), u_ref.copy()
        up[i] += h
        um[i] -= h
        B[:, i] = (
            _plant_step(plant, x_ref, up, disturbance)
            - _plant_step(plant, x_ref, um, disturbance)
        ) / (2.0 * h)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValueError("non-finite Jacobian entry")
    return LinearizedStep(A=A, B=B)


def _plant_step(plant, x, u, disturbance):
    if isinstance(plant, PlantModel):
        return step(plant, x, u, disturbance)
    return plant.step(x, u, disturbance)


# ---------------------------------------------------------------------------
# Batched trajectory kernels (numba fast path + numpy fallback)
# ---------------------------------------------------------------------------

def rollout(plant, x0, us, disturbances=None):
    """Roll a single trajectory; returns states with shape (H+1, 6)."""
    us = np.asarray(us, dtype=float)
    xs = np.empty((us.shape[0] + 1, len(x0)))
    xs[0] = x0
    for j in range(us.shape[0]):
        d = None if disturbances is None else disturbances[j]
        xs[j + 1] = _plant_step(plant, xs[j], us[j], d)
    return xs


def rollout_batch(plant: PlantModel, x0s, us, disturbances=None):
    """Roll B trajectories at once.

    Parameters
    ----------
    x0s : (B, 6)
    us : (B, H, m)
    disturbances : (B, H) int mask for the free-flyer, (B, H, 2) wind
        for the quadrotor, or None.

    Returns
    -------
    (B, H+1, 6) states.
    """
    x0s = np.ascontiguousarray(x0s, dtype=float)
    us = np.ascontiguousarray(us, dtype=float)
    B, H = us.shape[0], us.shape[1]
    if plant.kind == "freeflyer":
        d = (
            np.zeros((B, H), dtype=np.int64)
            if disturbances is None
            else np.ascontiguousarray(disturbances, dtype=np.int64)
        )
        if accel.numba_active():
            return _ff_rollout_nb(
                x0s, us, d, plant.mass, plant.inertia, plant.lever, plant.dt
            )
    else:
        d = (
            np.zeros((B, H, 2))
            if disturbances is None
            else np.ascontiguousarray(disturbances, dtype=float)
        )
        if accel.numba_active():
            return _quad_rollout_nb(
                x0s, us, d, plant.mass, plant.inertia, plant.lever,
                plant.gravity, plant.dt,
            )
    # numpy fallback: vectorize over the batch, loop over time
    xs = np.empty((B, H + 1, STATE_DIM))
    xs[:, 0] = x0s
    for j in range(H):
        xs[:, j + 1] = step(plant, xs[:, j], us[:, j], d[:, j])
    return xs


def linearize_rollout(plant: PlantModel, xs, us, disturbances=None):
    """Jacobians and one-step predictions along B reference trajectories.

    Parameters
    ----------
    xs : (B, H, 6) reference states at steps 0..H-1
    us : (B, H, m) reference actions
    disturbances : per-step disturbances as in :func:`rollout_batch`.

    Returns
    -------
    As : (B, H, 6, 6), Bs : (B, H, 6, m), fnext : (B, H, 6)
        ``fnext[b, j]`` is the step evaluated at the reference point,
        used for linearization defects.
    """
    xs = np.ascontiguousarray(xs, dtype=float)
    us = np.ascontiguousarray(us, dtype=float)
    B, H, m = us.shape
    if plant.kind == "freeflyer":
        d = (
            np.zeros((B, H), dtype=np.int64)
            if disturbances is None
            else np.ascontiguousarray(disturbances, dtype=np.int64)
        )
        if accel.numba_active():
            return _ff_linearize_nb(
                xs, us, d, plant.mass, plant.inertia, plant.lever, plant.dt
            )
    else:
        d = (
            np.zeros((B, H, 2))
            if disturbances is None
            else np.ascontiguousarray(disturbances, dtype=float)
        )
        if accel.numba_active():
            return _quad_linearize_nb(
                xs, us, d, plant.mass, plant.inertia, plant.lever,
                plant.gravity, plant.dt,
            )

    # numpy fallback: evaluate all perturbed points in one batched step.
    n = STATE_DIM
    hx = 1e-5 * np.maximum(1.0, np.abs(xs))              # (B, H, n)
    hu = 1e-5 * np.maximum(1.0, np.abs(us))              # (B, H, m)
    eye_n = np.eye(n)
    eye_m = np.eye(m)
    xpert = xs[:, :, None, :] + hx[:, :, :, None] * eye_n  # (B,H,n,n)
    xmert = xs[:, :, None, :] - hx[:, :, :, None] * eye_n
    upert = us[:, :, None, :] + hu[:, :, :, None] * eye_m  # (B,H,m,m)
    umert = us[:, :, None, :] - hu[:, :, :, None] * eye_m
    if plant.kind == "freeflyer":
        dx = d[:, :, None]
        du = d[:, :, None]
    else:
        dx = d[:, :, None, :]
        du = d[:, :, None, :]
    fp = step(plant, xpert, us[:, :, None, :], dx)
    fm = step(plant, xmert, us[:, :, None, :], dx)
    As = (fp - fm).swapaxes(-1, -2) / (2.0 * hx[:, :, None, :])
    gp = step(plant, xs[:, :, None, :], upert, du)
    gm = step(plant, xs[:, :, None, :], umert, du)
    Bs = (gp - gm).swapaxes(-1, -2) / (2.0 * hu[:, :, None, :])
    fnext = step(plant, xs, us, d)
    return np.ascontiguousarray(As), np.ascontiguousarray(Bs), fnext


# -- numba kernels ----------------------------------------------------------

@njit(inline="always")
def _ff_deriv_nb(x, u, mask, mass, inertia, lever, out):
    s0 = 0.0 if (mask & 1) else 1.0
    s1 = 0.0 if (mask & 2) else 1.0
    s2 = 0.0 if (mask & 4) else 1.0
    s3 = 0.0 if (mask & 8) else 1.0
    fx = s0 * (u[0] + u[1]) - s1 * (u[2] + u[3])
    fy = s2 * (u[4] + u[5]) - s3 * (u[6] + u[7])
    tq = lever * (
        s0 * (u[0] - u[1])
        + s1 * (u[2] - u[3])
        + s2 * (u[4] - u[5])
        + s3 * (u[6] - u[7])
    ) + u[8]
    c = math.cos(x[2])
    sn = math.sin(x[2])
    out[0] = x[3]
    out[1] = x[4]
    out[2] = x[5]
    out[3] = (c * fx - sn * fy) / mass
    out[4] = (sn * fx + c * fy) / mass
    out[5] = tq / inertia


@njit(inline="always")
def _quad_deriv_nb(x, u, wx, wy, mass, inertia, lever, gravity, out):
    thrust = u[0] + u[1]
    c = math.cos(x[2])
    sn = math.sin(x[2])
    out[0] = x[3]
    out[1] = x[4]
    out[2] = x[5]
    out[3] = -thrust * sn / mass + wx
    out[4] = thrust * c / mass - gravity + wy
    out[5] = lever * (u[0] - u[1]) / inertia


@njit(inline="always")
def _rk4_combine(x, k1, k2, k3, k4, dt, out):
    for i in range(6):
        out[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit
def _ff_step_nb(x, u, mask, mass, inertia, lever, dt, k1, k2, k3, k4, xt, out):
    _ff_deriv_nb(x, u, mask, mass, inertia, lever, k1)
    for i in range(6):
        xt[i] = x[i] + 0.5 * dt * k1[i]
    _ff_deriv_nb(xt, u, mask, mass, inertia, lever, k2)
    for i in range(6):
        xt[i] = x[i] + 0.5 * dt * k2[i]
    _ff_deriv_nb(xt, u, mask, mass, inertia, lever, k3)
    for i in range(6):
        xt[i] = x[i] + dt * k3[i]
    _ff_deriv_nb(xt, u, mask, mass, inertia, lever, k4)
    _rk4_combine(x, k1, k2, k3, k4, dt, out)


@njit
def _quad_step_nb(x, u, wx, wy, mass, inertia, lever, gravity, dt,
                  k1, k2, k3, k4, xt, out):
    _quad_deriv_nb(x, u, wx, wy, mass, inertia, lever, gravity, k1)
    for i in range(6):
        xt[i] = x[i] + 0.5 * dt * k1[i]
    _quad_deriv_nb(xt, u, wx, wy, mass, inertia, lever, gravity, k2)
    for i in range(6):
        xt[i] = x[i] + 0.5 * dt * k2[i]
    _quad_deriv_nb(xt, u, wx, wy, mass, inertia, lever, gravity, k3)
    for i in range(6):
        xt[i] = x[i] + dt * k3[i]
    _quad_deriv_nb(xt, u, wx, wy, mass, inertia, lever, gravity, k4)
    _rk4_combine(x, k1, k2, k3, k4, dt, out)


@njit
def _ff_rollout_nb(x0s, us, masks, mass, inertia, lever, dt):
    B, H = us.shape[0], us.shape[1]
    xs = np.empty((B, H + 1, 6))
    k1 = np.empty(6); k2 = np.empty(6); k3 = np.empty(6)
    k4 = np.empty(6); xt = np.empty(6)
    for b in range(B):
        xs[b, 0] = x0s[b]
        for j in range(H):
            _ff_step_nb(xs[b, j], us[b, j], masks[b, j], mass, inertia,
                        lever, dt, k1, k2, k3, k4, xt, xs[b, j + 1])
    return xs


@njit
def _quad_rollout_nb(x0s, us, winds, mass, inertia, lever, gravity, dt):
    B, H = us.shape[0], us.shape[1]
    xs = np.empty((B, H + 1, 6))
    k1 = np.empty(6); k2 = np.empty(6); k3 = np.empty(6)
    k4 = np.empty(6); xt = np.empty(6)
    for b in range(B):
        xs[b, 0] = x0s[b]
        for j in range(H):
            _quad_step_nb(xs[b, j], us[b, j], winds[b, j, 0], winds[b, j, 1],
                          mass, inertia, lever, gravity, dt,
                          k1, k2, k3, k4, xt, xs[b, j + 1])
    return xs


@njit
def _ff_linearize_nb(xs, us, masks, mass, inertia, lever, dt):
    B, H, m = us.shape
    n = 6
    As = np.empty((B, H, n, n))
    Bs = np.empty((B, H, n, m))
    fnext = np.empty((B, H, n))
    k1 = np.empty(6); k2 = np.empty(6); k3 = np.empty(6)
    k4 = np.empty(6); xt = np.empty(6)
    fp = np.empty(6); fm = np.empty(6)
    xp = np.empty(6); xq = np.empty(6)
    up = np.empty(m); uq = np.empty(m)
    for b in range(B):
        for j in range(H):
            x = xs[b, j]
            u = us[b, j]
            mk = masks[b, j]
            _ff_step_nb(x, u, mk, mass, inertia, lever, dt,
                        k1, k2, k3, k4, xt, fnext[b, j])
            for i in range(n):
                h = 1e-5 * max(1.0, abs(x[i]))
                for t in range(n):
                    xp[t] = x[t]; xq[t] = x[t]
                xp[i] += h; xq[i] -= h
                _ff_step_nb(xp, u, mk, mass, inertia, lever, dt,
                            k1, k2, k3, k4, xt, fp)
                _ff_step_nb(xq, u, mk, mass, inertia, lever, dt,
                            k1, k2, k3, k4, xt, fm)
                for t in range(n):
                    As[b, j, t, i] = (fp[t] - fm[t]) / (2.0 * h)
            for i in range(m):
                h = 1e-5 * max(1.0, abs(u[i]))
                for t in range(m):
                    up[t] = u[t]; uq[t] = u[t]
                up[i] += h; uq[i] -= h
                _ff_step_nb(x, up, mk, mass, inertia, lever, dt,
                            k1, k2, k3, k4, xt, fp)
                _ff_step_nb(x, uq, mk, mass, inertia, lever, dt,
                            k1, k2, k3, k4, xt, fm)
                for t in range(n):
                    Bs[b, j, t, i] = (fp[t] - fm[t]) / (2.0 * h)
    return As, Bs, fnext


@njit
def _quad_linearize_nb(xs, us, winds, mass, inertia, lever, gravity, dt):
    B, H, m = us.shape
    n = 6
    As = np.empty((B, H, n, n))
    Bs = np.empty((B, H, n, m))
    fnext = np.empty((B, H, n))
    k1 = np.empty(6); k2 = np.empty(6); k3 = np.empty(6)
    k4 = np.empty(6); xt = np.empty(6)
    fp = np.empty(6); fm = np.empty(6)
    xp = np.empty(6); xq = np.empty(6)
    up = np.empty(m); uq = np.empty(m)
    for b in range(B):
        for j in range(H):
            x = xs[b, j]
            u = us[b, j]
            wx = winds[b, j, 0]
            wy = winds[b, j, 1]
            _quad_step_nb(x, u, wx, wy, mass, inertia, lever, gravity, dt,
                          k1, k2, k3, k4, xt, fnext[b, j])
            for i in range(n):
                h = 1e-5 * max(1.0, abs(x[i]))
                for t in range(n):
                    xp[t] = x[t]; xq[t] = x[t]
                xp[i] += h; xq[i] -= h
                _quad_step_nb(xp, u, wx, wy, mass, inertia, lever, gravity,
                              dt, k1, k2, k3, k4, xt, fp)
                _quad_step_nb(xq, u, wx, wy, mass, inertia, lever, gravity,
                              dt, k1, k2, k3, k4, xt, fm)
                for t in range(n):
                    As[b, j, t, i] = (fp[t] - fm[t]) / (2.0 * h)
            for i in range(m):
                h = 1e-5 * max(1.0, abs(u[i]))
                for t in range(m):
                    up[t] = u[t]; uq[t] = u[t]
                up[i] += h; uq[i] -= h
                _quad_step_nb(x, up, wx, wy, mass, inertia, lever, gravity,
                              dt, k1, k2, k3, k4, xt, fp)
                _quad_step_nb(x, uq, wx, wy, mass, inertia, lever, gravity,
                              dt, k1, k2, k3, k4, xt, fm)
                for t in range(n):
                    Bs[b, j, t, i] = (fp[t] - fm[t]) / (2.0 * h)
    return As, Bs, fnext
