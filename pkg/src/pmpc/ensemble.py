"""Anchored-ensemble dynamics models for planning under learned dynamics.

Each member is a small tanh network predicting the state *delta* from an
angle-encoded state and the action.  Members share the dataset and differ
only by their random initialization; training pulls weights back toward
that frozen initialization (the anchor), so members keep disagreeing away
from the data — the disagreement is the epistemic uncertainty the planner
consumes, one member per particle.

Members expose the same ``step`` / ``linearize`` / ``rollout_batch``
surface as the analytic plants, so a particle can carry one as its
``model`` and every planner works unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDivergedError

__all__ = [
    "MLP",
    "Ensemble",
    "TransitionDataset",
    "encode_state",
    "train",
    "exploration_noise",
    "save_weights",
    "load_weights",
]

THETA_INDEX = 2

# Action-noise std per episode, then zero once the schedule runs out.
EXPLORATION_SCHEDULES = {
    "freeflyer": (0.3, 0.3, 0.1, 0.1, 0.01, 0.01),
    "quadrotor": (0.3, 0.1, 0.01),
}


def encode_state(x) -> np.ndarray:
    """Replace the angle with its (sin, cos) pair; everything else passes
    through.  Broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    th = x[..., THETA_INDEX]
    return np.concatenate(
        [
            x[..., :THETA_INDEX],
            np.sin(th)[..., None],
            np.cos(th)[..., None],
            x[..., THETA_INDEX + 1:],
        ],
        axis=-1,
    )


class MLP:
    """One ensemble member: tanh net, delta prediction, frozen anchor."""

    def __init__(self, n_action: int, n_state: int = 6, width: int = 64,
                 n_hidden: int = 3, seed: int = 0):
        if n_action < 1 or n_state < 3 or width < 1 or n_hidden < 1:
            raise ValueError("bad network dimensions")
        self.n_state = n_state
        self.n_action = n_action
        self.width = width
        self.n_hidden = n_hidden
        self.seed = int(seed)
        n_in = n_state + 1 + n_action  # angle becomes two features
        dims = [n_in] + [width] * n_hidden + [n_state]
        rng = np.random.default_rng(self.seed)
        self.Ws = [rng.normal(0.0, dims[i] ** -0.5, (dims[i], dims[i + 1]))
                   for i in range(len(dims) - 1)]
        self.bs = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
        anchor = tuple(W.copy() for W in self.Ws) \
            + tuple(b.copy() for b in self.bs)
        for arr in anchor:
            arr.setflags(write=False)
        self.anchor = anchor
        # feature/target normalization, refreshed by train()
        self.in_mu = np.zeros(n_in)
        self.in_std = np.ones(n_in)
        self.out_mu = np.zeros(n_state)
        self.out_std = np.ones(n_state)

    # -- prediction ------------------------------------------------------

    def _features(self, x, u) -> np.ndarray:
        return np.concatenate(
            [encode_state(x), np.asarray(u, dtype=float)], axis=-1)

    def _net(self, Z):
        a = Z
        for W, b in zip(self.Ws[:-1], self.bs[:-1]):
            a = np.tanh(a @ W + b)
        return a @ self.Ws[-1] + self.bs[-1]

    def forward(self, x, u) -> np.ndarray:
        """Predicted next state ``x + delta``; broadcasts over batches."""
        x = np.asarray(x, dtype=float)
        Z = (self._features(x, u) - self.in_mu) / self.in_std
        return x + self.out_mu + self.out_std * self._net(Z)

    def step(self, x, u, disturbance=None) -> np.ndarray:
        return self.forward(x, u)

    def rollout_batch(self, x0s, us, disturbances=None) -> np.ndarray:
        x0s = np.asarray(x0s, dtype=float)
        us = np.asarray(us, dtype=float)
        S, H = us.shape[0], us.shape[1]
        xs = np.empty((S, H + 1, self.n_state))
        xs[:, 0] = x0s
        for t in range(H):
            xs[:, t + 1] = self.forward(xs[:, t], us[:, t])
        return xs

    def linearize(self, x, u, disturbance=None):
        """Exact Jacobians of ``step`` at one point: (A, B, c)."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        Z = (self._features(x, u) - self.in_mu) / self.in_std
        # forward-mode Jacobian of the raw net w.r.t. its input features
        J = np.eye(Z.shape[0])
        a = Z
        for W, b in zip(self.Ws[:-1], self.bs[:-1]):
            a = np.tanh(a @ W + b)
            J = (J @ W) * (1.0 - a * a)
        J = J @ self.Ws[-1]                       # (n_in, n_state)
        G = (J / self.in_std[:, None]) * self.out_std  # d delta / d feature
        n, k = self.n_state, THETA_INDEX
        feat_x = np.zeros((n + 1, n))             # d feature / d state
        feat_x[:k, :k] = np.eye(k)
        feat_x[k, k] = np.cos(x[k])
        feat_x[k + 1, k] = -np.sin(x[k])
        feat_x[k + 2:, k + 1:] = np.eye(n - k - 1)
        A = np.eye(n) + G[:n + 1].T @ feat_x
        B = G[n + 1:].T
        c = self.step(x, u) - A @ x - B @ u
        return A, B, c

    # -- training internals ----------------------------------------------

    def _loss_and_grads(self, Z, Y, reg: float):
        B = Z.shape[0]
        acts = [Z]
        for W, b in zip(self.Ws[:-1], self.bs[:-1]):
            acts.append(np.tanh(acts[-1] @ W + b))
        out = acts[-1] @ self.Ws[-1] + self.bs[-1]
        r = out - Y
        n_params = len(self.Ws)
        loss = float((r * r).sum() / B)
        gWs, gbs = [None] * n_params, [None] * n_params
        g = 2.0 * r / B
        for i in range(n_params - 1, -1, -1):
            gWs[i] = acts[i].T @ g
            gbs[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.Ws[i].T) * (1.0 - acts[i] * acts[i])
        if reg:
            for i in range(n_params):
                dW = self.Ws[i] - self.anchor[i]
                db = self.bs[i] - self.anchor[n_params + i]
                loss += reg * (float((dW * dW).sum()) + float((db * db).sum()))
                gWs[i] += 2.0 * reg * dW
                gbs[i] += 2.0 * reg * db
        return loss, gWs, gbs


@dataclass
class TransitionDataset:
    """Observed (state, action, next state) triples, shared by members."""

    states: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 6)))
    actions: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 0)))
    next_states: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 6)))

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        self.next_states = np.asarray(self.next_states, dtype=float)
        if not (len(self.states) == len(self.actions)
                == len(self.next_states)):
            raise ValueError("ragged dataset")
        if self.states.shape != self.next_states.shape:
            raise ValueError("state/next-state dimension mismatch")

    def __len__(self) -> int:
        return self.states.shape[0]

    def append(self, x, u, x_next):
        x = np.asarray(x, dtype=float)[None]
        u = np.asarray(u, dtype=float)[None]
        xn = np.asarray(x_next, dtype=float)[None]
        if len(self) == 0:
            self.states, self.actions, self.next_states = x, u, xn
            return
        self.states = np.vstack([self.states, x])
        self.actions = np.vstack([self.actions, u])
        self.next_states = np.vstack([self.next_states, xn])

    def add_episode(self, states, actions):
        """Fold a rolled-out trajectory (T+1 states, T actions) in."""
        states = np.asarray(states, dtype=float)
        actions = np.asarray(actions, dtype=float)
        for t in range(actions.shape[0]):
            self.append(states[t], actions[t], states[t + 1])


@dataclass
class Ensemble:
    members: list

    @classmethod
    def build(cls, n_action: int, D: int = 10, n_state: int = 6,
              width: int = 64, n_hidden: int = 3, seed: int = 0
              ) -> "Ensemble":
        return cls([MLP(n_action, n_state, width, n_hidden, seed + i)
                    for i in range(D)])

    def __len__(self) -> int:
        return len(self.members)


def train(ensemble, dataset: TransitionDataset, lr: float = 1e-3,
          reg: float | None = None, max_epochs: int = 5000,
          tol: float = 1e-6, patience: int = 50) -> list[np.ndarray]:
    """Full-batch gradient descent per member; returns loss histories.

    ``reg`` defaults to 0.001 divided by the output dimension and pulls
    weights toward each member's own anchor.  Stops when the loss improved
    by less than ``tol`` over the last ``patience`` epochs, or at
    ``max_epochs``.  Normalization constants are refreshed from the
    dataset before descending.
    """
    members = ensemble.members if isinstance(ensemble, Ensemble) \
        else [ensemble]
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    histories = []
    for member in members:
        if reg is None:
            member_reg = 0.001 / member.n_state
        else:
            member_reg = float(reg)
        feats = member._features(dataset.states, dataset.actions)
        deltas = dataset.next_states - dataset.states
        member.in_mu = feats.mean(axis=0)
        member.in_std = np.maximum(feats.std(axis=0), 1e-8)
        member.out_mu = deltas.mean(axis=0)
        member.out_std = np.maximum(deltas.std(axis=0), 1e-8)
        Z = (feats - member.in_mu) / member.in_std
        Y = (deltas - member.out_mu) / member.out_std
        hist = []
        for epoch in range(max_epochs):
            loss, gWs, gbs = member._loss_and_grads(Z, Y, member_reg)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}", epoch)
            hist.append(loss)
            for i in range(len(member.Ws)):
                member.Ws[i] -= lr * gWs[i]
                member.bs[i] -= lr * gbs[i]
            if epoch >= patience and hist[-1 - patience] - hist[-1] < tol:
                break
        histories.append(np.asarray(hist))
    return histories


def exploration_noise(episode: int, plant: str = "freeflyer") -> float:
    """Std of the Gaussian action noise injected while gathering data."""
    if episode < 0:
        raise ValueError("episode index must be nonnegative")
    try:
        schedule = EXPLORATION_SCHEDULES[plant]
    except KeyError:
        raise ValueError(f"unknown plant kind: {plant!r}") from None
    return schedule[episode] if episode < len(schedule) else 0.0


# ---------------------------------------------------------------------------
# checkpoints: flat float64 blob after an integer header
# ---------------------------------------------------------------------------

_MAGIC = b"PMLP\x01\x00"


def save_weights(member: MLP, path):
    """Dump one member: header (dims, seed), then weights and
    normalization as raw float64.  The anchor is not stored — it is
    regenerated from the seed on load."""
    header = np.array(
        [member.seed, member.n_state, member.n_action, member.width,
         member.n_hidden],
        dtype=np.int64,
    )
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(header.tobytes())
        for W, b in zip(member.Ws, member.bs):
            fh.write(np.ascontiguousarray(W).tobytes())
            fh.write(np.ascontiguousarray(b).tobytes())
        for arr in (member.in_mu, member.in_std, member.out_mu,
                    member.out_std):
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_weights(path) -> MLP:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a model checkpoint")
        seed, n_state, n_action, width, n_hidden = np.frombuffer(
            fh.read(5 * 8), dtype=np.int64)
        member = MLP(int(n_action), int(n_state), int(width), int(n_hidden),
                     int(seed))

        def take(shape):
            n = int(np.prod(shape))
            return np.frombuffer(fh.read(n * 8), dtype=np.float64
                                 ).reshape(shape).copy()

        for i, (W, b) in enumerate(zip(member.Ws, member.bs)):
            member.Ws[i] = take(W.shape)
            member.bs[i] = take(b.shape)
        member.in_mu = take(member.in_mu.shape)
        member.in_std = take(member.in_std.shape)
        member.out_mu = take(member.out_mu.shape)
        member.out_std = take(member.out_std.shape)
        if fh.read(1):
            raise ValueError("trailing bytes in checkpoint")
    return member
