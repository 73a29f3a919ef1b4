"""Learned-dynamics tests: angle encoding, exact Jacobians vs finite
differences, anchored training behavior, checkpoints, and the
epistemic-disagreement property the planner relies on."""

import numpy as np
import pytest

from pmpc.ensemble import (
    MLP,
    Ensemble,
    TransitionDataset,
    encode_state,
    exploration_noise,
    load_weights,
    save_weights,
    train,
)
from pmpc.errors import TrainingDivergedError


def linear_dataset(seed=0, rows=120, scale=1.0):
    rng = np.random.default_rng(seed)
    C = rng.normal(0, 0.3, (8, 6))
    xs = rng.normal(0, scale, (rows, 6))
    us = rng.normal(0, scale, (rows, 2))
    xn = xs + np.hstack([xs, us]) @ C
    return TransitionDataset(xs, us, xn)


# ---------------------------------------------------------------------------
# state encoding
# ---------------------------------------------------------------------------


def test_encode_replaces_angle_with_sin_cos():
    x = np.array([9.0, 8.0, 0.0, 1.0, 2.0, 3.0])
    np.testing.assert_array_equal(encode_state(x),
                                  [9.0, 8.0, 0.0, 1.0, 1.0, 2.0, 3.0])


def test_encode_quarter_turn():
    x = np.zeros(6)
    x[2] = np.pi / 2
    enc = encode_state(x)
    assert abs(enc[2] - 1.0) < 1e-12
    assert abs(enc[3]) < 1e-12


def test_encode_is_periodic():
    x = np.array([0.5, -0.5, 2.1, 0.1, 0.2, 0.3])
    y = x.copy()
    y[2] += 2 * np.pi
    np.testing.assert_allclose(encode_state(x), encode_state(y), atol=1e-12)


def test_encode_broadcasts():
    xs = np.random.default_rng(0).normal(0, 1, (4, 5, 6))
    enc = encode_state(xs)
    assert enc.shape == (4, 5, 7)
    np.testing.assert_array_equal(enc[2, 3], encode_state(xs[2, 3]))


# ---------------------------------------------------------------------------
# prediction surface
# ---------------------------------------------------------------------------


def test_zero_weights_predict_no_motion():
    m = MLP(n_action=2, width=8, seed=0)
    for i in range(len(m.Ws)):
        m.Ws[i] = np.zeros_like(m.Ws[i])
        m.bs[i] = np.zeros_like(m.bs[i])
    x = np.array([1.0, -2.0, 0.3, 0.1, 0.0, -0.1])
    np.testing.assert_array_equal(m.step(x, np.ones(2)), x)


def test_equal_seeds_make_identical_members():
    a, b = MLP(n_action=2, seed=11), MLP(n_action=2, seed=11)
    x = np.random.default_rng(0).normal(0, 1, 6)
    u = np.ones(2)
    np.testing.assert_array_equal(a.forward(x, u), b.forward(x, u))
    c = MLP(n_action=2, seed=12)
    assert not np.array_equal(a.forward(x, u), c.forward(x, u))


def test_anchor_is_frozen():
    m = MLP(n_action=2, width=8, seed=0)
    with pytest.raises((ValueError, RuntimeError)):
        m.anchor[0][0, 0] = 1.0


def test_forward_broadcasts_over_batches():
    m = MLP(n_action=2, width=8, seed=1)
    rng = np.random.default_rng(2)
    xs, us = rng.normal(0, 1, (7, 6)), rng.normal(0, 1, (7, 2))
    batch = m.forward(xs, us)
    for i in range(7):
        # matmul picks different BLAS kernels for matrices and single
        # rows, so agreement is to rounding, not bitwise
        np.testing.assert_allclose(batch[i], m.forward(xs[i], us[i]),
                                   rtol=1e-12, atol=1e-14)


def test_rollout_batch_chains_steps():
    m = MLP(n_action=2, width=8, seed=1)
    rng = np.random.default_rng(3)
    x0s = rng.normal(0, 1, (3, 6))
    us = rng.normal(0, 0.5, (3, 4, 2))
    xs = m.rollout_batch(x0s, us)
    assert xs.shape == (3, 5, 6)
    x = x0s[1]
    for t in range(4):
        x = m.step(x, us[1, t])
    np.testing.assert_allclose(xs[1, -1], x, atol=1e-12)


def test_linearize_matches_finite_differences():
    m = MLP(n_action=2, width=16, seed=3)
    rng = np.random.default_rng(0)
    # non-trivial normalization so the chain rule is actually exercised
    m.in_mu = rng.normal(0, 0.3, 9)
    m.in_std = np.abs(rng.normal(1, 0.2, 9))
    m.out_mu = rng.normal(0, 0.1, 6)
    m.out_std = np.abs(rng.normal(1, 0.1, 6))
    h = 1e-6
    for _ in range(100):
        x = rng.normal(0, 1, 6)
        u = rng.normal(0, 1, 2)
        A, B, c = m.linearize(x, u)
        Af, Bf = np.empty((6, 6)), np.empty((6, 2))
        for j in range(6):
            e = np.zeros(6)
            e[j] = h
            Af[:, j] = (m.step(x + e, u) - m.step(x - e, u)) / (2 * h)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            Bf[:, j] = (m.step(x, u + e) - m.step(x, u - e)) / (2 * h)
        assert np.abs(A - Af).max() <= 1e-4 * max(np.abs(Af).max(), 1.0)
        assert np.abs(B - Bf).max() <= 1e-4 * max(np.abs(Bf).max(), 1.0)
        np.testing.assert_allclose(A @ x + B @ u + c, m.step(x, u),
                                   atol=1e-12)


def test_dimension_validation():
    with pytest.raises(ValueError):
        MLP(n_action=0)
    with pytest.raises(ValueError):
        MLP(n_action=2, n_hidden=0)


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------


def test_dataset_append_and_episode_folding():
    ds = TransitionDataset()
    assert len(ds) == 0
    ds.append(np.zeros(6), np.zeros(2), np.ones(6))
    assert len(ds) == 1
    states = np.arange(18.0).reshape(3, 6)
    acts = np.arange(4.0).reshape(2, 2)
    ds.add_episode(states, acts)
    assert len(ds) == 3
    np.testing.assert_array_equal(ds.states[1], states[0])
    np.testing.assert_array_equal(ds.next_states[2], states[2])
    np.testing.assert_array_equal(ds.actions[2], acts[1])


def test_dataset_rejects_ragged_input():
    with pytest.raises(ValueError):
        TransitionDataset(np.zeros((3, 6)), np.zeros((2, 2)),
                          np.zeros((3, 6)))


def test_ensemble_build_gives_distinct_members():
    ens = Ensemble.build(n_action=2, D=4, width=8, seed=5)
    assert len(ens) == 4
    assert [m.seed for m in ens.members] == [5, 6, 7, 8]
    assert not np.array_equal(ens.members[0].Ws[0], ens.members[1].Ws[0])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def test_training_rejects_empty_dataset():
    with pytest.raises(ValueError):
        train(MLP(n_action=2, width=8), TransitionDataset())


def test_training_loss_monotone_at_small_lr():
    ds = linear_dataset(seed=4, rows=60)
    hist = train(MLP(n_action=2, width=16, seed=0), ds, lr=1e-4,
                 max_epochs=300)[0]
    assert np.all(np.diff(hist) <= 1e-12)


def test_linear_data_trains_to_near_zero_loss():
    # the least-squares oracle residual for noiseless linear data is 0
    ds = linear_dataset(seed=1)
    hist = train(MLP(n_action=2, width=32, seed=0), ds, lr=1e-2, reg=0.0,
                 max_epochs=12000)[0]
    assert hist[-1] < 0.02
    assert hist[-1] < 1e-3 * hist[0]


def test_huge_regularization_pins_weights_to_anchor():
    # lr must satisfy lr * 2reg < 2 for plain gradient descent to be
    # stable, so the reg -> inf limit is probed at a proportionally
    # shrunk step size.
    ds = linear_dataset(seed=2, rows=40)
    m = MLP(n_action=2, width=16, seed=9)
    train(m, ds, lr=1e-10, reg=1e9, max_epochs=200)
    n = len(m.Ws)
    for i in range(n):
        assert np.abs(m.Ws[i] - m.anchor[i]).max() < 1e-3
        assert np.abs(m.bs[i] - m.anchor[n + i]).max() < 1e-3


def test_duplicated_rows_take_the_same_gradient_step():
    ds = linear_dataset(seed=3, rows=30)
    doubled = TransitionDataset(
        np.vstack([ds.states, ds.states]),
        np.vstack([ds.actions, ds.actions]),
        np.vstack([ds.next_states, ds.next_states]))
    a, b = MLP(n_action=2, width=16, seed=7), MLP(n_action=2, width=16,
                                                  seed=7)
    train(a, ds, max_epochs=1)
    train(b, doubled, max_epochs=1)
    for Wa, Wb in zip(a.Ws, b.Ws):
        np.testing.assert_allclose(Wa, Wb, rtol=1e-12)


def test_non_finite_loss_raises_with_epoch():
    ds = linear_dataset(seed=5, rows=20)
    ds.states[3, 1] = np.nan
    with pytest.raises(TrainingDivergedError) as err:
        train(MLP(n_action=2, width=8), ds, max_epochs=10)
    assert err.value.epoch == 0


def test_training_refreshes_normalization():
    ds = linear_dataset(seed=6, rows=50, scale=3.0)
    m = MLP(n_action=2, width=8, seed=0)
    train(m, ds, max_epochs=1)
    feats = m._features(ds.states, ds.actions)
    np.testing.assert_allclose(m.in_mu, feats.mean(axis=0))
    np.testing.assert_allclose(m.in_std, feats.std(axis=0))
    deltas = ds.next_states - ds.states
    np.testing.assert_allclose(m.out_mu, deltas.mean(axis=0))


def test_far_points_disagree_more_than_training_points():
    wins = 0
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        C = rng.normal(0, 0.3, (8, 6))
        xs = rng.normal(0, 0.5, (60, 6))
        us = rng.normal(0, 0.5, (60, 2))
        xn = xs + np.hstack([xs, us]) @ C
        ens = Ensemble.build(n_action=2, D=3, width=16, seed=trial * 7)
        train(ens, TransitionDataset(xs, us, xn), lr=3e-3, max_epochs=400)

        def spread(X, U):
            preds = np.stack([m.forward(X, U) for m in ens.members])
            return preds.std(axis=0).mean()

        wins += spread(xs[:20] + 6.0, us[:20] + 6.0) > spread(xs[:20],
                                                              us[:20])
    assert wins >= 19


# ---------------------------------------------------------------------------
# exploration schedule
# ---------------------------------------------------------------------------


def test_exploration_schedule_values():
    ff = [exploration_noise(e, "freeflyer") for e in range(8)]
    assert ff == [0.3, 0.3, 0.1, 0.1, 0.01, 0.01, 0.0, 0.0]
    assert exploration_noise(0, "quadrotor") == 0.3
    assert exploration_noise(2, "quadrotor") == 0.01
    assert exploration_noise(3, "quadrotor") == 0.0
    assert exploration_noise(1000, "freeflyer") == 0.0


def test_exploration_schedule_validation():
    with pytest.raises(ValueError):
        exploration_noise(-1)
    with pytest.raises(ValueError):
        exploration_noise(0, "rocket")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def test_checkpoint_round_trip_is_exact(tmp_path):
    ds = linear_dataset(seed=8, rows=40)
    m = MLP(n_action=2, width=16, seed=21)
    train(m, ds, max_epochs=50)
    path = tmp_path / "member.bin"
    save_weights(m, path)
    back = load_weights(path)
    rng = np.random.default_rng(0)
    x, u = rng.normal(0, 1, 6), rng.normal(0, 1, 2)
    np.testing.assert_array_equal(back.forward(x, u), m.forward(x, u))
    for got, want in zip(back.anchor, m.anchor):
        np.testing.assert_array_equal(got, want)
    assert back.seed == m.seed


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError):
        load_weights(path)


def test_checkpoint_rejects_trailing_garbage(tmp_path):
    m = MLP(n_action=2, width=8, seed=0)
    path = tmp_path / "member.bin"
    save_weights(m, path)
    with open(path, "ab") as fh:
        fh.write(b"\x00")
    with pytest.raises(ValueError):
        load_weights(path)
