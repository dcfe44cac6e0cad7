import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hybridsed.errors import DataError, NumericalError
from hybridsed.modelio import load_model
from hybridsed.models import (CrbmParams, RbmParams, TrainConfig, crbm_reconstruction_error,
                              crbm_train, crbm_transform, crbm_transform_frames, history_matrix,
                              rbm_free_energy, rbm_free_energy_grad, rbm_train, rbm_transform,
                              standardize_fit, transform_sequence)

FIXTURES = Path(__file__).parent / "fixtures"


def rbm(W, bh=None, bv=None):
    W = np.asarray(W, dtype=float)
    v, h = W.shape
    return RbmParams(W, np.zeros(h) if bh is None else np.asarray(bh, float),
                     np.zeros(v) if bv is None else np.asarray(bv, float), np.ones(v))


def crbm(W, A, bh, n, A_vis=None):
    W = np.asarray(W, float)
    v = W.shape[0]
    return CrbmParams(W, np.asarray(A, float), np.asarray(bh, float), np.zeros(v),
                      np.zeros((v * n, v)) if A_vis is None else A_vis, n)


def random_rbm(rng, v, h, scale=0.5):
    return rbm(rng.normal(0, scale, (v, h)), rng.normal(size=h), rng.normal(size=v))


# -- standardization -------------------------------------------------------------

def test_standardize_constant_column_floor():
    mean, std = standardize_fit(np.array([[3.0, 0.0], [3.0, 2.0]]))
    assert mean.tolist() == [3.0, 1.0]
    assert std.tolist() == [1e-6, 1.0]


def test_standardize_idempotent():
    x = np.random.default_rng(0).normal(3, 2, (500, 4))
    m, s = standardize_fit(x)
    m2, s2 = standardize_fit((x - m) / s)
    assert np.allclose(m2, 0, atol=1e-12) and np.allclose(s2, 1, atol=1e-12)


def test_standardize_needs_rows():
    with pytest.raises(DataError):
        standardize_fit(np.zeros((0, 3)))


# -- RBM transform and free energy ----------------------------------------------------

def test_rbm_transform_trivial_cases():
    assert not rbm_transform(rbm(np.ones((3, 2))), np.zeros(3)).any()
    v = np.array([0.3, -1.0, 2.0])
    assert np.array_equal(rbm_transform(rbm(np.eye(3)), v), v)


def test_rbm_transform_small_oracle():
    W = np.array([[1, 0], [0, 1], [-1, 1]], dtype=float).T  # 2 visible x 3 hidden
    p = rbm(W, bh=[0.5, 0.5, 0.5])
    got = rbm_transform(p, np.array([1.0, 2.0]))
    assert got.tolist() == oracles.affine_rbm([1.0, 2.0], W.tolist(), [0.5] * 3)
    assert got.tolist() == [1.5, 2.5, 1.5]


def test_rbm_transform_dimension_mismatch():
    with pytest.raises(DataError):
        rbm_transform(rbm(np.zeros((3, 2))), np.zeros(4))


def test_free_energy_closed_forms():
    p = rbm(np.zeros((4, 6)))
    assert math.isclose(rbm_free_energy(p, np.zeros(4)), -6 * math.log(2), rel_tol=1e-14)
    bh = np.array([0.3, -2.0, 5.0])
    bv = np.array([1.0, -1.0])
    p = rbm(np.zeros((2, 3)), bh, bv)
    assert math.isclose(rbm_free_energy(p, bv), -np.sum(np.log1p(np.exp(bh))), rel_tol=1e-14)


def test_free_energy_matches_oracle():
    rng = np.random.default_rng(3)
    p = random_rbm(rng, 5, 4)
    v = rng.normal(size=5)
    want = oracles.free_energy(v.tolist(), p.W.tolist(), p.b_hidden.tolist(),
                               p.b_visible.tolist())
    assert abs(rbm_free_energy(p, v) - want) <= 1e-10


def test_free_energy_gradient_check():
    rng = np.random.default_rng(11)
    p = random_rbm(rng, 4, 3)
    v = rng.normal(size=4)
    gW, gbh, gbv = rbm_free_energy_grad(p, v)

    def f_of_W(flat):
        return oracles.free_energy(v.tolist(), np.reshape(flat, (4, 3)).tolist(),
                                   p.b_hidden.tolist(), p.b_visible.tolist())

    num = np.reshape(oracles.central_difference(f_of_W, p.W.ravel().tolist()), (4, 3))
    assert np.linalg.norm(gW - num) / np.linalg.norm(num) <= 1e-5

    num_bh = oracles.central_difference(
        lambda b: oracles.free_energy(v.tolist(), p.W.tolist(), b, p.b_visible.tolist()),
        p.b_hidden.tolist())
    assert np.linalg.norm(gbh - num_bh) / np.linalg.norm(num_bh) <= 1e-5

    num_bv = oracles.central_difference(
        lambda b: oracles.free_energy(v.tolist(), p.W.tolist(), p.b_hidden.tolist(), b),
        p.b_visible.tolist())
    assert np.linalg.norm(gbv - num_bv) / np.linalg.norm(num_bv) <= 1e-5


# -- RBM training ------------------------------------------------------------------------

def gaussian_mixture(seed=5, n=2000, dim=10):
    rng = np.random.default_rng(seed)
    comp = rng.random(n) < 0.5
    centers = np.stack([np.full(dim, 2.0), np.full(dim, -2.0)])
    x = centers[comp.astype(int)] + 0.5 * rng.normal(size=(n, dim))
    m, s = standardize_fit(x)
    return (x - m) / s


def test_rbm_learns_gaussian_mixture():
    errs = []
    rbm_train(gaussian_mixture(), TrainConfig(epochs=20, rng_seed=1), hidden_dim=16,
              on_epoch=lambda e, err: errs.append(err))
    assert len(errs) == 21
    assert errs[-1] <= 0.8 * errs[0]


def test_rbm_zero_learning_rate_keeps_init():
    x = gaussian_mixture(n=200)
    cfg = TrainConfig(epochs=3, learning_rate=0.0, rng_seed=4)
    p = rbm_train(x, cfg, hidden_dim=5)
    init = np.random.default_rng(4).normal(0.0, cfg.init_std, (10, 5))
    assert np.array_equal(p.W, init)
    assert not p.b_hidden.any() and not p.b_visible.any()


def test_rbm_identical_rows_pull_visible_bias():
    row = np.array([1.0, -2.0, 0.5, 0.0])
    data = np.tile(row, (256, 1))
    gaps = []
    for epochs in range(1, 6):
        p = rbm_train(data, TrainConfig(epochs=epochs, rng_seed=2), hidden_dim=3)
        gaps.append(np.linalg.norm(p.b_visible - row))
        assert np.abs(p.W).max() < 0.2
    assert np.linalg.norm(row) > gaps[0]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_rbm_training_is_deterministic():
    x = gaussian_mixture(n=300)
    cfg = TrainConfig(epochs=2, rng_seed=9)
    a, b = rbm_train(x, cfg, hidden_dim=6), rbm_train(x, cfg, hidden_dim=6)
    assert a.W.tobytes() == b.W.tobytes()
    assert a.b_hidden.tobytes() == b.b_hidden.tobytes()


def test_rbm_blow_up_raises_numerical_error():
    x = gaussian_mixture(n=300) * 1e3
    with np.errstate(all="ignore"), pytest.raises(NumericalError):
        rbm_train(x, TrainConfig(epochs=50, learning_rate=1e6, momentum=0.99), hidden_dim=4)


def test_rbm_empty_data():
    with pytest.raises(DataError):
        rbm_train(np.zeros((0, 3)), TrainConfig(), hidden_dim=2)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError):
        TrainConfig(minibatch=0)


# -- cRBM transform -------------------------------------------------------------------------

def test_crbm_with_zero_A_is_rbm():
    rng = np.random.default_rng(0)
    p = random_rbm(rng, 5, 3)
    c = crbm(p.W, np.zeros((10, 3)), p.b_hidden, 2)
    v = rng.normal(size=5)
    hist = rng.normal(size=(2, 5))
    assert np.allclose(crbm_transform(c, v, hist), rbm_transform(p, v), atol=1e-12, rtol=0)


def test_crbm_zero_input():
    c = crbm(np.ones((3, 2)), np.ones((9, 2)), np.zeros(2), 3)
    assert not crbm_transform(c, np.zeros(3), np.zeros((3, 3))).any()


def test_crbm_random_two_frame_oracle():
    rng = np.random.default_rng(8)
    W, A, b = rng.normal(size=(4, 3)), rng.normal(size=(8, 3)), rng.normal(size=3)
    v, hist = rng.normal(size=4), rng.normal(size=(2, 4))
    got = crbm_transform(crbm(W, A, b, 2), v, hist)
    want = oracles.affine_crbm(v.tolist(), hist.tolist(), W.tolist(), A.tolist(), b.tolist())
    assert np.allclose(got, want, atol=1e-12, rtol=0)


def test_crbm_history_shape_checked():
    c = crbm(np.ones((3, 2)), np.ones((9, 2)), np.zeros(2), 3)
    with pytest.raises(DataError):
        crbm_transform(c, np.zeros(3), np.zeros((2, 3)))


def test_history_matrix_replicates_first_frame():
    x = np.array([[1.0], [2.0], [3.0], [4.0]])
    assert history_matrix(x, 2).tolist() == [[1, 1], [1, 1], [1, 2], [2, 3]]
    assert history_matrix(x, 2, replicate=False).tolist() == [[1, 2], [2, 3]]


def test_transform_frames_matches_per_frame_calls():
    rng = np.random.default_rng(2)
    c = crbm(rng.normal(size=(3, 2)), rng.normal(size=(9, 2)), rng.normal(size=2), 3)
    x = rng.normal(size=(7, 3))
    rows = crbm_transform_frames(c, x)
    for t in range(7):
        hist = np.stack([x[max(t - k, 0)] for k in (3, 2, 1)])
        assert np.allclose(rows[t], crbm_transform(c, x[t], hist), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10 ** 6))
def test_affine_maps_are_linear(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    p = random_rbm(rng, 4, 3)
    v1, v2 = rng.normal(size=4), rng.normal(size=4)
    lhs = rbm_transform(p, alpha * v1 + beta * v2) - p.b_hidden
    rhs = alpha * (rbm_transform(p, v1) - p.b_hidden) + beta * (rbm_transform(p, v2) - p.b_hidden)
    assert np.allclose(lhs, rhs, atol=1e-10, rtol=0)

    c = crbm(rng.normal(size=(4, 3)), rng.normal(size=(8, 3)), rng.normal(size=3), 2)
    h1, h2 = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
    lhs = crbm_transform(c, alpha * v1 + beta * v2, alpha * h1 + beta * h2) - c.b_hidden
    rhs = (alpha * (crbm_transform(c, v1, h1) - c.b_hidden)
           + beta * (crbm_transform(c, v2, h2) - c.b_hidden))
    assert np.allclose(lhs, rhs, atol=1e-10, rtol=0)


# -- cRBM training ----------------------------------------------------------------------------

def periodic_sequence(period=4, dim=8, reps=200, seed=0):
    base = np.random.default_rng(seed).normal(size=(period, dim))
    return np.tile(base, (reps, 1))


def test_crbm_learns_periodic_sequence():
    seq = periodic_sequence()
    p = crbm_train([seq], 6, TrainConfig(epochs=30, rng_seed=1), hidden_dim=8)
    assert crbm_reconstruction_error(p, [seq]) <= 0.01 * seq.var(axis=0).sum()


def test_crbm_white_noise_no_worse_than_untrained():
    rng = np.random.default_rng(12)
    train = [rng.normal(size=(2000, 6)) for _ in range(3)]
    held_out = [rng.normal(size=(2000, 6))]
    untrained = crbm_train(train, 3, TrainConfig(epochs=0, rng_seed=3), hidden_dim=6)
    trained = crbm_train(train, 3, TrainConfig(epochs=10, rng_seed=3), hidden_dim=6)
    assert crbm_reconstruction_error(trained, held_out) <= crbm_reconstruction_error(untrained,
                                                                                     held_out)


def test_crbm_zero_learning_rate_keeps_init():
    seq = periodic_sequence(reps=20)
    cfg = TrainConfig(epochs=2, learning_rate=0.0, rng_seed=6)
    p = crbm_train([seq], 3, cfg, hidden_dim=4)
    assert np.array_equal(p.W, np.random.default_rng(6).normal(0.0, cfg.init_std, (8, 4)))
    assert not p.A.any() and not p.A_vis.any() and not p.b_hidden.any()


def test_crbm_history_never_crosses_clips():
    # Two constant clips at different levels: every training history lies in one clip,
    # so a model that only sees the history can reconstruct perfectly.
    clips = [np.full((50, 2), 1.0), np.full((50, 2), -1.0)]
    p = crbm_train(clips, 3, TrainConfig(epochs=40, rng_seed=0, learning_rate=1e-2), hidden_dim=2)
    assert crbm_reconstruction_error(p, clips) < 1e-2


def test_crbm_rejects_short_clip():
    with pytest.raises(DataError, match="need more than 5"):
        crbm_train([np.zeros((5, 2))], 5, TrainConfig(epochs=1), hidden_dim=2)


def test_crbm_training_deterministic():
    seq = periodic_sequence(reps=30)
    cfg = TrainConfig(epochs=2, rng_seed=1)
    a = crbm_train([seq], 3, cfg, hidden_dim=4)
    b = crbm_train([seq], 3, cfg, hidden_dim=4)
    assert a.A.tobytes() == b.A.tobytes() and a.W.tobytes() == b.W.tobytes()


# -- full affine chain ------------------------------------------------------------------------

def test_transform_sequence_golden_fixture():
    data = json.loads((FIXTURES / "golden_chain.json").read_text())
    r, _ = load_model(FIXTURES / "golden_rbm.model")
    cs = [load_model(FIXTURES / f"golden_crbm_{n}.model")[0] for n in data["contexts"]]
    got = transform_sequence(r, cs, np.array(data["frames"]), stack=data["stack"])
    assert len(got) == len(data["expected"])
    for mat, want in zip(got, data["expected"]):
        assert mat.shape == (len(data["frames"]), len(want[0]))
        assert np.max(np.abs(mat - np.array(want))) <= 1e-10


def test_transform_sequence_constant_input_is_time_invariant():
    rng = np.random.default_rng(1)
    r = random_rbm(rng, 6, 4)
    cs = [crbm(rng.normal(size=(4, 3)), rng.normal(size=(4 * n, 3)), rng.normal(size=3), n)
          for n in (2, 5)]
    outs = transform_sequence(r, cs, np.ones((20, 2)), stack=3)
    for out in outs:
        assert out.shape == (20, 3)
        assert np.allclose(out[6:], out[6], atol=1e-12)


def test_transform_sequence_zero_models_give_biases():
    r = rbm(np.zeros((6, 4)), bh=[1.0, 2.0, 3.0, 4.0])
    c = crbm(np.zeros((4, 2)), np.zeros((12, 2)), [-1.0, 0.5], 3)
    (out,) = transform_sequence(r, [c], np.random.default_rng(0).random((9, 2)), stack=3)
    assert np.array_equal(out, np.tile([-1.0, 0.5], (9, 1)))


def test_transform_sequence_dimension_check():
    r = rbm(np.zeros((6, 4)))
    c = crbm(np.zeros((5, 2)), np.zeros((10, 2)), np.zeros(2), 2)
    with pytest.raises(DataError):
        transform_sequence(r, [c], np.zeros((4, 2)), stack=3)
    with pytest.raises(DataError):
        transform_sequence(r, [], np.zeros((4, 3)), stack=3)
