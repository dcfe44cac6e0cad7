import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hybridsed.audio import Spectrogram
from hybridsed.boundaries import EventBoundary
from hybridsed.errors import DataError
from hybridsed.events import LabeledEvent
from hybridsed.labeling import (ClassifierConfig, EmptySpanError, LinearClassifier,
                                PosteriorMatrix, classifier_features, clip_loss_and_grad,
                                infer_label, label_boundaries, load_posteriors, majority_vote,
                                predict_posteriors, train_frame_classifier, write_posteriors)


def post(rows, names=("Cat", "Dog"), period=0.1):
    return PosteriorMatrix(np.array(rows, dtype=float), period, names)


# -- infer_label ---------------------------------------------------------------------------

def test_certain_class():
    p = post([[0, 1]] * 10)
    ev = infer_label(p, EventBoundary(0.2, 0.6))
    assert (ev.class_name, ev.score) == ("Dog", 1.0)


def test_hand_average():
    p = post([[0.9, 0.1], [0.2, 0.6], [0.4, 0.6], [0.9, 0.1]], names=("c1", "c2"))
    ev = infer_label(p, EventBoundary(0.1, 0.3))  # frames 1 and 2 (centers .15, .25)
    assert ev.class_name == "c2"
    assert ev.score == pytest.approx(0.6)


def test_tie_goes_to_lexicographic_first():
    p = post([[0.5, 0.5, 0.5]] * 4, names=("b", "a", "c"))
    ev = infer_label(p, EventBoundary(0.0, 0.4))
    assert (ev.class_name, ev.score) == ("a", 0.5)


def test_span_uses_frame_centers_half_open():
    p = post([[1, 0], [0, 1], [1, 0]])
    # [0.05, 0.15): only frame 0's center (0.05) is inside
    assert infer_label(p, EventBoundary(0.05, 0.15)).class_name == "Cat"
    assert infer_label(p, EventBoundary(0.06, 0.16)).class_name == "Dog"


def test_zero_frame_span_and_clamping():
    p = post([[1, 0], [0, 1]])
    with pytest.raises(EmptySpanError):
        infer_label(p, EventBoundary(0.06, 0.14))
    with pytest.raises(EmptySpanError):
        infer_label(p, EventBoundary(5.0, 6.0))
    assert infer_label(p, EventBoundary(0.1, 9.0)).class_name == "Dog"
    events, dropped = label_boundaries(p, [EventBoundary(0.0, 0.2), EventBoundary(3.0, 4.0)])
    assert len(events) == 1 and dropped == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(-0.3, 0.3))
def test_label_invariances(seed, shift):
    rng = np.random.default_rng(seed)
    vals = rng.uniform(0.3, 0.7, (12, 4))
    names = ("a", "b", "c", "d")
    b = EventBoundary(0.2, 0.9)
    base = infer_label(PosteriorMatrix(vals, 0.1, names), b).class_name
    assert infer_label(PosteriorMatrix(vals + shift, 0.1, names), b).class_name == base
    perm = rng.permutation(4)
    permuted = PosteriorMatrix(vals[:, perm], 0.1, tuple(names[i] for i in perm))
    assert infer_label(permuted, b).class_name == base


# -- majority vote --------------------------------------------------------------------------

def vote(*pairs):
    return [LabeledEvent(1.0, 2.0, c, s) for c, s in pairs]


def test_majority_examples():
    assert majority_vote(vote(("Dog", .5), ("Dog", .5), ("Cat", .9))).class_name == "Dog"
    assert majority_vote(vote(("Dog", .9), ("Cat", .8), ("Cat", .7))).class_name == "Cat"
    ev = majority_vote(vote(("Dog", .9), ("Cat", .8)))
    assert (ev.class_name, ev.score) == ("Dog", .9)
    assert majority_vote(vote(("b", .5), ("a", .5))).class_name == "a"


def test_majority_score_is_mean_of_winner():
    ev = majority_vote(vote(("Cat", .8), ("Cat", .6), ("Dog", 1.0)))
    assert ev.score == pytest.approx(0.7)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=7))
def test_unanimous_vote(scores):
    assert majority_vote(vote(*[("Owl", s) for s in scores])).class_name == "Owl"


def test_majority_errors():
    with pytest.raises(DataError):
        majority_vote([])
    with pytest.raises(DataError):
        majority_vote([LabeledEvent(1, 2, "a"), LabeledEvent(1, 3, "a")])


# -- posterior files ------------------------------------------------------------------------------

def test_posterior_csv_round_trip(tmp_path):
    p = post([[0.25, 0.5], [1.0, 0.0]], period=0.02)
    write_posteriors(tmp_path / "p.csv", p)
    back = load_posteriors(tmp_path / "p.csv")
    assert back.class_names == ("Cat", "Dog")
    assert back.frame_period_s == 0.02
    assert np.array_equal(back.values, p.values)


def test_posterior_out_of_range_names_cell(tmp_path):
    (tmp_path / "p.csv").write_text("#frame_period_s=0.02\nA,B\n0.1,0.2\n0.3,1.3\n")
    with pytest.raises(DataError, match=r"p.csv:4: column 2 \(B\)"):
        load_posteriors(tmp_path / "p.csv")


def test_posterior_malformed(tmp_path):
    (tmp_path / "a.csv").write_text("A,B\n0.1,0.2\n")
    with pytest.raises(DataError, match="frame_period_s"):
        load_posteriors(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("#frame_period_s=0.02\nA,B\n0.1\n")
    with pytest.raises(DataError, match="expected 2 values"):
        load_posteriors(tmp_path / "b.csv")


def test_posterior_empty_is_accepted(tmp_path, caplog):
    (tmp_path / "e.csv").write_text("#frame_period_s=0.02\nA,B\n")
    p = load_posteriors(tmp_path / "e.csv")
    assert p.empty and p.values.shape == (0, 2)
    assert "no frames" in caplog.text


# -- frame classifier ---------------------------------------------------------------------------

def test_classifier_features_shape_and_edges():
    x = np.arange(12.0).reshape(4, 3)
    f = classifier_features(x, context=1)
    assert f.shape == (4, 9)
    assert f[0].tolist() == [0, 1, 2, 0, 1, 2, 3, 4, 5]
    assert f[3].tolist() == [6, 7, 8, 9, 10, 11, 9, 10, 11]
    assert classifier_features(np.zeros((5, 64))).shape == (5, 576)


def test_predict_zero_model_is_half():
    m = LinearClassifier(np.zeros((6, 2)), np.zeros(2), ("a", "b"), np.zeros(6), np.ones(6), 0)
    p = predict_posteriors(m, np.random.default_rng(0).normal(size=(5, 6)), 0.02)
    assert np.all(p.values == 0.5) and p.frame_period_s == 0.02


def test_predict_saturates_but_stays_open():
    m = LinearClassifier(np.zeros((3, 2)), np.array([1e3, -1e3]), ("a", "b"), np.zeros(3),
                         np.ones(3), 0)
    p = predict_posteriors(m, np.zeros((4, 3)))
    assert np.all(p.values[:, 0] > 0.999) and np.all(p.values[:, 0] < 1)
    assert np.all(p.values[:, 1] > 0)


def test_predict_matches_affine_sigmoid_oracle():
    rng = np.random.default_rng(7)
    W, b = rng.normal(size=(5, 3)), rng.normal(size=3)
    mean, std = rng.normal(size=5), rng.uniform(0.5, 2, 5)
    x = rng.normal(size=(6, 5))
    m = LinearClassifier(W, b, ("x", "y", "z"), mean, std, 0)
    got = predict_posteriors(m, x).values
    for t in range(6):
        z = oracles.affine_rbm(oracles.standardize(x[t].tolist(), mean.tolist(), std.tolist()),
                               W.tolist(), b.tolist())
        want = [1 / (1 + np.exp(-v)) for v in z]
        assert np.allclose(got[t], want, atol=1e-12)


def test_predict_from_log_mel_spectrogram():
    m = LinearClassifier(np.zeros((64 * 3, 1)), np.zeros(1), ("a",), np.zeros(192), np.ones(192),
                         1)
    s = Spectrogram(np.zeros((7, 64)), 0.02, np.arange(64.0), is_log=True)
    p = predict_posteriors(m, s)
    assert p.values.shape == (7, 1) and p.frame_period_s == 0.02
    with pytest.raises(DataError):
        predict_posteriors(m, np.zeros((3, 5)))


def test_clip_loss_gradient_check():
    rng = np.random.default_rng(3)
    n_feat, n_cls = 5, 2
    clips = [rng.normal(size=(rng.integers(3, 7), n_feat)) for _ in range(4)]
    targets = np.array([[1, 0], [0, 1], [1, 1], [0, 0]], dtype=float)
    W, b = rng.normal(0, 0.3, (n_feat, n_cls)), rng.normal(0, 0.3, n_cls)
    _, dW, db = clip_loss_and_grad(W, b, clips, targets, l2=1e-2)
    flat = np.concatenate([W.ravel(), b])

    def f(theta):
        theta = np.asarray(theta)
        return clip_loss_and_grad(theta[:W.size].reshape(W.shape), theta[W.size:], clips,
                                  targets, l2=1e-2)[0]

    num = np.array(oracles.central_difference(f, flat.tolist(), h=1e-6))
    ana = np.concatenate([dW.ravel(), db])
    assert np.linalg.norm(ana - num) / np.linalg.norm(num) <= 1e-5


def separable_clips(seed=0, n=12):
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n):
        label = "high" if i % 2 else "low"
        centre = 2.0 if label == "high" else -2.0
        clips.append((rng.normal(centre, 0.5, (20, 4)), {label}))
    return clips


def test_classifier_separates_training_clips():
    clips = separable_clips()
    m = train_frame_classifier(clips, ["high", "low"], ClassifierConfig(epochs=200))
    for feats, labels in clips:
        scores = predict_posteriors(m, feats).values.mean(axis=0)
        predicted = {n for n, s in zip(m.class_names, scores) if s > 0.5}
        assert predicted == labels


def test_classifier_zero_epochs_keeps_init():
    m = train_frame_classifier(separable_clips(), ["high", "low"],
                               ClassifierConfig(epochs=0, rng_seed=5))
    init = np.random.default_rng(5).normal(0.0, 0.01, (4, 2))
    assert np.array_equal(m.weights, init) and not m.bias.any()


def test_classifier_loss_monotone_small_lr():
    losses = []
    train_frame_classifier(separable_clips(), ["high", "low"],
                           ClassifierConfig(epochs=60, learning_rate=1e-3, momentum=0.0),
                           on_epoch=lambda e, loss: losses.append(loss))
    assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_classifier_deterministic():
    cfg = ClassifierConfig(epochs=20, rng_seed=3)
    a = train_frame_classifier(separable_clips(), ["high", "low"], cfg)
    b = train_frame_classifier(separable_clips(), ["high", "low"], cfg)
    assert a.weights.tobytes() == b.weights.tobytes()


def test_classifier_errors():
    with pytest.raises(DataError, match="absent"):
        train_frame_classifier(separable_clips(), ["high", "low", "mid"])
    with pytest.raises(DataError, match="not in class vocabulary"):
        train_frame_classifier(separable_clips(), ["high"])
    with pytest.raises(DataError):
        train_frame_classifier([], ["a"])
