"""Label detected boundaries from frame-level class posteriors.

Posteriors come either from external CSV files (e.g. a CRNN run elsewhere) or
from ``LinearClassifier``, a small multi-label logistic model trained on
clip-level (weak) labels with average pooling over frames.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from hybridsed.audio import MEL_HOP_S, Spectrogram
from hybridsed.errors import DataError, NumericalError
from hybridsed.events import LabeledEvent

log = logging.getLogger(__name__)

CLASSIFIER_CONTEXT = 4
_EPS = 1e-7


class EmptySpanError(DataError):
    """The event span contains no posterior frame; the event should be dropped."""


@dataclass(frozen=True)
class PosteriorMatrix:
    values: np.ndarray  # frames x classes, multi-label (rows need not sum to 1)
    frame_period_s: float
    class_names: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        names = tuple(self.class_names)
        if v.ndim != 2 or v.shape[1] != len(names):
            raise DataError(f"posterior shape {v.shape} does not match {len(names)} classes")
        if not names or any(not n for n in names) or len(set(names)) != len(names):
            raise DataError("class names must be unique and non-empty")
        if v.size and (np.any(~np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0):
            raise DataError("posterior values must lie in [0, 1]")
        if self.frame_period_s <= 0:
            raise DataError("frame_period_s must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "class_names", names)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def empty(self) -> bool:
        return self.n_frames == 0

    def frame_centers(self):
        return (np.arange(self.n_frames) + 0.5) * self.frame_period_s


# ---------------------------------------------------------------------------
# Label inference
# ---------------------------------------------------------------------------

def _argmax_lexicographic(scores, names, tol=1e-12):
    best = np.max(scores)
    tied = [n for s, n in zip(scores, names) if s >= best - tol]
    return min(tied)


def infer_label(p: PosteriorMatrix, b) -> LabeledEvent:
    """Average posterior over the event span, then the maximum-posterior class.

    Frame ``t`` belongs to the span when its center ``(t + 0.5) * period``
    lies in ``[onset, offset)``; the span is clamped to the posterior extent.
    Ties go to the lexicographically first class name.
    """
    extent = p.n_frames * p.frame_period_s
    onset, offset = max(b.onset_s, 0.0), min(b.offset_s, extent)
    centers = p.frame_centers()
    mask = (centers >= onset) & (centers < offset)
    if not mask.any():
        raise EmptySpanError(f"event ({b.onset_s:.3f}, {b.offset_s:.3f}) covers no posterior frame")
    means = p.values[mask].mean(axis=0)
    name = _argmax_lexicographic(means, p.class_names)
    score = float(means[p.class_names.index(name)])
    return LabeledEvent(b.onset_s, b.offset_s, name, score)


def majority_vote(labels) -> LabeledEvent:
    """Ensemble label for one boundary: most votes, then highest mean score,
    then lexicographic order."""
    labels = list(labels)
    if not labels:
        raise DataError("majority_vote needs at least one labeled event")
    first = labels[0]
    for ev in labels[1:]:
        if abs(ev.onset_s - first.onset_s) > 1e-9 or abs(ev.offset_s - first.offset_s) > 1e-9:
            raise DataError("all votes must share the same boundary")
    scores = defaultdict(list)
    for ev in labels:
        scores[ev.class_name].append(ev.score)
    winner = min(scores, key=lambda c: (-len(scores[c]), -np.mean(scores[c]), c))
    return LabeledEvent(first.onset_s, first.offset_s, winner, float(np.mean(scores[winner])))


# ---------------------------------------------------------------------------
# Posterior CSV
# ---------------------------------------------------------------------------

def load_posteriors(path) -> PosteriorMatrix:
    """Read ``#frame_period_s=<x>``, a class-name line, then one row per frame.

    A file without data rows yields a zero-frame matrix (logged, not an error).
    """
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith("#frame_period_s="):
        raise DataError(f"{path}: first line must be '#frame_period_s=<float>' "
                        "followed by a class-name line")
    try:
        period = float(lines[0].split("=", 1)[1])
    except ValueError:
        raise DataError(f"{path}: bad frame period {lines[0]!r}") from None
    names = tuple(n.strip() for n in lines[1].split(","))
    if not names or any(not n for n in names):
        raise DataError(f"{path}: malformed class-name header")

    rows = []
    for lineno, line in enumerate(lines[2:], 3):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(names):
            raise DataError(f"{path}:{lineno}: expected {len(names)} values, got {len(cells)}")
        row = []
        for col, cell in enumerate(cells):
            try:
                x = float(cell)
            except ValueError:
                raise DataError(f"{path}:{lineno}: column {col + 1} ({names[col]}) "
                                f"is not a number: {cell!r}") from None
            if not 0.0 <= x <= 1.0:
                raise DataError(f"{path}:{lineno}: column {col + 1} ({names[col]}) "
                                f"value {x} outside [0, 1]")
            row.append(x)
        rows.append(row)
    if not rows:
        log.warning("%s: posterior file has no frames", path)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return PosteriorMatrix(values, period, names)


def write_posteriors(path, p: PosteriorMatrix):
    lines = [f"#frame_period_s={p.frame_period_s!r}", ",".join(p.class_names)]
    lines += [",".join(f"{x:.6f}" for x in row) for row in p.values]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Weakly supervised frame classifier
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearClassifier:
    weights: np.ndarray  # features x classes
    bias: np.ndarray
    class_names: tuple
    feature_mean: np.ndarray
    feature_std: np.ndarray
    context: int = CLASSIFIER_CONTEXT

    def __post_init__(self):
        for name in ("weights", "bias", "feature_mean", "feature_std"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        f, k = self.weights.shape
        if self.bias.shape != (k,) or len(self.class_names) != k:
            raise DataError("classifier bias/classes inconsistent with weights")
        if self.feature_mean.shape != (f,) or self.feature_std.shape != (f,):
            raise DataError("classifier feature statistics inconsistent with weights")

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]


@dataclass
class ClassifierConfig:
    epochs: int = 300
    learning_rate: float = 1.0
    momentum: float = 0.9
    l2: float = 1e-4
    init_std: float = 0.01
    rng_seed: int = 0


def classifier_features(logmel, context: int = CLASSIFIER_CONTEXT):
    """Log-mel frames with +-``context`` neighbors (edge frames replicated).

    64 bands with context 4 give 576 features per frame.
    """
    x = np.asarray(logmel.values if isinstance(logmel, Spectrogram) else logmel, dtype=np.float64)
    n = x.shape[0]
    idx = np.clip(np.arange(n)[:, None] + np.arange(-context, context + 1)[None, :], 0, max(n - 1, 0))
    return x[idx].reshape(n, x.shape[1] * (2 * context + 1))


def clip_loss_and_grad(weights, bias, clips, targets, l2: float = 0.0):
    """Weak-label binary cross-entropy with mean pooling of frame sigmoids.

    ``clips`` is a list of (frames x features) matrices, ``targets`` a
    (clips x classes) 0/1 matrix.  Returns ``(loss, dW, db)``; the loss is
    averaged over clips and classes.
    """
    n_clips, n_classes = targets.shape
    scale = 1.0 / (n_clips * n_classes)
    loss = 0.5 * l2 * np.sum(weights ** 2)
    dW = l2 * weights
    db = np.zeros_like(bias)
    for x, y in zip(clips, targets):
        s = expit(x @ weights + bias)
        p = np.clip(s.mean(axis=0), _EPS, 1.0 - _EPS)
        loss -= scale * np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
        dp = scale * (p - y) / (p * (1.0 - p))
        dz = s * (1.0 - s) * (dp / len(x))
        dW += x.T @ dz
        db += dz.sum(axis=0)
    return float(loss), dW, db


def train_frame_classifier(clips, class_names, cfg: ClassifierConfig | None = None,
                           on_epoch=None) -> LinearClassifier:
    """Fit a linear multi-label frame classifier from weakly labeled clips.

    ``clips`` is a list of ``(features, labels)`` pairs where ``features`` is
    a frames x features matrix (see ``classifier_features``) and ``labels`` a
    set of class names.  Full-batch gradient descent with momentum;
    ``on_epoch(epoch, loss)`` reports the loss before each update.
    """
    cfg = cfg or ClassifierConfig()
    class_names = tuple(class_names)
    if not clips:
        raise DataError("no training clips for the frame classifier")
    index = {c: i for i, c in enumerate(class_names)}
    targets = np.zeros((len(clips), len(class_names)))
    for i, (_, labels) in enumerate(clips):
        for lab in labels:
            if lab not in index:
                raise DataError(f"weak label {lab!r} not in class vocabulary")
            targets[i, index[lab]] = 1.0
    missing = [c for c in class_names if targets[:, index[c]].sum() == 0]
    if missing:
        raise DataError(f"classes absent from all training clips: {', '.join(missing)}")

    feats = [np.asarray(f, dtype=np.float64) for f, _ in clips]
    stacked = np.concatenate(feats)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), 1e-6)
    feats = [(f - mean) / std for f in feats]

    rng = np.random.default_rng(cfg.rng_seed)
    W = rng.normal(0.0, cfg.init_std, (stacked.shape[1], len(class_names)))
    b = np.zeros(len(class_names))
    vW, vb = np.zeros_like(W), np.zeros_like(b)
    for epoch in range(cfg.epochs):
        loss, dW, db = clip_loss_and_grad(W, b, feats, targets, cfg.l2)
        if not np.isfinite(loss):
            raise NumericalError("classifier loss became non-finite")
        if on_epoch is not None:
            on_epoch(epoch, loss)
        vW = cfg.momentum * vW - cfg.learning_rate * dW
        vb = cfg.momentum * vb - cfg.learning_rate * db
        W = W + vW
        b = b + vb
    return LinearClassifier(W, b, class_names, mean, std)


def predict_posteriors(m: LinearClassifier, features, frame_period_s: float = MEL_HOP_S):
    """Per-frame sigmoid scores.

    ``features`` is either an expanded feature matrix or a log-mel
    Spectrogram, which is expanded here and supplies its own frame period.
    """
    if isinstance(features, Spectrogram):
        frame_period_s = features.frame_period_s
        features = classifier_features(features, m.context)
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.n_features:
        raise DataError(f"classifier expects {m.n_features} features, got shape {x.shape}")
    z = ((x - m.feature_mean) / m.feature_std) @ m.weights + m.bias
    # Keep strictly inside (0, 1) even when the sigmoid saturates in float64.
    values = np.clip(expit(z), np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    return PosteriorMatrix(values, frame_period_s, m.class_names)


def label_boundaries(p: PosteriorMatrix, boundaries):
    """Label every boundary; returns ``(events, n_dropped)`` where dropped
    boundaries covered no posterior frame."""
    events, dropped = [], 0
    for b in boundaries:
        try:
            events.append(infer_label(p, b))
        except EmptySpanError:
            dropped += 1
    return events, dropped
