"""Gaussian-Bernoulli RBM and conditional RBM.

After training, both models are used only as deterministic affine maps::

    RBM:   h_i = sum_j v_j W_ji + b_i
    cRBM:  b_i^t = sum_j hist_j A_ji + b_i
           c_i^t = sum_j v_j^t W_ji + b_i^t

where ``hist`` is the flattened window of the previous ``context_frames``
visible frames (oldest first).  Training is CD-k with mean-field Gaussian
visible reconstructions (unit variance) and Bernoulli hidden samples.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from hybridsed.audio import Spectrogram, stack_frames
from hybridsed.errors import DataError, NumericalError

STD_FLOOR = 1e-6


@dataclass
class TrainConfig:
    cd_steps: int = 10
    learning_rate: float = 1e-3
    epochs: int = 30
    minibatch: int = 64
    momentum: float = 0.9
    weight_decay: float = 1e-4
    rng_seed: int = 0
    init_std: float = 0.01

    def __post_init__(self):
        if self.cd_steps < 1:
            raise ValueError("cd_steps must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0 or self.minibatch < 1:
            raise ValueError("epochs must be >= 0 and minibatch >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass(frozen=True)
class RbmParams:
    W: np.ndarray  # visible x hidden
    b_hidden: np.ndarray
    b_visible: np.ndarray
    sigma: np.ndarray
    mean: np.ndarray = None
    std: np.ndarray = None

    def __post_init__(self):
        _freeze(self, visible_dim=self.W.shape[0], hidden_dim=self.W.shape[1])

    @property
    def visible_dim(self) -> int:
        return self.W.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W.shape[1]

    def standardize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


@dataclass(frozen=True)
class CrbmParams:
    W: np.ndarray  # visible x hidden
    A: np.ndarray  # (visible * context) x hidden
    b_hidden: np.ndarray
    b_visible_static: np.ndarray
    A_vis: np.ndarray  # (visible * context) x visible
    context_frames: int
    mean: np.ndarray = None
    std: np.ndarray = None

    def __post_init__(self):
        v, h = self.W.shape
        _freeze(self, visible_dim=v, hidden_dim=h)
        n = int(self.context_frames)
        if n < 1:
            raise DataError("context_frames must be >= 1")
        object.__setattr__(self, "context_frames", n)
        if self.A.shape != (v * n, h) or self.A_vis.shape != (v * n, v):
            raise DataError("autoregressive weight shapes inconsistent with W and context")

    @property
    def visible_dim(self) -> int:
        return self.W.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W.shape[1]

    def standardize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def _freeze(obj, visible_dim, hidden_dim):
    # Coerce arrays to float64, fill default standardization, validate shapes.
    for name in ("W", "A", "A_vis", "b_hidden", "b_visible", "b_visible_static", "sigma"):
        if hasattr(obj, name):
            object.__setattr__(obj, name, np.asarray(getattr(obj, name), dtype=np.float64))
    if obj.mean is None:
        object.__setattr__(obj, "mean", np.zeros(visible_dim))
    if obj.std is None:
        object.__setattr__(obj, "std", np.ones(visible_dim))
    object.__setattr__(obj, "mean", np.asarray(obj.mean, dtype=np.float64))
    object.__setattr__(obj, "std", np.asarray(obj.std, dtype=np.float64))
    vis_bias = obj.b_visible if hasattr(obj, "b_visible") else obj.b_visible_static
    if obj.b_hidden.shape != (hidden_dim,) or vis_bias.shape != (visible_dim,):
        raise DataError("bias shapes inconsistent with W")
    if obj.mean.shape != (visible_dim,) or obj.std.shape != (visible_dim,):
        raise DataError("standardization vectors inconsistent with W")


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

def standardize_fit(data):
    """Per-column mean and population standard deviation (floored at 1e-6)."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError("standardize_fit needs a 2-D matrix with at least 2 rows")
    return x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR)


# ---------------------------------------------------------------------------
# RBM
# ---------------------------------------------------------------------------

def _check_dim(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dim:
        raise DataError(f"{what}: expected last dimension {dim}, got {x.shape[-1]}")
    return x


def rbm_transform(p: RbmParams, v):
    """Affine hidden representation ``v @ W + b_hidden`` (no sigmoid, no sampling).

    ``v`` may be a single vector or a matrix of row vectors.
    """
    v = _check_dim(v, p.visible_dim, "rbm_transform")
    return v @ p.W + p.b_hidden


def rbm_free_energy(p: RbmParams, v):
    v = _check_dim(v, p.visible_dim, "rbm_free_energy")
    quad = 0.5 * np.sum((v - p.b_visible) ** 2, axis=-1)
    return quad - np.sum(np.logaddexp(0.0, v @ p.W + p.b_hidden), axis=-1)


def rbm_free_energy_grad(p: RbmParams, v):
    """Analytic gradient of the free energy of one visible vector.

    Returns ``(dW, db_hidden, db_visible)``.  Note that ``-dW`` is exactly the
    positive-phase statistic used by contrastive divergence.
    """
    v = _check_dim(v, p.visible_dim, "rbm_free_energy_grad")
    ph = expit(v @ p.W + p.b_hidden)
    return -np.outer(v, ph), -ph, p.b_visible - v


def rbm_reconstruct(p: RbmParams, v):
    """Mean-field reconstruction after one up-down pass."""
    ph = expit(rbm_transform(p, v))
    return ph @ p.W.T + p.b_visible


def rbm_reconstruction_error(p: RbmParams, data) -> float:
    """Mean over rows of ``||v - v_hat||^2`` for one up-down pass."""
    data = np.asarray(data, dtype=np.float64)
    return float(np.mean(np.sum((data - rbm_reconstruct(p, data)) ** 2, axis=1)))


def _ensure_finite(arrays, what):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite parameters during {what}; lower the learning rate")


def rbm_train(data, cfg: TrainConfig, hidden_dim: int = 350, mean=None, std=None,
              on_epoch=None) -> RbmParams:
    """Train a Gaussian-Bernoulli RBM with CD-k.

    ``data`` is expected to be standardized already; ``mean``/``std`` are only
    attached to the returned parameters so that ``transform_sequence`` can
    reapply them.  ``on_epoch(epoch, reconstruction_error)`` is called once
    before training (epoch 0) and after every epoch.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DataError("rbm_train needs a non-empty 2-D data matrix")
    n, n_vis = data.shape
    rng = np.random.default_rng(cfg.rng_seed)

    W = rng.normal(0.0, cfg.init_std, (n_vis, hidden_dim))
    bh = np.zeros(hidden_dim)
    bv = np.zeros(n_vis)
    vW, vbh, vbv = np.zeros_like(W), np.zeros_like(bh), np.zeros_like(bv)

    def snapshot():
        return RbmParams(W.copy(), bh.copy(), bv.copy(), np.ones(n_vis), mean, std)

    if on_epoch is not None:
        on_epoch(0, rbm_reconstruction_error(snapshot(), data))

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            v0 = data[order[start:start + cfg.minibatch]]
            m = len(v0)
            ph0 = expit(v0 @ W + bh)
            phk, vk = ph0, v0
            for _ in range(cfg.cd_steps):
                h = (rng.random(phk.shape) < phk).astype(np.float64)
                vk = h @ W.T + bv
                phk = expit(vk @ W + bh)

            gW = (v0.T @ ph0 - vk.T @ phk) / m - cfg.weight_decay * W
            gbh = (ph0 - phk).mean(axis=0)
            gbv = (v0 - vk).mean(axis=0)

            vW = cfg.momentum * vW + cfg.learning_rate * gW
            vbh = cfg.momentum * vbh + cfg.learning_rate * gbh
            vbv = cfg.momentum * vbv + cfg.learning_rate * gbv
            W += vW
            bh += vbh
            bv += vbv
            _ensure_finite((W, bh, bv), "RBM training")
        if on_epoch is not None:
            on_epoch(epoch, rbm_reconstruction_error(snapshot(), data))

    return snapshot()


# ---------------------------------------------------------------------------
# Conditional RBM
# ---------------------------------------------------------------------------

def history_matrix(x, n: int, replicate: bool = True):
    """Flattened ``n``-frame history for every frame of ``x`` (oldest first).

    With ``replicate`` the history of early frames is padded with frame 0 and
    the result has one row per frame.  Without it only frames ``t >= n`` are
    returned, i.e. rows whose history lies entirely inside ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    t = x.shape[0]
    first = 0 if replicate else n
    idx = np.arange(first, t)[:, None] + np.arange(-n, 0)[None, :]
    return x[np.clip(idx, 0, None)].reshape(len(idx), -1)


def crbm_transform(p: CrbmParams, v_t, history):
    """Affine cRBM output for one frame given its ``N x visible`` history.

    History rows are ordered oldest to newest.
    """
    v_t = _check_dim(v_t, p.visible_dim, "crbm_transform")
    history = np.asarray(history, dtype=np.float64)
    if history.shape != (p.context_frames, p.visible_dim):
        raise DataError(f"crbm_transform: history must have shape "
                        f"{(p.context_frames, p.visible_dim)}, got {history.shape}")
    dynamic_bias = history.reshape(-1) @ p.A + p.b_hidden
    return v_t @ p.W + dynamic_bias


def crbm_transform_frames(p: CrbmParams, x):
    """Apply ``crbm_transform`` to every row of ``x`` with replicated history."""
    x = _check_dim(x, p.visible_dim, "crbm_transform_frames")
    return x @ p.W + history_matrix(x, p.context_frames) @ p.A + p.b_hidden


def _crbm_training_rows(clips, n):
    vis, hist = [], []
    for i, clip in enumerate(clips):
        clip = np.asarray(clip, dtype=np.float64)
        if clip.ndim != 2 or clip.shape[0] <= n:
            raise DataError(f"clip {i} has {clip.shape[0]} frames; need more than {n}")
        vis.append(clip[n:])
        hist.append(history_matrix(clip, n, replicate=False))
    return np.concatenate(vis), np.concatenate(hist)


def crbm_reconstruct(p: CrbmParams, v, hist):
    """Conditional mean-field reconstruction of frames ``v`` given flattened
    histories ``hist`` (one row per frame)."""
    ph = expit(v @ p.W + hist @ p.A + p.b_hidden)
    return ph @ p.W.T + p.b_visible_static + hist @ p.A_vis


def crbm_reconstruction_error(p: CrbmParams, clips) -> float:
    """Mean ``||v - v_hat||^2`` over all frames with a complete history."""
    v, hist = _crbm_training_rows(clips, p.context_frames)
    return float(np.mean(np.sum((v - crbm_reconstruct(p, v, hist)) ** 2, axis=1)))


def crbm_train(clips, context_frames: int, cfg: TrainConfig, hidden_dim: int = 300,
               mean=None, std=None, on_epoch=None) -> CrbmParams:
    """Train a conditional RBM with CD-k on a list of per-clip frame matrices.

    Histories are taken inside each clip only; the conditioning history is
    held fixed throughout the Gibbs chain.
    """
    if not clips:
        raise DataError("crbm_train needs at least one clip")
    n = int(context_frames)
    v_all, h_all = _crbm_training_rows(clips, n)
    rows, n_vis = v_all.shape
    rng = np.random.default_rng(cfg.rng_seed)

    W = rng.normal(0.0, cfg.init_std, (n_vis, hidden_dim))
    A = np.zeros((n_vis * n, hidden_dim))
    A_vis = np.zeros((n_vis * n, n_vis))
    bh = np.zeros(hidden_dim)
    bv = np.zeros(n_vis)
    params = [W, A, A_vis, bh, bv]
    vel = [np.zeros_like(a) for a in params]

    def snapshot():
        return CrbmParams(W.copy(), A.copy(), bh.copy(), bv.copy(), A_vis.copy(), n, mean, std)

    def error():
        return float(np.mean(np.sum((v_all - crbm_reconstruct(snapshot(), v_all, h_all)) ** 2,
                                    axis=1)))

    if on_epoch is not None:
        on_epoch(0, error())

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(rows)
        for start in range(0, rows, cfg.minibatch):
            sel = order[start:start + cfg.minibatch]
            v0, hist = v_all[sel], h_all[sel]
            m = len(v0)
            dyn_h = hist @ A + bh
            dyn_v = hist @ A_vis + bv
            ph0 = expit(v0 @ W + dyn_h)
            phk, vk = ph0, v0
            for _ in range(cfg.cd_steps):
                h = (rng.random(phk.shape) < phk).astype(np.float64)
                vk = h @ W.T + dyn_v
                phk = expit(vk @ W + dyn_h)

            dh = ph0 - phk
            dv = v0 - vk
            grads = [
                (v0.T @ ph0 - vk.T @ phk) / m - cfg.weight_decay * W,
                hist.T @ dh / m - cfg.weight_decay * A,
                hist.T @ dv / m - cfg.weight_decay * A_vis,
                dh.mean(axis=0),
                dv.mean(axis=0),
            ]
            for p_, v_, g in zip(params, vel, grads):
                v_ *= cfg.momentum
                v_ += cfg.learning_rate * g
                p_ += v_
            _ensure_finite(params, "cRBM training")
        if on_epoch is not None:
            on_epoch(epoch, error())

    return snapshot()


# ---------------------------------------------------------------------------
# Full affine chain
# ---------------------------------------------------------------------------

def transform_sequence(rbm: RbmParams, crbms, s, stack: int = 3):
    """Spectrogram -> stacked frames -> RBM -> one activation matrix per cRBM.

    Each stage standardizes its input with the statistics stored in its
    parameters.  Every output matrix has one row per input frame.
    """
    values = s.values if isinstance(s, Spectrogram) else np.asarray(s, dtype=np.float64)
    x = stack_frames(values, stack)
    if x.shape[1] != rbm.visible_dim:
        raise DataError(f"RBM expects {rbm.visible_dim} inputs, stacked frames have {x.shape[1]}")
    h = rbm_transform(rbm, rbm.standardize(x))
    out = []
    for c in crbms:
        if c.visible_dim != rbm.hidden_dim:
            raise DataError(f"cRBM visible_dim {c.visible_dim} != RBM hidden_dim {rbm.hidden_dim}")
        out.append(crbm_transform_frames(c, c.standardize(h)))
    return out


def with_standardization(p, mean, std):
    return replace(p, mean=np.asarray(mean, dtype=np.float64), std=np.asarray(std, dtype=np.float64))
