"""Event boundaries from cRBM-array activations.

Chain: PCA (16 dims per cRBM) -> rectified first difference -> per-dimension
moving average whose length shrinks with the cRBM context -> sum over all
dimensions (the novelty curve) -> peak picking -> onset at the closest
preceding point at 25% of the peak -> energy-rise gate -> offset where
short-term energy stays low.

The chain from spectrogram to PCA scores is affine, so an event offset moves
every PCA score by roughly the negative of its onset step.  Rectification only
separates the two when components are oriented so that "up" means "more
energy"; ``orient_to_energy`` does that once after fitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import uniform_filter1d

from hybridsed.audio import EnergyCurve, FRAME_S, Spectrogram
from hybridsed.errors import DataError
from hybridsed.models import transform_sequence


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # n_components x input_dim, orthonormal rows
    explained_variance: np.ndarray
    rank_deficient: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "components", np.asarray(self.components, dtype=np.float64))
        object.__setattr__(self, "explained_variance",
                           np.asarray(self.explained_variance, dtype=np.float64))
        k, d = self.components.shape
        if self.mean.shape != (d,) or self.explained_variance.shape != (k,):
            raise DataError("PCA mean/variance shapes inconsistent with components")

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def input_dim(self) -> int:
        return self.components.shape[1]

    def project(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise DataError(f"PCA expects {self.input_dim} inputs, got {x.shape[-1]}")
        return (x - self.mean) @ self.components.T

    def reconstruct(self, y):
        return np.asarray(y) @ self.components + self.mean


@dataclass(frozen=True)
class NoveltyCurve:
    values: np.ndarray
    frame_period_s: float = FRAME_S

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, order=True)
class EventBoundary:
    onset_s: float
    offset_s: float

    def __post_init__(self):
        if not 0.0 <= self.onset_s < self.offset_s:
            raise DataError(f"invalid boundary ({self.onset_s}, {self.offset_s})")


@dataclass
class BoundaryConfig:
    """Tunables of the boundary detector.

    ``smoothing_const`` sets the moving-average length ``max(1, round(c / N))``
    frames for a cRBM with an ``N``-frame context.
    """

    stack: int = 3
    smoothing_const: float = 30.0
    threshold_k: float = 2.0
    min_peak_separation_s: float = 0.100
    onset_fraction: float = 0.25
    offset_refractory_s: float = 0.100
    offset_min_low_s: float = 0.060
    offset_theta_abs: float = 1e-6
    offset_theta_rel: float = 0.1
    offset_median_window_s: float = 0.500
    min_event_s: float = 0.060
    onset_gate_ratio: float = 5.0
    onset_gate_window_s: float = 0.200
    noise_floor_percentile: float = 10.0


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

def fit_pca(data, n_components: int = 16, rel_tol: float = 1e-10) -> PcaModel:
    """Top principal directions from the eigendecomposition of the covariance.

    Each component is flipped so that its largest-magnitude entry is positive.
    When fewer than ``n_components`` eigenvalues are non-negligible the
    trailing components are an arbitrary orthonormal completion and the model
    is flagged ``rank_deficient``.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("fit_pca needs a 2-D matrix")
    n, d = x.shape
    if n_components > d:
        raise DataError(f"n_components={n_components} exceeds input dimension {d}")
    if n < max(n_components, 2):
        raise DataError(f"fit_pca needs at least {max(n_components, 2)} rows, got {n}")

    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T.copy()

    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(n_components), pivot])
    comps *= np.where(signs == 0, 1.0, signs)[:, None]

    top = evals[0] if evals.size else 0.0
    deficient = bool(np.sum(evals > rel_tol * max(top, 1e-300)) < n_components)
    return PcaModel(mean, comps, evals, deficient)


def orient_to_energy(pca: PcaModel, activations, frame_energy) -> PcaModel:
    """Flip components whose scores correlate negatively with frame energy.

    ``activations`` are the rows the PCA was fitted on and ``frame_energy``
    one scalar per row (e.g. spectrogram frame sums).
    """
    scores = pca.project(activations)
    e = np.asarray(frame_energy, dtype=np.float64)
    if e.shape != (scores.shape[0],):
        raise DataError("need one energy value per activation row")
    cov = (scores - scores.mean(axis=0)).T @ (e - e.mean())
    signs = np.where(cov < 0, -1.0, 1.0)
    return replace(pca, components=pca.components * signs[:, None])


# ---------------------------------------------------------------------------
# Novelty curve
# ---------------------------------------------------------------------------

def smoothing_length(context_frames: int, const: float = 30.0) -> int:
    return max(1, int(math.floor(const / context_frames + 0.5)))


def novelty_curve(activations, pcas, contexts, smoothing_const: float = 30.0,
                  frame_period_s: float = FRAME_S) -> NoveltyCurve:
    """Sum of smoothed, half-wave rectified PCA derivatives over all cRBMs."""
    if not (len(activations) == len(pcas) == len(contexts)):
        raise DataError("need one PCA and one context length per activation matrix")
    if not activations:
        raise DataError("no activations given")
    n_frames = np.asarray(activations[0]).shape[0]
    total = np.zeros(n_frames)
    for act, pca, ctx in zip(activations, pcas, contexts):
        act = np.asarray(act, dtype=np.float64)
        if act.shape[0] != n_frames:
            raise DataError("activation matrices differ in frame count")
        y = pca.project(act)
        d = np.zeros_like(y)
        d[1:] = np.maximum(np.diff(y, axis=0), 0.0)
        w = smoothing_length(ctx, smoothing_const)
        if w > 1:
            d = uniform_filter1d(d, size=w, axis=0, mode="constant")
        total += d.sum(axis=1)
    if n_frames:
        total[0] = 0.0
    return NoveltyCurve(total, frame_period_s)


# ---------------------------------------------------------------------------
# Peaks and onsets
# ---------------------------------------------------------------------------

def _local_maxima(c):
    # Strict maxima; a flat top counts once, at its leftmost frame.
    peaks = []
    n = len(c)
    i = 1
    while i < n - 1:
        if c[i] > c[i - 1]:
            j = i
            while j + 1 < n and c[j + 1] == c[i]:
                j += 1
            if j + 1 < n and c[j + 1] < c[i]:
                peaks.append(i)
            i = j + 1
        else:
            i += 1
    return peaks


def pick_peaks(c: NoveltyCurve, threshold_k: float = 2.0,
               min_separation_s: float = 0.100) -> list:
    """Local maxima reaching ``mean + threshold_k * std`` of the curve.

    Of two peaks closer than ``min_separation_s`` only the larger survives
    (processed greedily from the tallest; equal heights favor the earlier).
    """
    if threshold_k < 0:
        raise ValueError("threshold_k must be non-negative")
    v = np.asarray(c.values, dtype=np.float64)
    if len(v) < 3 or math.isinf(threshold_k):
        return []
    threshold = v.mean() + threshold_k * v.std()
    candidates = [p for p in _local_maxima(v) if v[p] >= threshold]
    min_gap = min_separation_s / c.frame_period_s
    kept = []
    for p in sorted(candidates, key=lambda i: (-v[i], i)):
        if all(abs(p - q) >= min_gap - 1e-9 for q in kept):
            kept.append(p)
    return sorted(kept)


def locate_onsets(c: NoveltyCurve, peaks, fraction: float = 0.25) -> list:
    """Onset of each peak: the last frame at or before it whose value is at
    most ``fraction`` of the peak value (frame 0 if there is none)."""
    v = np.asarray(c.values, dtype=np.float64)
    frames = set()
    for p in peaks:
        below = np.nonzero(v[:p + 1] <= fraction * v[p])[0]
        frames.add(int(below[-1]) if below.size else 0)
    return [f * c.frame_period_s for f in sorted(frames)]


def gate_onsets(e: EnergyCurve, onsets, cfg: BoundaryConfig | None = None) -> list:
    """Keep onsets after which the signal clearly rises above the noise floor.

    The floor is a low percentile of the clip's short-term energy; an onset
    survives when the median energy over the following ``onset_gate_window_s``
    exceeds ``onset_gate_ratio`` times that floor.  A ratio of 0 disables the
    gate.
    """
    cfg = cfg or BoundaryConfig()
    if cfg.onset_gate_ratio <= 0 or len(e.values) == 0:
        return list(onsets)
    floor = float(np.percentile(e.values, cfg.noise_floor_percentile))
    kept = []
    for onset in onsets:
        ahead = e.values[(e.times_s >= onset) & (e.times_s < onset + cfg.onset_gate_window_s)]
        if ahead.size and np.median(ahead) > cfg.onset_gate_ratio * floor:
            kept.append(onset)
    return kept


# ---------------------------------------------------------------------------
# Offsets
# ---------------------------------------------------------------------------

def detect_offsets(e: EnergyCurve, onsets, clip_end_s: float,
                   cfg: BoundaryConfig | None = None) -> list:
    """Pair each onset with the first sustained low-energy point after it.

    The threshold is ``max(theta_abs, theta_rel * median STE)`` over the
    window following the onset.  Offsets are capped by the next onset and the
    clip end; events shorter than ``min_event_s`` are dropped.
    """
    cfg = cfg or BoundaryConfig()
    onsets = [float(o) for o in onsets]
    if any(b < a for a, b in zip(onsets, onsets[1:])):
        raise DataError("onsets must be sorted ascending")
    values = e.values
    times = e.times_s
    run = max(1, int(round(cfg.offset_min_low_s / e.hop_s)))
    out = []
    for k, onset in enumerate(onsets):
        ahead = values[(times >= onset) & (times < onset + cfg.offset_median_window_s)]
        theta = cfg.offset_theta_abs
        if ahead.size:
            theta = max(theta, cfg.offset_theta_rel * float(np.median(ahead)))

        offset = clip_end_s
        low = values < theta
        start = int(np.searchsorted(times, onset + cfg.offset_refractory_s, side="right"))
        count = 0
        for i in range(start, len(values)):
            count = count + 1 if low[i] else 0
            if count >= run:
                offset = float(times[i - run + 1])
                break
        if k + 1 < len(onsets):
            offset = min(offset, onsets[k + 1])
        offset = min(offset, clip_end_s)
        onset_c = max(onset, 0.0)
        if offset - onset_c >= cfg.min_event_s - 1e-9 and offset > onset_c:
            out.append(EventBoundary(onset_c, offset))
    return out


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

def detect_boundaries(s: Spectrogram, e: EnergyCurve, rbm, crbms, pcas,
                      cfg: BoundaryConfig | None = None, clip_end_s: float | None = None,
                      return_curve: bool = False):
    """Full boundary chain for one clip; boundaries are sorted by onset."""
    cfg = cfg or BoundaryConfig()
    if clip_end_s is None:
        clip_end_s = s.n_frames * s.frame_period_s
    contexts = [c.context_frames for c in crbms]
    acts = transform_sequence(rbm, crbms, s, stack=cfg.stack)
    curve = novelty_curve(acts, pcas, contexts, cfg.smoothing_const, s.frame_period_s)
    peaks = pick_peaks(curve, cfg.threshold_k, cfg.min_peak_separation_s)
    onsets = gate_onsets(e, locate_onsets(curve, peaks, cfg.onset_fraction), cfg)
    bounds = detect_offsets(e, onsets, clip_end_s, cfg)
    return (bounds, curve) if return_curve else bounds
