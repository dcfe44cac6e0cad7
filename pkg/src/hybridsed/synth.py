"""Seeded synthetic scenes: non-overlapping events over a pink-noise bed.

Each class is a fixed timbre drawn from three families -- harmonic tone
complexes, band-limited noise bursts and amplitude-modulated noise -- so that
boundaries and labels are both recoverable from the audio alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from hybridsed.audio import ANALYSIS_RATE, Waveform, write_wav
from hybridsed.errors import DataError
from hybridsed.events import LabeledEvent, write_event_tsv

_FAMILIES = ("tone", "noise_burst", "am_noise")


def default_class_names(n):
    names = []
    for i in range(n):
        base = _FAMILIES[i % 3]
        names.append(base if i < 3 else f"{base}_{i // 3}")
    return names


@dataclass
class SynthSpec:
    n_clips: int = 20
    duration_s: float = 10.0
    n_classes: int = 3
    events_per_clip: int = 3
    min_event_s: float = 0.3
    max_event_s: float = 1.5
    min_gap_s: float = 0.5
    snr_db: float = 20.0
    event_rms: float = 0.1
    sample_rate: int = ANALYSIS_RATE
    seed: int = 7
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            self.class_names = default_class_names(self.n_classes)
        self.n_classes = len(self.class_names)
        if len(set(self.class_names)) != self.n_classes:
            raise DataError("class names must be unique")
        if self.n_clips < 0 or self.events_per_clip < 0 or self.n_classes < 1:
            raise DataError("n_clips and events_per_clip must be >= 0, n_classes >= 1")
        if not 0 < self.min_event_s <= self.max_event_s:
            raise DataError("need 0 < min_event_s <= max_event_s")
        if self.min_gap_s < 0 or self.duration_s <= 0:
            raise DataError("min_gap_s must be >= 0 and duration_s > 0")
        worst = self.events_per_clip * self.max_event_s + (self.events_per_clip + 1) * self.min_gap_s
        if worst > self.duration_s:
            raise DataError(f"{self.events_per_clip} events of up to {self.max_event_s} s with "
                            f"{self.min_gap_s} s gaps do not fit in {self.duration_s} s")


def pink_noise(n, rng):
    """Unit-RMS noise with a 1/f power spectrum."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n)
    return x / np.sqrt(np.mean(x ** 2))


def _envelope(n, fs, attack_s=0.010, release_s=0.020):
    env = np.ones(n)
    a = min(n // 2, int(attack_s * fs))
    r = min(n // 2, int(release_s * fs))
    if a:
        env[:a] = np.linspace(0.0, 1.0, a, endpoint=False)
    if r:
        env[n - r:] = np.linspace(1.0, 0.0, r)
    return env


def class_timbre(index, n, fs, rng):
    """Raw (unnormalized) excitation for class ``index``."""
    family, variant = index % 3, index // 3
    t = np.arange(n) / fs
    if family == 0:
        f0 = 330.0 * 2.0 ** (variant * 7 / 12) * (1.0 + 0.02 * rng.uniform(-1, 1))
        x = sum(np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h
                for h in range(1, 6) if h * f0 < fs / 2)
    elif family == 1:
        lo = 2500.0 * 2.0 ** (-variant * 0.5)
        sos = signal.butter(4, [lo, min(2.0 * lo, 0.45 * fs)], btype="bandpass", fs=fs, output="sos")
        x = signal.sosfilt(sos, rng.standard_normal(n))
    else:
        sos = signal.butter(4, [300.0, 1200.0], btype="bandpass", fs=fs, output="sos")
        rate = 50.0 + 10.0 * variant
        mod = 1.0 + 0.3 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
        x = signal.sosfilt(sos, rng.standard_normal(n)) * mod
    return np.asarray(x, dtype=np.float64)


def _place_events(spec, rng):
    k = spec.events_per_clip
    durs = np.round(rng.uniform(spec.min_event_s, spec.max_event_s, k), 3)
    free = spec.duration_s - durs.sum() - (k + 1) * spec.min_gap_s
    gaps = spec.min_gap_s + free * rng.dirichlet(np.ones(k + 1))
    onsets = []
    t = 0.0
    for i in range(k):
        t += gaps[i]
        onsets.append(round(t, 3))
        t = onsets[-1] + durs[i]
    return [(o, round(o + d, 3)) for o, d in zip(onsets, durs)]


def synth_clip(spec: SynthSpec, rng):
    """One scene: returns ``(Waveform, [LabeledEvent, ...])``."""
    fs = spec.sample_rate
    n = int(round(spec.duration_s * fs))
    x = np.zeros(n)
    if math.isfinite(spec.snr_db):
        x += pink_noise(n, rng) * spec.event_rms * 10.0 ** (-spec.snr_db / 20.0)
    events = []
    for onset, offset in _place_events(spec, rng):
        cls = int(rng.integers(spec.n_classes))
        i0, i1 = int(round(onset * fs)), min(n, int(round(offset * fs)))
        ev = class_timbre(cls, i1 - i0, fs, rng)
        ev *= spec.event_rms / np.sqrt(np.mean(ev ** 2))
        x[i0:i1] += ev * _envelope(i1 - i0, fs)
        events.append(LabeledEvent(onset, offset, spec.class_names[cls]))
    peak = np.max(np.abs(x)) if n else 0.0
    if peak > 0.99:
        x *= 0.99 / peak
    return Waveform(x, fs), events


def generate_scenes(spec: SynthSpec):
    """Yield ``(filename, Waveform, events)`` for every clip of ``spec``."""
    rng = np.random.default_rng(spec.seed)
    width = max(3, len(str(max(spec.n_clips - 1, 0))))
    for i in range(spec.n_clips):
        w, events = synth_clip(spec, rng)
        yield f"scene_{i:0{width}d}.wav", w, events


def write_scene_set(spec: SynthSpec, out_dir):
    """Write wavs plus ``strong.tsv`` and ``weak.tsv``; returns the strong events."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    strong = {}
    weak_lines = ["filename\tevent_labels"]
    for name, w, events in generate_scenes(spec):
        write_wav(out_dir / name, w)
        strong[name] = events
        labels = sorted({ev.class_name for ev in events})
        weak_lines.append(f"{name}\t{','.join(labels)}")
    write_event_tsv(out_dir / "strong.tsv", strong, header=True)
    (out_dir / "weak.tsv").write_text("\n".join(weak_lines) + "\n")
    return strong
