"""Audio decoding and the three signal representations used downstream.

* ``auditory_spectrogram`` -- 128-channel constant-Q filterbank, rectified,
  leaky-integrated over 10 ms and cube-root compressed, 10 ms frames.  Feeds
  the boundary detector.
* ``log_mel_energy`` -- 64 log mel-band energies, 40 ms Hamming / 20 ms hop.
  Feeds the frame classifier.
* ``short_term_energy`` -- 20 ms mean-square energy on a 10 ms hop.  Drives
  offset search.

All analysis runs at 16 kHz; inputs at other rates are resampled first.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal
from scipy.io import wavfile

from hybridsed.errors import DataError

ANALYSIS_RATE = 16_000

AUDITORY_CHANNELS = 128
AUDITORY_FMIN_HZ = 180.0
AUDITORY_CHANNELS_PER_OCTAVE = 24
# Quality factor of each bandpass section (about one sixth of an octave wide).
AUDITORY_Q = 8.6
FRAME_S = 0.010

MEL_BANDS = 64
MEL_WINDOW_S = 0.040
MEL_HOP_S = 0.020
MEL_NFFT = 1024
LOG_FLOOR = 1e-10

STE_WINDOW_S = 0.020
STE_HOP_S = 0.010

FEATURE_MAGIC = b"SEDF"
FEATURE_VERSION = 1


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise DataError(f"waveform must be 1-D, got shape {x.shape}")
        if int(self.sample_rate) <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise DataError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class Spectrogram:
    """Time x channel matrix on a fixed frame grid.

    ``is_log`` tells whether ``values`` are log energies (mel path) or
    non-negative magnitudes (auditory path).
    """

    values: np.ndarray
    frame_period_s: float
    channel_centers_hz: np.ndarray
    is_log: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DataError(f"spectrogram must be 2-D, got shape {v.shape}")
        c = np.asarray(self.channel_centers_hz, dtype=np.float64)
        if c.shape != (v.shape[1],):
            raise DataError("channel_centers_hz length does not match channel count")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "channel_centers_hz", c)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class EnergyCurve:
    """Short-term energy; value ``i`` covers ``[i*hop_s, i*hop_s + window_s)``."""

    values: np.ndarray
    window_s: float = STE_WINDOW_S
    hop_s: float = STE_HOP_S
    times_s: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "times_s", np.arange(len(v)) * self.hop_s)


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def load_audio(path) -> Waveform:
    """Read a PCM WAV file as a mono waveform scaled to [-1, 1].

    16-bit and 32-bit integer PCM are divided by their full-scale value
    (so 32767 maps to 32767/32768); float files are taken as-is and clipped.
    Stereo is downmixed by averaging channels.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise DataError(f"audio file not found: {path}") from None
    except (ValueError, OSError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None

    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise DataError(f"unsupported sample encoding {data.dtype} in {path}")

    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise DataError(f"zero-length audio: {path}")
    return Waveform(x, rate)


def write_wav(path, w: Waveform):
    """Write ``w`` as 16-bit PCM (inverse of the ``load_audio`` scaling)."""
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(Path(path), w.sample_rate, pcm)


def resample(w: Waveform, rate: int = ANALYSIS_RATE) -> Waveform:
    """Polyphase resampling with scipy's default linear-phase Kaiser FIR."""
    if w.sample_rate == rate:
        return w
    g = gcd(w.sample_rate, rate)
    y = signal.resample_poly(w.samples, rate // g, w.sample_rate // g)
    return Waveform(np.clip(y, -1.0, 1.0), rate)


# ---------------------------------------------------------------------------
# Auditory spectrogram
# ---------------------------------------------------------------------------

def auditory_center_frequencies(n_channels=AUDITORY_CHANNELS, fmin=AUDITORY_FMIN_HZ,
                                per_octave=AUDITORY_CHANNELS_PER_OCTAVE):
    return fmin * 2.0 ** (np.arange(n_channels) / per_octave)


def _bandpass_coefficients(fc, fs, q):
    # Second-order bandpass with 0 dB gain at the center frequency.
    w0 = 2.0 * np.pi * fc / fs
    alpha = np.sin(w0) / (2.0 * q)
    b = np.array([alpha, 0.0, -alpha])
    a = np.array([1.0 + alpha, -2.0 * np.cos(w0), 1.0 - alpha])
    return b / a[0], a / a[0]


def auditory_spectrogram(w: Waveform, n_channels: int = AUDITORY_CHANNELS,
                         fmin: float = AUDITORY_FMIN_HZ, q: float = AUDITORY_Q) -> Spectrogram:
    """Compute the 128-channel auditory-style spectrogram on a 10 ms grid.

    Each channel is bandpass filtered, half-wave rectified, smoothed by a
    one-pole leaky integrator with a 10 ms time constant, sampled at the end
    of every 10 ms frame and cube-root compressed.  Frame count is
    ``floor(duration / 10 ms)``.
    """
    w = resample(w)
    fs = w.sample_rate
    hop = int(round(FRAME_S * fs))
    n_frames = len(w) // hop
    if n_frames < 1:
        raise DataError(f"waveform shorter than one {FRAME_S * 1000:.0f} ms frame")

    centers = auditory_center_frequencies(n_channels, fmin)
    if centers[-1] >= fs / 2:
        raise DataError("filterbank extends beyond the Nyquist frequency")

    leak = np.exp(-1.0 / (FRAME_S * fs))
    sample_at = np.arange(1, n_frames + 1) * hop - 1
    out = np.empty((n_frames, n_channels))
    x = w.samples
    for ch, fc in enumerate(centers):
        b, a = _bandpass_coefficients(fc, fs, q)
        y = np.maximum(signal.lfilter(b, a, x), 0.0)
        y = signal.lfilter([1.0 - leak], [1.0, -leak], y)
        out[:, ch] = y[sample_at]
    return Spectrogram(np.cbrt(out), FRAME_S, centers, is_log=False)


# ---------------------------------------------------------------------------
# Log-mel energies
# ---------------------------------------------------------------------------

def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels=MEL_BANDS, n_fft=MEL_NFFT, fs=ANALYSIS_RATE, fmin=0.0, fmax=None):
    """Triangular filters equally spaced on the HTK mel scale.

    Returns ``(weights, centers_hz)`` with weights of shape
    ``(n_mels, n_fft // 2 + 1)``.
    """
    fmax = fs / 2 if fmax is None else fmax
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, 1.0 / fs)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (bins[None, :] - lower) / (center - lower)
    fall = (upper - bins[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rise, fall)), edges[1:-1]


def log_mel_energy(w: Waveform, n_mels: int = MEL_BANDS) -> Spectrogram:
    """64-band log mel energies over 40 ms Hamming windows with 50% overlap.

    Only windows lying fully inside the signal are produced, so a 2 s clip at
    16 kHz yields ``1 + (32000 - 640) // 320 = 99`` frames.
    """
    w = resample(w)
    fs = w.sample_rate
    win = int(round(MEL_WINDOW_S * fs))
    hop = int(round(MEL_HOP_S * fs))
    if len(w) < win:
        raise DataError(f"waveform shorter than the {MEL_WINDOW_S * 1000:.0f} ms analysis window")

    frames = sliding_window_view(w.samples, win)[::hop]
    window = signal.get_window("hamming", win, fftbins=True)
    power = np.abs(np.fft.rfft(frames * window, n=MEL_NFFT, axis=1)) ** 2
    fb, centers = mel_filterbank(n_mels, MEL_NFFT, fs)
    energy = power @ fb.T
    return Spectrogram(np.log(energy + LOG_FLOOR), MEL_HOP_S, centers, is_log=True)


# ---------------------------------------------------------------------------
# Short-term energy
# ---------------------------------------------------------------------------

def short_term_energy(w: Waveform) -> EnergyCurve:
    """Mean squared amplitude over 20 ms windows on a 10 ms hop."""
    w = resample(w)
    win = int(round(STE_WINDOW_S * w.sample_rate))
    hop = int(round(STE_HOP_S * w.sample_rate))
    if len(w) < win:
        raise DataError(f"waveform shorter than the {STE_WINDOW_S * 1000:.0f} ms STE window")
    frames = sliding_window_view(w.samples, win)[::hop]
    return EnergyCurve(np.mean(frames ** 2, axis=1), STE_WINDOW_S, STE_HOP_S)


# ---------------------------------------------------------------------------
# Frame stacking
# ---------------------------------------------------------------------------

def stack_frames(s, k: int) -> np.ndarray:
    """Concatenate each frame with its ``k - 1`` predecessors.

    Row ``t`` is ``[x[t-k+1], ..., x[t]]``; history before the first frame
    replicates frame 0.  ``s`` may be a Spectrogram or a 2-D array.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    x = np.asarray(s.values if isinstance(s, Spectrogram) else s, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"expected a 2-D frame matrix, got shape {x.shape}")
    n = x.shape[0]
    idx = np.arange(n)[:, None] + np.arange(-k + 1, 1)[None, :]
    return x[np.clip(idx, 0, None)].reshape(n, -1)


# ---------------------------------------------------------------------------
# Feature dump
# ---------------------------------------------------------------------------

_FEATURE_HEADER = struct.Struct("<4sIIId")


def write_feature_dump(path, s: Spectrogram):
    """Header ``SEDF``, u32 version, u32 frames, u32 channels, f64 frame period,
    then row-major little-endian float32 values."""
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, s.n_frames,
                                  s.n_channels, float(s.frame_period_s))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(s.values, dtype="<f4").tobytes())


def read_feature_dump(path) -> Spectrogram:
    """Inverse of ``write_feature_dump``.

    The dump carries no frequency axis, so channel centers are returned as
    channel indices.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise DataError(f"{path}: truncated feature header")
    magic, version, n_frames, n_channels, period = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise DataError(f"{path}: unsupported feature dump version {version}")
    body = raw[_FEATURE_HEADER.size:]
    if len(body) != 4 * n_frames * n_channels:
        raise DataError(f"{path}: payload size does not match header")
    values = np.frombuffer(body, dtype="<f4").reshape(n_frames, n_channels).astype(np.float64)
    return Spectrogram(values, period, np.arange(n_channels, dtype=np.float64),
                       is_log=False)
