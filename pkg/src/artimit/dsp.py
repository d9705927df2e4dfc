"""Deterministic speech front end at 16 kHz: STFT, mel filterbank, MFCCs
with deltas, and source (pitch period / harmonicity) extraction.

Framing is fixed at 640-sample Hann windows with a 320-sample hop (20 ms
frames, 50 Hz frame rate). The mel axis has 80 triangular filters with
centers equally spaced on the HTK mel scale between 0 and 8 kHz. The
mel-to-MFCC stage also exists as a graph-registered differentiable path so
the imitation loss can backpropagate into synthesized mel frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import graph, kernels
from .graph import DimensionError, Tensor

SAMPLE_RATE = 16000
FRAME_LEN = 640
HOP = 320
N_FFT_BINS = FRAME_LEN // 2 + 1  # 321
N_MELS = 80
FMIN = 0.0
FMAX = 8000.0
FRAME_RATE = SAMPLE_RATE / HOP  # 50 Hz
N_CEPSTRA = 13
LOG_FLOOR = 1e-10
DELTA_WINDOW = 2

PP_MIN = 80
PP_MAX = 320
VOICING_THRESHOLD = 0.3
ENERGY_FLOOR = 1e-6


class InputTooShortError(ValueError):
    """Waveform shorter than one analysis frame."""


class NormalizationError(ValueError):
    """Degenerate (zero standard deviation) z-scoring statistics."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise ValueError("empty waveform")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample rate must be {SAMPLE_RATE} Hz, "
                             f"got {self.sample_rate}")


@dataclass
class MelSpectrogram:
    """Linear mel-filterbank energies, T x 80, at 50 Hz."""
    frames: np.ndarray
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_MELS:
            raise DimensionError(f"mel frames must be T x {N_MELS}")


@dataclass
class FeatureSequence:
    frames: np.ndarray
    frame_rate: float
    kind: str  # mfcc39 | logmel80 | external

    _DIMS = {"mfcc39": 39, "logmel80": 80}

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise DimensionError("feature frames must be 2-D")
        want = self._DIMS.get(self.kind)
        if want is not None and self.frames.shape[1] != want:
            raise DimensionError(
                f"kind {self.kind} requires dim {want}, got {self.frames.shape[1]}")

    @property
    def dim(self):
        return self.frames.shape[1]


@dataclass
class SourceTrack:
    """Column 0: pitch period in samples (0 when unvoiced); column 1:
    harmonicity in [0, 1]."""
    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != 2:
            raise DimensionError("source track must be T x 2")


@dataclass
class MfccStats:
    mean: np.ndarray
    std: np.ndarray


# ---------------------------------------------------------------------------
# STFT and mel
# ---------------------------------------------------------------------------

def _hann(n=FRAME_LEN):
    # Periodic Hann window.
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples):
    if n_samples < FRAME_LEN:
        raise InputTooShortError(
            f"need at least {FRAME_LEN} samples, got {n_samples}")
    return 1 + (n_samples - FRAME_LEN) // HOP


def stft_magnitude(w: Waveform) -> np.ndarray:
    """Magnitude spectrogram, T x 321, trailing partial frame dropped."""
    x = w.samples
    T = frame_count(len(x))
    idx = np.arange(FRAME_LEN)[None, :] + HOP * np.arange(T)[:, None]
    frames = x[idx] * _hann()
    return np.abs(np.fft.rfft(frames, n=FRAME_LEN, axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank():
    """80 x 321 triangular filters, HTK mel scale, 0..8000 Hz."""
    edges_mel = np.linspace(hz_to_mel(FMIN), hz_to_mel(FMAX), N_MELS + 2)
    edges_hz = mel_to_hz(edges_mel)
    bin_freqs = np.arange(N_FFT_BINS) * SAMPLE_RATE / FRAME_LEN
    fb = np.zeros((N_MELS, N_FFT_BINS))
    for m in range(N_MELS):
        lo, ctr, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (bin_freqs - lo) / (ctr - lo)
        down = (hi - bin_freqs) / (hi - ctr)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


_FILTERBANK = mel_filterbank()


def mel_center_freqs():
    """Center frequency (Hz) of each of the 80 filters."""
    edges_mel = np.linspace(hz_to_mel(FMIN), hz_to_mel(FMAX), N_MELS + 2)
    return mel_to_hz(edges_mel[1:-1])


def freq_to_bin_coord(f):
    """Continuous mel-bin coordinate of a frequency: bin m has coordinate m."""
    spacing = hz_to_mel(FMAX) / (N_MELS + 1)
    return hz_to_mel(f) / spacing - 1.0


def mel_project(spec: np.ndarray) -> MelSpectrogram:
    """Filter-weighted sums of squared magnitudes."""
    spec = np.asarray(spec, dtype=np.float64)
    if spec.ndim != 2 or spec.shape[1] != N_FFT_BINS:
        raise DimensionError(f"spectrogram must be T x {N_FFT_BINS}")
    return MelSpectrogram((spec ** 2) @ _FILTERBANK.T)


def log_mel(mel: MelSpectrogram) -> FeatureSequence:
    return FeatureSequence(np.log(mel.frames + LOG_FLOOR), FRAME_RATE, "logmel80")


# ---------------------------------------------------------------------------
# MFCC
# ---------------------------------------------------------------------------

def dct_matrix(n_out=N_CEPSTRA, n_in=N_MELS):
    """Orthonormal DCT-II, n_out x n_in."""
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    mat = np.cos(np.pi * k * (2 * n + 1) / (2.0 * n_in))
    mat *= np.sqrt(2.0 / n_in)
    mat[0] *= np.sqrt(0.5)
    return mat


_DCT = dct_matrix()


def delta_matrix(T, window=DELTA_WINDOW):
    """T x T matrix computing regression deltas with edge replication."""
    denom = 2.0 * sum(n * n for n in range(1, window + 1))
    D = np.zeros((T, T))
    for t in range(T):
        for n in range(1, window + 1):
            D[t, min(t + n, T - 1)] += n / denom
            D[t, max(t - n, 0)] -= n / denom
    return D


def delta_features(x: np.ndarray, window=DELTA_WINDOW) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return delta_matrix(x.shape[0], window) @ x


def compute_mfcc_stats(cepstra: np.ndarray) -> MfccStats:
    mean = cepstra.mean(axis=0)
    std = cepstra.std(axis=0)
    bad = np.flatnonzero(std < 1e-12)
    if bad.size:
        raise NormalizationError(
            f"zero standard deviation for coefficient(s) {bad.tolist()}")
    return MfccStats(mean, std)


def _cepstra_from_logmel(logmel):
    return logmel @ _DCT.T


def mfcc39(w: Waveform, stats: MfccStats | None = None):
    """39-dim MFCC features (13 z-scored cepstra + deltas + delta-deltas).

    Returns (FeatureSequence, MfccStats); stats are computed from this
    waveform when not supplied.
    """
    mel = mel_project(stft_magnitude(w))
    logm = np.log(mel.frames + LOG_FLOOR)
    cep = _cepstra_from_logmel(logm)
    if stats is None:
        stats = compute_mfcc_stats(cep)
    if np.any(stats.std < 1e-12):
        bad = np.flatnonzero(stats.std < 1e-12)
        raise NormalizationError(
            f"zero standard deviation for coefficient(s) {bad.tolist()}")
    z = (cep - stats.mean) / stats.std
    d = delta_features(z)
    dd = delta_features(d)
    feats = np.concatenate([z, d, dd], axis=1)
    return FeatureSequence(feats, FRAME_RATE, "mfcc39"), stats


def mfcc_from_logmel_t(logmel: Tensor, stats: MfccStats) -> Tensor:
    """Differentiable log-mel -> 39-dim MFCC path (graph-registered)."""
    T = logmel.value.shape[0]
    cep = logmel @ graph.constant(_DCT.T)
    z = (cep - stats.mean) * (1.0 / stats.std)
    D = graph.constant(delta_matrix(T))
    d = D @ z
    dd = D @ d
    return graph.concat_cols([z, d, dd])


def mfcc_from_mel(m: MelSpectrogram | Tensor, stats: MfccStats):
    """Same math as mfcc39 from the mel stage onward; differentiable when
    given a Tensor of linear mel energies."""
    if isinstance(m, Tensor):
        logm = (m + LOG_FLOOR).log()
        return mfcc_from_logmel_t(logm, stats)
    logm = graph.constant(np.log(m.frames + LOG_FLOOR))
    out = mfcc_from_logmel_t(logm, stats)
    return FeatureSequence(out.value, FRAME_RATE, "mfcc39")


# ---------------------------------------------------------------------------
# Source extraction
# ---------------------------------------------------------------------------

def extract_source(w: Waveform) -> SourceTrack:
    """Per-frame pitch period and harmonicity via normalized autocorrelation.

    Lags searched: 80..320 samples (50-200 Hz). A frame is unvoiced (0, 0)
    when the peak is below 0.3 or the frame energy below 1e-6. Among lags
    within 2% of the peak value the shortest wins, which suppresses
    octave-doubling on strongly periodic frames.
    """
    x = w.samples
    T = frame_count(len(x))
    out = np.zeros((T, 2))
    for t in range(T):
        frame = np.ascontiguousarray(x[t * HOP: t * HOP + FRAME_LEN])
        energy = float(np.mean(frame * frame))
        if energy < ENERGY_FLOOR:
            continue
        curve = np.asarray(kernels.autocorr_curve(frame, PP_MIN, PP_MAX))
        peak = float(curve.max())
        if peak < VOICING_THRESHOLD:
            continue
        # Octave guard: among local maxima within 2% of the global peak,
        # take the smallest lag (subharmonics repeat the peak at 2x, 3x...).
        interior = np.zeros(len(curve), dtype=bool)
        interior[1:-1] = (curve[1:-1] >= curve[:-2]) & (curve[1:-1] >= curve[2:])
        near = interior & (curve >= peak - 0.02 * abs(peak))
        lag = PP_MIN + (int(np.argmax(near)) if near.any()
                        else int(np.argmax(curve)))
        out[t, 0] = lag
        out[t, 1] = min(max(float(curve[lag - PP_MIN]), 0.0), 1.0)
    return SourceTrack(out)


# ---------------------------------------------------------------------------
# Convenience pipelines
# ---------------------------------------------------------------------------

def logmel80(w: Waveform) -> FeatureSequence:
    return log_mel(mel_project(stft_magnitude(w)))
