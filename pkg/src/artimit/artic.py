"""EMA ingestion, downsampling to the 50 Hz acoustic frame rate, and the
guided PCA cascade between raw articulator coordinates and the six
articulatory parameters (JH, TB, TD, TT, LP, LH).

Each guided PCA stage extracts one parameter from a designated channel
subset, regresses every channel on it, and subtracts the predicted
contribution so later stages see residual movements orthogonal to all
previously extracted parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import firwin

from .graph import DimensionError

PARAM_NAMES = ("JH", "TB", "TD", "TT", "LP", "LH")
TARGET_RATE = 50.0
LOWPASS_CUTOFF_HZ = 22.0
LOWPASS_ORDER = 64  # symmetric FIR, 65 taps


class UnsupportedRateError(ValueError):
    pass


class DegenerateStageError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass
class EmaRecording:
    """Named coil coordinate channels, data as N x C."""
    channel_names: list[str]
    data: np.ndarray
    rate: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != len(self.channel_names):
            raise DimensionError("EMA data must be N x len(channel_names)")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise SchemaError("duplicate EMA channel names")

    def column(self, name):
        try:
            return self.data[:, self.channel_names.index(name)]
        except ValueError:
            raise SchemaError(f"missing EMA channel {name!r}") from None


@dataclass
class ArticulatoryTrajectory:
    """T x 6 standardized parameter scores at 50 Hz, columns in PARAM_NAMES
    order."""
    frames: np.ndarray
    frame_rate: float = TARGET_RATE

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != 6:
            raise DimensionError("trajectory must be T x 6")


@dataclass
class GpcaStage:
    """(parameter name, source channels, extraction rule).

    rule: "pc1" (first principal component of the subset residuals),
    "coord" (single named coordinate; the subset must have one channel), or
    "diff" (difference of exactly two channels, first minus second).
    """
    param: str
    channels: list[str]
    rule: str = "pc1"


@dataclass
class GuidedPcaSpec:
    stages: list[GpcaStage]

    def __post_init__(self):
        if tuple(s.param for s in self.stages) != PARAM_NAMES:
            raise ValueError(f"stages must cover {PARAM_NAMES} in order")
        for s in self.stages:
            if s.rule not in ("pc1", "coord", "diff"):
                raise ValueError(f"unknown extraction rule {s.rule!r}")
            if s.rule == "coord" and len(s.channels) != 1:
                raise ValueError("coord rule requires exactly one channel")
            if s.rule == "diff" and len(s.channels) != 2:
                raise ValueError("diff rule requires exactly two channels")


def default_spec() -> GuidedPcaSpec:
    """Stand-in coil-to-parameter assignment for a typical midsagittal setup."""
    return GuidedPcaSpec([
        GpcaStage("JH", ["lower_incisor_y"], "coord"),
        GpcaStage("TB", ["tongue_mid_x", "tongue_mid_y"], "pc1"),
        GpcaStage("TD", ["tongue_back_x", "tongue_back_y"], "pc1"),
        GpcaStage("TT", ["tongue_tip_x", "tongue_tip_y"], "pc1"),
        GpcaStage("LP", ["upper_lip_x", "lower_lip_x"], "pc1"),
        GpcaStage("LH", ["upper_lip_y", "lower_lip_y"], "diff"),
    ])


@dataclass
class GuidedPcaModel:
    channel_names: list[str]
    channel_means: np.ndarray            # C
    extraction: np.ndarray               # 6 x C, zero outside each stage subset
    regression: np.ndarray               # 6 x C, channel loadings per parameter
    param_mean: np.ndarray               # 6
    param_std: np.ndarray                # 6

    def to_tensors(self):
        return {
            "channel_means": self.channel_means.reshape(1, -1),
            "extraction": self.extraction,
            "regression": self.regression,
            "param_mean": self.param_mean.reshape(1, -1),
            "param_std": self.param_std.reshape(1, -1),
        }

    @classmethod
    def from_tensors(cls, channel_names, tensors):
        return cls(
            channel_names=list(channel_names),
            channel_means=np.asarray(tensors["channel_means"]).reshape(-1),
            extraction=np.asarray(tensors["extraction"]),
            regression=np.asarray(tensors["regression"]),
            param_mean=np.asarray(tensors["param_mean"]).reshape(-1),
            param_std=np.asarray(tensors["param_std"]).reshape(-1),
        )


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def lowpass_taps(rate):
    return firwin(LOWPASS_ORDER + 1, LOWPASS_CUTOFF_HZ, fs=rate)


def resample_to_50hz(e: EmaRecording) -> EmaRecording:
    """Zero-phase low-pass (22 Hz, 65-tap symmetric FIR) then integer
    decimation."""
    if e.rate == TARGET_RATE:
        return e
    factor = e.rate / TARGET_RATE
    if abs(factor - round(factor)) > 1e-9:
        raise UnsupportedRateError(
            f"rate {e.rate} is not an integer multiple of {TARGET_RATE}")
    factor = int(round(factor))
    taps = lowpass_taps(e.rate)
    half = LOWPASS_ORDER // 2
    out = np.empty_like(e.data)
    for c in range(e.data.shape[1]):
        padded = np.pad(e.data[:, c], half, mode="edge")
        out[:, c] = np.convolve(padded, taps, mode="valid")
    return EmaRecording(list(e.channel_names), out[::factor], TARGET_RATE)


# ---------------------------------------------------------------------------
# Guided PCA
# ---------------------------------------------------------------------------

def _extraction_vector(residual, cols, rule, channel_names, param):
    """Unit extraction vector over the subset columns of the residual data."""
    sub = residual[:, cols]
    if np.max(sub.var(axis=0)) < 1e-12:
        raise DegenerateStageError(
            f"stage {param}: zero variance in subset {[channel_names[c] for c in cols]}")
    if rule == "coord":
        v = np.array([1.0])
    elif rule == "diff":
        v = np.array([1.0, -1.0]) / np.sqrt(2.0)
    else:  # pc1
        cov = np.cov(sub, rowvar=False)
        cov = np.atleast_2d(cov)
        vals, vecs = np.linalg.eigh(cov)
        v = vecs[:, np.argmax(vals)]
        # Deterministic sign: positive loading on the first subset channel
        # (ties broken by the next channel in order).
        for k in range(len(v)):
            if abs(v[k]) > 1e-12:
                if v[k] < 0:
                    v = -v
                break
    full = np.zeros(residual.shape[1])
    full[cols] = v
    return full


def gpca_fit(data: EmaRecording, spec: GuidedPcaSpec) -> GuidedPcaModel:
    """Sequential extraction / regression / subtraction over the six stages."""
    if data.rate != TARGET_RATE:
        raise UnsupportedRateError("gpca_fit expects 50 Hz data")
    X = data.data
    n, C = X.shape
    if n < 10 * C:
        raise ValueError(f"need at least {10 * C} samples to fit, got {n}")
    means = X.mean(axis=0)
    residual = X - means
    extraction = np.zeros((6, C))
    regression = np.zeros((6, C))
    raw_params = np.zeros((n, 6))
    for k, stage in enumerate(spec.stages):
        cols = [data.channel_names.index(c) for c in stage.channels]
        v = _extraction_vector(residual, cols, stage.rule, data.channel_names,
                               stage.param)
        p = residual @ v
        var = float(p @ p) / n
        if var < 1e-12:
            raise DegenerateStageError(f"stage {stage.param}: extracted "
                                       "parameter has zero variance")
        beta = (residual.T @ p) / float(p @ p)  # per-channel regression slope
        residual = residual - np.outer(p, beta)
        extraction[k] = v
        regression[k] = beta
        raw_params[:, k] = p
    p_mean = raw_params.mean(axis=0)
    p_std = raw_params.std(axis=0)
    return GuidedPcaModel(list(data.channel_names), means, extraction,
                          regression, p_mean, p_std)


def gpca_encode(e: EmaRecording, model: GuidedPcaModel) -> ArticulatoryTrajectory:
    """Apply the stored cascade; outputs standardized 6-parameter frames."""
    if e.channel_names != model.channel_names:
        missing = set(model.channel_names) - set(e.channel_names)
        if missing:
            raise SchemaError(f"missing channel(s) {sorted(missing)}")
        # Same channels, different order: reorder to the model layout.
        order = [e.channel_names.index(c) for c in model.channel_names]
        data = e.data[:, order]
    else:
        data = e.data
    residual = data - model.channel_means
    params = np.zeros((data.shape[0], 6))
    for k in range(6):
        p = residual @ model.extraction[k]
        residual = residual - np.outer(p, model.regression[k])
        params[:, k] = p
    return ArticulatoryTrajectory((params - model.param_mean) / model.param_std)


def gpca_decode(a: ArticulatoryTrajectory, model: GuidedPcaModel,
                n_stages=6) -> EmaRecording:
    """Invert the cascade: de-standardize, add back regressed contributions
    in reverse stage order, restore channel means."""
    raw = a.frames * model.param_std + model.param_mean
    recon = np.zeros((a.frames.shape[0], len(model.channel_names)))
    for k in range(n_stages - 1, -1, -1):
        recon = recon + np.outer(raw[:, k], model.regression[k])
    recon = recon + model.channel_means
    return EmaRecording(list(model.channel_names), recon, TARGET_RATE)
