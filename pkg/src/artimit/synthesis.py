"""Articulatory-to-acoustic forward models and the synthetic VCV corpus.

Two synthesizers share one interface (frames of 6 articulatory + 2 source
parameters in, log-mel frames out):

* an analytic vocal tract where each articulatory parameter controls a
  distinct acoustic degree of freedom (F1..F4 positions, peak width,
  amplitude), used both as the frozen forward model and as the ground-truth
  oracle for the synthetic corpus; and
* a trainable 4 x 512 feedforward net regressed onto (parameters, log-mel)
  pairs, kept frozen during imitation training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import dsp, graph
from .artic import ArticulatoryTrajectory
from .dsp import MelSpectrogram, N_MELS, SourceTrack
from .graph import Adam, ParameterSet, Tensor, dense_forward

FORMANT_GAINS = (1.0, 0.7, 0.5, 0.3)
MEL_FLOOR = 1e-10


class DivergenceError(RuntimeError):
    pass


@dataclass
class AnalyticTractConfig:
    """Formant map: F1 = scale*(500 + 200*JH), F2 = scale*(1500 + 350*TD),
    F3 = scale*(2500 + 250*TT), F4 = scale*(3500 + 250*LP), clamped to
    [100, 7500] Hz; TB widens the peaks, LH gates the amplitude."""
    f_base: tuple = (500.0, 1500.0, 2500.0, 3500.0)
    f_gain: tuple = (200.0, 350.0, 250.0, 250.0)
    f_lo: float = 100.0
    f_hi: float = 7500.0
    width_base: float = 3.0
    width_mod: float = 0.3
    speaker_scale: float = 1.0

    def __post_init__(self):
        if not (0.8 <= self.speaker_scale <= 1.25):
            raise ValueError("speaker_scale must lie in [0.8, 1.25]")


def _check_source(s):
    s = np.asarray(s, dtype=np.float64)
    pp, pc = s[..., 0], s[..., 1]
    ok_pp = (pp == 0) | ((pp >= dsp.PP_MIN) & (pp <= dsp.PP_MAX))
    if not np.all(ok_pp):
        raise ValueError("pitch period must be 0 or in [80, 320] samples")
    if np.any((pc < 0) | (pc > 1)):
        raise ValueError("pitch coefficient must lie in [0, 1]")
    return s


def _ripple(s):
    """Harmonic ripple over mel bins, T x 80; 1 where unvoiced."""
    s = np.atleast_2d(s)
    m = np.arange(N_MELS)[None, :]
    pp = s[:, :1]
    pc = s[:, 1:2]
    r = 1.0 + 0.3 * pc * np.cos(2.0 * np.pi * m * pp / 320.0)
    return np.where(pp > 0, r, 1.0)


def tract_forward_np(a, s, cfg: AnalyticTractConfig) -> np.ndarray:
    """Vectorized numpy tract: (T x 6, T x 2) -> T x 80 log-mel."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    s = np.atleast_2d(_check_source(s))
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite articulatory input")
    jh, tb, td, tt, lp, lh = (a[:, k:k + 1] for k in range(6))
    drivers = (jh, td, tt, lp)
    mvec = np.arange(N_MELS)[None, :]
    sigma = cfg.width_base * (1.0 + cfg.width_mod * np.tanh(tb))
    env = np.zeros((a.shape[0], N_MELS))
    for k in range(4):
        f = cfg.speaker_scale * (cfg.f_base[k] + cfg.f_gain[k] * drivers[k])
        f = np.clip(f, cfg.f_lo, cfg.f_hi)
        c = dsp.freq_to_bin_coord(f)
        env += FORMANT_GAINS[k] * np.exp(-((c - mvec) ** 2) / (2.0 * sigma ** 2))
    amp = 1.0 / (1.0 + np.exp(-2.0 * lh))
    return np.log(MEL_FLOOR + amp * env * _ripple(s))


def tract_forward_t(a: Tensor, s, cfg: AnalyticTractConfig) -> Tensor:
    """Graph-registered tract forward; gradients flow into `a` only."""
    s = np.atleast_2d(_check_source(s))
    mvec = np.arange(N_MELS)[None, :].astype(np.float64)
    mel_spacing = dsp.hz_to_mel(dsp.FMAX) / (N_MELS + 1)
    cols = [a[:, k:k + 1] for k in range(6)]
    jh, tb, td, tt, lp, lh = cols
    drivers = (jh, td, tt, lp)
    sigma = cfg.width_base * (tb.tanh() * cfg.width_mod + 1.0)
    inv_two_sigma2 = 1.0 / (sigma.square() * 2.0)
    env = None
    for k in range(4):
        f = (drivers[k] * cfg.f_gain[k] + cfg.f_base[k]) * cfg.speaker_scale
        f = f.clamp(cfg.f_lo, cfg.f_hi)
        # mel-bin coordinate of the formant frequency (HTK mel scale)
        c = (f * (1.0 / 700.0) + 1.0).log() * (2595.0 / math.log(10.0) / mel_spacing) - 1.0
        term = ((c - mvec).square() * inv_two_sigma2 * -1.0).exp() * FORMANT_GAINS[k]
        env = term if env is None else env + term
    amp = (lh * 2.0).sigmoid()
    return (amp * env * _ripple(s) + MEL_FLOOR).log()


class AnalyticSynthesizer:
    """Frozen analytic forward model with the common synthesizer interface."""

    def __init__(self, cfg: AnalyticTractConfig | None = None):
        self.cfg = cfg or AnalyticTractConfig()

    def forward_t(self, a: Tensor, s) -> Tensor:
        return tract_forward_t(a, s, self.cfg)

    def forward_np(self, a, s) -> np.ndarray:
        return tract_forward_np(a, s, self.cfg)

    def checksum(self):
        import hashlib
        return hashlib.sha256(repr(self.cfg).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

VOWEL_TARGETS = {
    "a": np.array([1.5, 0.5, -1.0, 0.0, 0.0, 0.8]),
    "i": np.array([-1.0, -0.5, 1.5, 0.5, -0.5, 0.6]),
    "u": np.array([-0.8, 0.0, -1.5, -0.5, 1.5, 0.4]),
}

# Consonant targets: place drives one articulator hard; manner sets the lip
# aperture (closure depth) and the harmonicity level.
CONSONANT_SPECS = {
    "pb": ("labial", "stop"),
    "fv": ("labial", "fricative"),
    "td": ("coronal", "stop"),
    "sz": ("coronal", "fricative"),
    "kg": ("dorsal", "stop"),
    "xh": ("dorsal", "fricative"),
}

PLACE_TARGETS = {
    "labial": np.array([-0.5, 0.0, 0.0, 0.0, 1.0, -2.0]),
    "coronal": np.array([-0.2, 0.0, 0.3, 2.0, 0.0, -0.5]),
    "dorsal": np.array([0.2, 0.5, 2.0, -0.3, 0.0, -0.5]),
}

MANNER_LH_OFFSET = {"stop": -1.0, "fricative": -0.2}
MANNER_PC = {"stop": 0.7, "fricative": 0.3}
VOWEL_PC = 0.9


@dataclass
class Segment:
    start: int  # frame index, inclusive
    end: int    # frame index, exclusive
    label: str
    place: str
    manner: str


@dataclass
class SyntheticUtterance:
    utt_id: str
    speaker: str
    trajectory: ArticulatoryTrajectory
    source: SourceTrack
    logmel: np.ndarray  # T x 80
    segments: list[Segment]
    speaker_scale: float

    @property
    def n_frames(self):
        return self.trajectory.frames.shape[0]


@dataclass
class CorpusConfig:
    n_speakers: int = 1
    items_per_speaker: int = 300
    vowels: tuple = ("a", "i", "u")
    consonants: tuple = tuple(CONSONANT_SPECS)
    steady_frames: tuple = (4, 7)       # 80-140 ms at 50 Hz
    transition_frames: int = 2          # ~30 ms
    jitter_sigma: float = 0.05
    scale_range: tuple = (0.85, 1.2)
    pp_range: tuple = (120, 240)

    def __post_init__(self):
        if not self.vowels or not self.consonants:
            raise ValueError("phone inventory must be non-empty")


def phone_attributes(label):
    """(place, manner) for any corpus phone label."""
    if label in VOWEL_TARGETS:
        return "none", "vowel"
    return CONSONANT_SPECS[label]


def consonant_target(label):
    place, manner = CONSONANT_SPECS[label]
    t = PLACE_TARGETS[place].copy()
    t[5] += MANNER_LH_OFFSET[manner]
    return t


def _cosine_ramp(n):
    # 0 -> 1 over n steps, smooth at both ends.
    return 0.5 * (1.0 - np.cos(np.pi * (np.arange(1, n + 1) / (n + 1.0))))


def _build_vcv(v1, c, v2, cfg, rng):
    """Piecewise-target trajectory with cosine transitions; returns
    (T x 6 targets, per-frame PC, segments)."""
    targets = [VOWEL_TARGETS[v1], consonant_target(c), VOWEL_TARGETS[v2]]
    place, manner = CONSONANT_SPECS[c]
    pcs = [VOWEL_PC, MANNER_PC[manner], VOWEL_PC]
    steady = [int(rng.integers(cfg.steady_frames[0], cfg.steady_frames[1] + 1))
              for _ in range(3)]
    tr = cfg.transition_frames

    rows, pc_rows, bounds = [], [], []
    for seg in range(3):
        rows.extend([targets[seg]] * steady[seg])
        pc_rows.extend([pcs[seg]] * steady[seg])
        if seg < 2:
            ramp = _cosine_ramp(tr)
            for r in ramp:
                rows.append((1.0 - r) * targets[seg] + r * targets[seg + 1])
                pc_rows.append((1.0 - r) * pcs[seg] + r * pcs[seg + 1])
        bounds.append(len(rows))

    track = np.array(rows)
    pc = np.array(pc_rows)
    # Segment boundaries at transition midpoints, tiling [0, T).
    t_end = len(rows)
    b1 = steady[0] + tr // 2
    b2 = steady[0] + tr + steady[1] + tr // 2
    labels = [v1, c, v2]
    spans = [(0, b1), (b1, b2), (b2, t_end)]
    segments = [Segment(s, e, lab, *phone_attributes(lab))
                for (s, e), lab in zip(spans, labels)]
    return track, pc, segments


def generate_corpus(cfg: CorpusConfig, seed: int) -> list[SyntheticUtterance]:
    """Deterministic multi-speaker VCV corpus with ground-truth everything."""
    rng = np.random.default_rng(seed)
    utterances = []
    for spk in range(cfg.n_speakers):
        scale = float(rng.uniform(*cfg.scale_range)) if cfg.n_speakers > 1 else 1.0
        tract = AnalyticTractConfig(speaker_scale=scale)
        speaker = f"spk{spk:02d}"
        for item in range(cfg.items_per_speaker):
            v1 = str(rng.choice(cfg.vowels))
            c = str(rng.choice(cfg.consonants))
            v2 = str(rng.choice(cfg.vowels))
            track, pc, segments = _build_vcv(v1, c, v2, cfg, rng)
            T = track.shape[0]
            track = track + rng.normal(0.0, cfg.jitter_sigma, size=track.shape)
            pp_base = float(rng.uniform(*cfg.pp_range))
            drift = np.cumsum(rng.normal(0.0, 1.0, size=T))
            pp = np.clip(pp_base + drift, dsp.PP_MIN, dsp.PP_MAX)
            source = np.column_stack([pp, np.clip(pc, 0.0, 1.0)])
            logmel = tract_forward_np(track, source, tract)
            utterances.append(SyntheticUtterance(
                utt_id=f"{speaker}_u{item:04d}_{v1}{c}{v2}",
                speaker=speaker,
                trajectory=ArticulatoryTrajectory(track),
                source=SourceTrack(source),
                logmel=logmel,
                segments=segments,
                speaker_scale=scale,
            ))
    return utterances


# ---------------------------------------------------------------------------
# Trainable synthesizer net
# ---------------------------------------------------------------------------

LAYER_SIZES = (8, 512, 512, 512, 512, N_MELS)


class SynthesizerNet:
    """4 tanh layers of 512 units + linear head, 8 inputs -> 80 log-mel.

    Inputs are z-scored with statistics fixed at training time.
    """

    def __init__(self, params: ParameterSet, in_mean, in_std):
        self.params = params
        self.in_mean = np.asarray(in_mean, dtype=np.float64)
        self.in_std = np.asarray(in_std, dtype=np.float64)

    @classmethod
    def init(cls, seed=0):
        rng = np.random.default_rng(seed)
        params = ParameterSet()
        for i in range(len(LAYER_SIZES) - 1):
            graph.init_dense_params(params, f"ff{i}", LAYER_SIZES[i],
                                    LAYER_SIZES[i + 1], rng)
        return cls(params, np.zeros(8), np.ones(8))

    def forward_t(self, a: Tensor, s) -> Tensor:
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        x = graph.concat_cols([a, graph.constant(s)])
        x = (x - self.in_mean) * (1.0 / self.in_std)
        h = x
        n_layers = len(LAYER_SIZES) - 1
        for i in range(n_layers):
            act = "tanh" if i < n_layers - 1 else "identity"
            h = dense_forward(h, self.params[f"ff{i}_W"],
                              self.params[f"ff{i}_b"], act)
        return h

    def forward_np(self, a, s) -> np.ndarray:
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        return self.forward_t(graph.constant(a), s).value

    def checksum(self):
        return self.params.checksum()

    def to_tensors(self):
        out = {name: t.value for name, t in self.params.items()}
        out["in_mean"] = self.in_mean.reshape(1, -1)
        out["in_std"] = self.in_std.reshape(1, -1)
        return out

    @classmethod
    def from_tensors(cls, tensors):
        params = ParameterSet()
        for i in range(len(LAYER_SIZES) - 1):
            for suffix in ("W", "b"):
                name = f"ff{i}_{suffix}"
                params.add(name, np.asarray(tensors[name]).reshape(
                    (LAYER_SIZES[i], LAYER_SIZES[i + 1]) if suffix == "W"
                    else (LAYER_SIZES[i + 1],)))
        return cls(params, np.asarray(tensors["in_mean"]).reshape(-1),
                   np.asarray(tensors["in_std"]).reshape(-1))


@dataclass
class SynthTrainConfig:
    lr: float = 5e-4
    epochs: int = 200
    batch_frames: int = 256
    seed: int = 0
    val_fraction: float = 0.1


def train_synthesizer(pairs, cfg: SynthTrainConfig | None = None):
    """Regress the net onto (articulatory+source, log-mel) frame pairs.

    `pairs` is an iterable of (trajectory T x 6, source T x 2, logmel T x 80)
    with aligned frame counts. Returns (SynthesizerNet, history) where
    history is a list of (epoch, train_mse, val_mse).
    """
    cfg = cfg or SynthTrainConfig()
    xs, ys = [], []
    for traj, source, logmel in pairs:
        traj = np.atleast_2d(traj)
        source = np.atleast_2d(source)
        logmel = np.atleast_2d(logmel)
        if not (traj.shape[0] == source.shape[0] == logmel.shape[0]):
            raise ValueError("unaligned frame counts in training pair")
        xs.append(np.concatenate([traj, source], axis=1))
        ys.append(logmel)
    X = np.concatenate(xs, axis=0)
    Y = np.concatenate(ys, axis=0)

    rng = np.random.default_rng(cfg.seed)
    net = SynthesizerNet.init(seed=cfg.seed)
    net.in_mean = X.mean(axis=0)
    net.in_std = np.maximum(X.std(axis=0), 1e-6)

    n = X.shape[0]
    n_val = max(1, int(round(cfg.val_fraction * n))) if n > 10 else 0
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    opt = Adam(net.params, lr=cfg.lr)
    history = []

    def mse_on(idx):
        if len(idx) == 0:
            return math.nan
        pred = net.forward_np(X[idx, :6], X[idx, 6:])
        return float(np.mean((pred - Y[idx]) ** 2))

    history.append((0, mse_on(train_idx), mse_on(val_idx)))
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_idx)
        for lo in range(0, len(order), cfg.batch_frames):
            batch = order[lo: lo + cfg.batch_frames]
            net.params.zero_grad()
            pred = net.forward_t(Tensor(X[batch, :6], requires_grad=False),
                                 X[batch, 6:])
            loss = (pred - Y[batch]).square().mean()
            if not np.isfinite(loss.item()):
                raise DivergenceError(
                    f"NaN loss at epoch {epoch}, step {lo // cfg.batch_frames}")
            loss.backward()
            opt.step()
        history.append((epoch, mse_on(train_idx), mse_on(val_idx)))
    return net, history
