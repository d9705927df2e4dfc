"""The trainable inverse model and the self-supervised imitation loop.

The inverse model (2-layer BiLSTM, 64 hidden units per direction, linear
head to 6 articulatory parameters) is the only component that changes during
training. Source parameters are copied from the input. The loss is the
cosine distance between the input features and the features re-extracted
from the synthesized mel frames, both rendered in the same loss space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import dsp, graph, store
from .artic import ArticulatoryTrajectory
from .dsp import FeatureSequence, MfccStats, N_MELS
from .graph import (Adam, DimensionError, ParameterSet, Tensor,
                    bilstm_forward, cosine_distance_loss, dense_forward)

HIDDEN = 64
LAYERS = 2


class ContractError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Inverse model
# ---------------------------------------------------------------------------

class InverseModel:
    """BiLSTM encoder + linear head mapping features to 6 parameters."""

    def __init__(self, params: ParameterSet, input_dim: int):
        self.params = params
        self.input_dim = input_dim

    @classmethod
    def init(cls, input_dim, seed=0):
        rng = np.random.default_rng(seed)
        params = ParameterSet()
        graph.init_bilstm_params(params, input_dim, HIDDEN, LAYERS, rng)
        graph.init_dense_params(params, "head", 2 * HIDDEN, 6, rng)
        return cls(params, input_dim)

    def forward_t(self, z: np.ndarray) -> Tensor:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.input_dim:
            raise store.FormatError(
                f"inverse model expects dim {self.input_dim}, got {z.shape[1]}")
        h = bilstm_forward(graph.constant(z), self.params, LAYERS, HIDDEN)
        return dense_forward(h, self.params["head_W"], self.params["head_b"])

    def forward(self, z: FeatureSequence) -> ArticulatoryTrajectory:
        if z.frame_rate != dsp.FRAME_RATE:
            raise DimensionError(f"need {dsp.FRAME_RATE} Hz features")
        return ArticulatoryTrajectory(self.forward_t(z.frames).value)

    def checksum(self):
        return self.params.checksum()

    def to_tensors(self):
        return {name: t.value for name, t in self.params.items()}

    @classmethod
    def from_tensors(cls, tensors, input_dim):
        model = cls.init(input_dim)
        for name, t in model.params.items():
            arr = np.asarray(tensors[name])
            model.params[name].value = arr.reshape(t.value.shape).astype(np.float64)
        return model


def inverse_forward(model: InverseModel, z: FeatureSequence) -> ArticulatoryTrajectory:
    return model.forward(z)


# ---------------------------------------------------------------------------
# Loss spaces
# ---------------------------------------------------------------------------

class LogMelSpace:
    """Identity on log-mel frames."""
    name = "logmel80"
    dim = N_MELS

    def render_t(self, logmel: Tensor) -> Tensor:
        return logmel

    def render_np(self, logmel: np.ndarray) -> np.ndarray:
        return np.atleast_2d(logmel)

    def checksum(self):
        return "logmel80"


class MfccSpace:
    """Differentiable log-mel -> 39-dim MFCC path with fixed statistics."""
    name = "mfcc39_from_mel"
    dim = 39

    def __init__(self, stats: MfccStats):
        self.stats = stats

    def render_t(self, logmel: Tensor) -> Tensor:
        return dsp.mfcc_from_logmel_t(logmel, self.stats)

    def render_np(self, logmel: np.ndarray) -> np.ndarray:
        return self.render_t(graph.constant(np.atleast_2d(logmel))).value

    def checksum(self):
        import hashlib
        h = hashlib.sha256()
        h.update(self.stats.mean.tobytes())
        h.update(self.stats.std.tobytes())
        return h.hexdigest()


NONLIN_CODES = {0: "identity", 1: "tanh", 2: "gelu"}


@dataclass
class EncoderLayer:
    weight: np.ndarray   # (window*in_dim) x out_dim
    bias: np.ndarray     # out_dim
    window: int          # odd context width in frames (1 past the first layer)
    nonlinearity: str    # identity | tanh | gelu


class FrozenEncoderSpace:
    """Fixed affine+pointwise layer stack applied framewise over an odd
    context window of log-mel frames."""
    name = "frozen_encoder"

    def __init__(self, layers: list[EncoderLayer]):
        if not layers:
            raise store.FormatError("frozen encoder needs at least one layer")
        for i, layer in enumerate(layers):
            if layer.window % 2 != 1:
                raise store.FormatError(f"layer {i}: window must be odd")
            if layer.weight.shape[1] != layer.bias.reshape(-1).shape[0]:
                raise store.FormatError(f"layer {i}: bias length mismatch")
        self.layers = layers
        self.dim = layers[-1].weight.shape[1]
        self.window = layers[0].window

    @staticmethod
    def _stack_context(x: Tensor, window: int) -> Tensor:
        """Concatenate edge-replicated shifted copies: T x (window*D)."""
        if window == 1:
            return x
        T = x.value.shape[0]
        half = window // 2
        shifted = []
        for off in range(-half, half + 1):
            S = np.zeros((T, T))
            src = np.clip(np.arange(T) + off, 0, T - 1)
            S[np.arange(T), src] = 1.0
            shifted.append(graph.constant(S) @ x)
        return graph.concat_cols(shifted)

    def render_t(self, logmel: Tensor) -> Tensor:
        h = logmel
        for i, layer in enumerate(self.layers):
            hin = self._stack_context(h, layer.window)
            if hin.value.shape[1] != layer.weight.shape[0]:
                raise store.FormatError(
                    f"layer {i}: input dim {hin.value.shape[1]} != weight rows "
                    f"{layer.weight.shape[0]}")
            h = hin @ graph.constant(layer.weight) + layer.bias
            if layer.nonlinearity == "tanh":
                h = h.tanh()
            elif layer.nonlinearity == "gelu":
                h = h.gelu()
        return h

    def render_np(self, logmel):
        return self.render_t(graph.constant(np.atleast_2d(logmel))).value

    def checksum(self):
        import hashlib
        h = hashlib.sha256()
        for layer in self.layers:
            h.update(layer.weight.tobytes())
            h.update(np.asarray(layer.bias).tobytes())
        return h.hexdigest()


def load_frozen_encoder(path) -> FrozenEncoderSpace:
    """Load a frozen-encoder checkpoint (schema "frozen_encoder")."""
    _, meta, tensors = store.read_checkpoint(path, expect_schema="frozen_encoder")
    specs = meta.get("layers")
    if not specs:
        raise store.FormatError("frozen encoder metadata lists no layers")
    layers = []
    for i, spec in enumerate(specs):
        try:
            w = tensors[f"layer{i}_W"]
            b = tensors[f"layer{i}_b"]
        except KeyError:
            raise store.FormatError(f"layer {i}: missing tensors") from None
        in_dim, out_dim = int(spec["in_dim"]), int(spec["out_dim"])
        window = int(spec.get("window", 1))
        if w.shape != (window * in_dim, out_dim):
            raise store.FormatError(
                f"layer {i}: declared {window}*{in_dim}x{out_dim}, tensor is "
                f"{w.shape[0]}x{w.shape[1]}")
        code = int(spec.get("nonlinearity", 0))
        if code not in NONLIN_CODES:
            raise store.FormatError(f"layer {i}: unknown nonlinearity {code}")
        layers.append(EncoderLayer(w, b.reshape(-1), window, NONLIN_CODES[code]))
    return FrozenEncoderSpace(layers)


def save_frozen_encoder(path, space: FrozenEncoderSpace):
    meta = {"layers": []}
    tensors = {}
    for i, layer in enumerate(space.layers):
        code = {v: k for k, v in NONLIN_CODES.items()}[layer.nonlinearity]
        meta["layers"].append({
            "in_dim": layer.weight.shape[0] // layer.window,
            "out_dim": layer.weight.shape[1],
            "window": layer.window,
            "nonlinearity": code,
        })
        tensors[f"layer{i}_W"] = layer.weight
        tensors[f"layer{i}_b"] = layer.bias.reshape(1, -1)
    store.write_checkpoint(path, "frozen_encoder", tensors, meta)


def make_loss_space(name, mfcc_stats=None, encoder_path=None):
    if name == "logmel80":
        return LogMelSpace()
    if name == "mfcc39_from_mel":
        if mfcc_stats is None:
            raise ValueError("mfcc39_from_mel loss space needs statistics")
        return MfccSpace(mfcc_stats)
    if name.startswith("frozen_encoder:"):
        return load_frozen_encoder(name.split(":", 1)[1])
    if name == "frozen_encoder":
        if encoder_path is None:
            raise ValueError("frozen_encoder loss space needs a path")
        return load_frozen_encoder(encoder_path)
    raise ValueError(f"unknown loss space {name!r}")


# ---------------------------------------------------------------------------
# Imitation loss and training
# ---------------------------------------------------------------------------

def imitation_loss(z_in_space, a_hat: Tensor, source, synth, space) -> Tensor:
    """Synthesize from a_hat + source, render in the loss space, and compare
    against the input rendered in the same space."""
    z_in_space = np.atleast_2d(np.asarray(z_in_space, dtype=np.float64))
    logmel_hat = synth.forward_t(a_hat, source)
    z_hat = space.render_t(logmel_hat)
    if z_in_space.shape != z_hat.value.shape:
        raise ContractError(
            f"input features {z_in_space.shape} do not live in loss space "
            f"output {z_hat.value.shape}")
    return cosine_distance_loss(graph.constant(z_in_space), z_hat)


@dataclass
class ImitationConfig:
    lr: float = 1.7e-3
    epochs: int = 100
    batch_size: int = 8
    seed: int = 0
    loss_space: str = "logmel80"
    splits: tuple = (0.8, 0.1, 0.1)
    compensate_scale: bool = False


@dataclass
class ImitationRun:
    config: ImitationConfig
    log: list                  # (epoch, train_loss, val_loss)
    model: InverseModel
    split_ids: dict            # {"train": [...], "val": [...], "test": [...]}


def split_utterances(utterances, splits, seed):
    """Deterministic by-utterance 3-way split."""
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(utterances))
    n_train = int(round(splits[0] * len(utterances)))
    n_val = int(round(splits[1] * len(utterances)))
    return (idx[:n_train].tolist(), idx[n_train:n_train + n_val].tolist(),
            idx[n_train + n_val:].tolist())


def input_features_for(utt, space, compensate_scale=False):
    """Render an utterance's log-mel in the loss space; optionally unwarp the
    speaker's formant scale from the mel axis first."""
    logmel = utt.logmel
    if compensate_scale:
        logmel = warp_logmel_scale(logmel, utt.speaker_scale)
    return space.render_np(logmel)


def warp_logmel_scale(logmel, scale):
    """Undo a multiplicative formant scale by resampling the mel axis: output
    bin at frequency f is read from the input at f*scale."""
    centers = dsp.mel_center_freqs()
    src = dsp.freq_to_bin_coord(centers * scale)
    src = np.clip(src, 0.0, N_MELS - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, N_MELS - 1)
    w = src - lo
    return logmel[:, lo] * (1.0 - w) + logmel[:, hi] * w


def train_inverse(utterances, synth, config: ImitationConfig,
                  space=None) -> ImitationRun:
    """Mini-batch Adam on the imitation loss; only the inverse model moves.

    Ground-truth trajectories on the utterances are never touched by the
    loss; they exist for downstream evaluation only.
    """
    if space is None:
        space = make_loss_space(config.loss_space)
    train_idx, val_idx, test_idx = split_utterances(
        utterances, config.splits, config.seed)
    if not train_idx:
        raise ValueError("empty training split")

    inputs = [input_features_for(u, space, config.compensate_scale)
              for u in utterances]
    model = InverseModel.init(space.dim, seed=config.seed)
    opt = Adam(model.params, lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)

    if hasattr(synth, "params"):
        synth.params.set_trainable(False)
    synth_sum_before = synth.checksum()
    space_sum_before = space.checksum()

    def utt_loss(i):
        u = utterances[i]
        a_hat = model.forward_t(inputs[i])
        return imitation_loss(inputs[i], a_hat, u.source.frames, synth, space)

    def mean_loss(idxs):
        if not idxs:
            return math.nan
        return float(np.mean([utt_loss(i).item() for i in idxs]))

    log = [(0, mean_loss(train_idx), mean_loss(val_idx))]
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = [int(i) for i in rng.permutation(train_idx)]
        epoch_losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo: lo + config.batch_size]
            model.params.zero_grad()
            batch_vals = []
            for i in batch:
                loss = utt_loss(i) * (1.0 / len(batch))
                if not np.isfinite(loss.item()):
                    raise DivergenceError(f"NaN loss at step {step}")
                loss.backward()
                batch_vals.append(loss.item() * len(batch))
            opt.step()
            step += 1
            epoch_losses.append(float(np.mean(batch_vals)))
        log.append((epoch, float(np.mean(epoch_losses)), mean_loss(val_idx)))

    if synth.checksum() != synth_sum_before or space.checksum() != space_sum_before:
        raise ContractError("frozen component parameters changed during training")

    ids = lambda idxs: [utterances[i].utt_id for i in idxs]
    return ImitationRun(config, log, model,
                        {"train": ids(train_idx), "val": ids(val_idx),
                         "test": ids(test_idx)})
