"""Per-layer wav2vec 2.0 feature export.

Layer indexing: 0 is the pre-transformer (feature projection) output, k >= 1
is the output of transformer block k. The index convention is recorded in
each job's metadata sidecar.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import formats

DEFAULT_MODEL = "facebook/wav2vec2-base-10k-voxpopuli"
HIDDEN_SIZE = 768
FRAME_RATE = 50.0


class ExportError(RuntimeError):
    pass


@dataclass
class ExportJob:
    manifest: str
    outdir: str
    layer: int = 8
    model_id: str = DEFAULT_MODEL

    def __post_init__(self):
        if self.layer < 0:
            raise ExportError(f"layer index must be >= 0, got {self.layer}")


def load_model(model_id=DEFAULT_MODEL):
    """Load a Wav2Vec2Model in eval mode; raises ExportError on failure."""
    try:
        from transformers import Wav2Vec2Model
        model = Wav2Vec2Model.from_pretrained(model_id)
    except Exception as e:
        raise ExportError(f"cannot load model {model_id!r}: {e}") from e
    return model.eval()


def hidden_states_for(model, samples: np.ndarray) -> list:
    """All hidden-state matrices (layer 0 .. depth) for one utterance."""
    import torch
    x = torch.as_tensor(samples, dtype=torch.float32).reshape(1, -1)
    with torch.no_grad():
        out = model(x, output_hidden_states=True)
    return [h[0].numpy().astype(np.float64) for h in out.hidden_states]


def export_features(job: ExportJob, model=None):
    """Write one <utt_id>.w2v.ftr per manifest row with a wav entry, plus an
    export.json sidecar; returns the list of written paths."""
    if model is None:
        model = load_model(job.model_id)
    depth = model.config.num_hidden_layers
    if job.layer > depth:
        raise ExportError(f"layer {job.layer} out of range for a "
                          f"{depth}-layer model")
    if model.config.hidden_size != HIDDEN_SIZE:
        raise ExportError(f"model hidden size {model.config.hidden_size}, "
                          f"expected {HIDDEN_SIZE}")
    entries = formats.read_manifest(job.manifest)
    os.makedirs(job.outdir, exist_ok=True)
    written = []
    for e in entries:
        if "wav" not in e:
            continue
        samples = formats.read_wav(e["wav"])
        states = hidden_states_for(model, samples)
        frames = states[job.layer]
        path = os.path.join(job.outdir, f"{e['utt_id']}.w2v.ftr")
        formats.write_features(path, frames, FRAME_RATE)
        written.append(path)
    if not written:
        raise ExportError("manifest has no wav entries")
    sidecar = {"model_id": job.model_id, "layer": job.layer,
               "layer_indexing": "0 = pre-transformer output, "
                                 "k = output of transformer block k",
               "dim": HIDDEN_SIZE, "frame_rate_hz": FRAME_RATE,
               "n_utterances": len(written)}
    with open(os.path.join(job.outdir, "export.json"), "w",
              encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
    return written
