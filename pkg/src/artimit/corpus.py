"""Corpus persistence: write a generated corpus as per-utterance files plus
a manifest, and load any manifest back into in-memory utterances.

Synthetic and real data go through the same files, so downstream tools never
care where a corpus came from.
"""

from __future__ import annotations

import os

import numpy as np

from . import dsp, store, synthesis
from .artic import ArticulatoryTrajectory
from .dsp import FRAME_RATE, FeatureSequence, SourceTrack
from .synthesis import Segment, SyntheticUtterance


def write_corpus(utterances, outdir):
    """Write mel/trajectory/source/alignment files and manifest.tsv."""
    os.makedirs(outdir, exist_ok=True)
    entries = []
    for u in utterances:
        base = u.utt_id
        store.write_features(os.path.join(outdir, base + ".mel.ftr"),
                             FeatureSequence(u.logmel, FRAME_RATE, "logmel80"))
        store.write_features(os.path.join(outdir, base + ".traj.ftr"),
                             FeatureSequence(u.trajectory.frames, FRAME_RATE,
                                             "external"))
        store.write_features(os.path.join(outdir, base + ".src.ftr"),
                             FeatureSequence(u.source.frames, FRAME_RATE,
                                             "external"))
        segs = [(s.start / FRAME_RATE, s.end / FRAME_RATE, s.label)
                for s in u.segments]
        store.write_alignments(os.path.join(outdir, base + ".align.tsv"), segs)
        entries.append({
            "utt_id": u.utt_id,
            "speaker": u.speaker,
            "mel": base + ".mel.ftr",
            "traj": base + ".traj.ftr",
            "source": base + ".src.ftr",
            "align": base + ".align.tsv",
            "scale": f"{u.speaker_scale:.6f}",
        })
    manifest_path = os.path.join(outdir, "manifest.tsv")
    store.write_manifest(manifest_path, entries)
    return manifest_path


def segments_from_alignment(path):
    """Frame-indexed segments with phone attributes from an alignment TSV."""
    segs = []
    for start_s, end_s, label in store.read_alignments(path):
        place, manner = synthesis.phone_attributes(label)
        segs.append(Segment(int(round(start_s * FRAME_RATE)),
                            int(round(end_s * FRAME_RATE)), label, place, manner))
    return segs


def load_corpus(manifest_path):
    """Load manifest rows into SyntheticUtterance objects. Missing optional
    files yield empty fields (zero-length trajectory, no segments)."""
    utterances = []
    for e in store.read_manifest(manifest_path):
        logmel = store.read_features(e["mel"]).frames if "mel" in e else None
        if logmel is None:
            raise store.FormatError(
                f"utterance {e['utt_id']!r}: manifest entry lacks a mel file")
        T = logmel.shape[0]
        traj = (store.read_features(e["traj"]).frames if "traj" in e
                else np.zeros((T, 6)))
        source = (store.read_features(e["source"]).frames if "source" in e
                  else np.zeros((T, 2)))
        segments = segments_from_alignment(e["align"]) if "align" in e else []
        utterances.append(SyntheticUtterance(
            utt_id=e["utt_id"],
            speaker=e["speaker"],
            trajectory=ArticulatoryTrajectory(traj),
            source=SourceTrack(source),
            logmel=logmel,
            segments=segments,
            speaker_scale=float(e.get("scale", 1.0)),
        ))
    return utterances
