"""Writers/readers for the imitation toolkit's on-disk formats.

Implemented against the documented layouts (FTR1 features, CKP1
checkpoints, TSV manifests) so the two packages share files, not code.

FTR1: magic "FTR1", u32 n_frames, u32 dim, f32 frame_rate_hz, u32 kind
code (0 mfcc39, 1 logmel80, 2 external), then little-endian f32 rows.

CKP1: magic "CKP1", u32 metadata length, UTF-8 JSON {schema, meta,
tensors: [{name, rows, cols, offset}]}, then concatenated f32 tensors.
"""

import json
import os
import struct
import tempfile
import wave

import numpy as np

FTR_MAGIC = b"FTR1"
CKP_MAGIC = b"CKP1"
KIND_EXTERNAL = 2
KIND_LOGMEL80 = 1


class FormatError(ValueError):
    pass


def _atomic_write(path, payload: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_features(path, frames: np.ndarray, frame_rate: float,
                   kind_code: int = KIND_EXTERNAL):
    frames = np.ascontiguousarray(np.atleast_2d(frames), dtype="<f4")
    header = FTR_MAGIC + struct.pack("<IIfI", frames.shape[0],
                                     frames.shape[1], float(frame_rate),
                                     kind_code)
    _atomic_write(path, header + frames.tobytes())


def read_features(path):
    """Returns (frames float64, frame_rate, kind_code)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FTR_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}")
    n, dim, rate, kind = struct.unpack("<IIfI", blob[4:20])
    body = blob[20:]
    if len(body) != 4 * n * dim:
        raise FormatError("body length does not match header")
    frames = np.frombuffer(body, dtype="<f4").reshape(n, dim)
    return frames.astype(np.float64), float(rate), int(kind)


def write_frozen_encoder(path, layers):
    """layers: list of (weight (w*in_dim) x out_dim, bias, window,
    nonlinearity code)."""
    manifest = []
    blobs = []
    meta_layers = []
    offset = 0
    for i, (w, b, window, code) in enumerate(layers):
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        b = np.atleast_2d(np.asarray(b, dtype=np.float64))
        meta_layers.append({"in_dim": w.shape[0] // window,
                            "out_dim": w.shape[1],
                            "window": window, "nonlinearity": code})
        for name, arr in ((f"layer{i}_W", w), (f"layer{i}_b", b)):
            data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            manifest.append({"name": name, "rows": arr.shape[0],
                             "cols": arr.shape[1], "offset": offset})
            blobs.append(data)
            offset += len(data)
    metadata = json.dumps({"schema": "frozen_encoder",
                           "meta": {"layers": meta_layers},
                           "tensors": manifest}).encode("utf-8")
    _atomic_write(path, CKP_MAGIC + struct.pack("<I", len(metadata))
                  + metadata + b"".join(blobs))


def read_manifest(path):
    """Rows: utt_id <TAB> speaker [<TAB> key=value ...]; paths resolved
    relative to the manifest directory."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise FormatError(f"line {lineno}: need utt_id and speaker")
            entry = {"utt_id": parts[0], "speaker": parts[1]}
            for field in parts[2:]:
                key, _, value = field.partition("=")
                if key in ("wav", "mel", "features", "traj", "source",
                           "align", "transcript", "ema"):
                    value = os.path.join(base, value)
                entry[key] = value
            entries.append(entry)
    return entries


def read_wav(path):
    """16 kHz mono 16-bit PCM; samples scaled to [-1, 1]."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise FormatError("need mono audio")
        if wf.getsampwidth() != 2:
            raise FormatError("need 16-bit samples")
        if wf.getframerate() != 16000:
            raise FormatError(f"need 16000 Hz, got {wf.getframerate()}")
        raw = wf.readframes(wf.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
