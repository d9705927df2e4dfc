"""File formats and persistence.

Binary carriers:
* FTR1 feature files — magic "FTR1", u32 n_frames, u32 dim, f32
  frame_rate_hz, u32 kind code (0 mfcc39, 1 logmel80, 2 external), then
  n_frames*dim little-endian f32, row-major.
* CKP1 checkpoints — magic "CKP1", u32 metadata length, UTF-8 JSON metadata
  (schema name, free-form meta, tensor manifest with name/rows/cols/offset),
  then concatenated little-endian f32 tensors. Offsets are byte offsets into
  the tensor blob.

Text carriers: alignment TSV (start_s, end_s, label), EMA TSV with a
"#rate=<hz>" pragma and a channel-name header row, plain-text transcripts,
and tab-separated corpus manifests (utt_id, speaker, then key=value fields).

All writers are atomic (temp file + rename); readers never mutate files.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import wave

import numpy as np

from .artic import EmaRecording
from .dsp import FeatureSequence, Waveform

FTR_MAGIC = b"FTR1"
CKP_MAGIC = b"CKP1"
KIND_CODES = {"mfcc39": 0, "logmel80": 1, "external": 2}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}
CHECKPOINT_SCHEMAS = {"inverse_model", "synthesizer_net", "gpca_model",
                      "frozen_encoder", "probe"}


class FormatError(ValueError):
    """Malformed or unsupported file content."""


class ParseError(ValueError):
    """Text file violating its grammar; message carries the line number."""


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


def _atomic_write_text(path, text: str):
    _atomic_write(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------

def read_wav(path) -> Waveform:
    """16 kHz mono 16-bit PCM only; no silent resampling."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            rate = wf.getframerate()
            width = wf.getsampwidth()
            comp = wf.getcomptype()
            n = wf.getnframes()
            raw = wf.readframes(n)
    except wave.Error as e:
        raise FormatError(f"not a readable RIFF/WAVE file: {e}") from e
    if comp != "NONE":
        raise FormatError(f"unsupported codec {comp!r}, need PCM")
    if channels != 1:
        raise FormatError(f"need mono audio, file has {channels} channels")
    if width != 2:
        raise FormatError(f"need 16-bit samples, file has {8 * width}-bit")
    if rate != 16000:
        raise FormatError(f"need 16000 Hz, file has {rate} Hz")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, 16000)


def write_wav(path, w: Waveform):
    data = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    import io
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(data.tobytes())
    _atomic_write(path, buf.getvalue())


# ---------------------------------------------------------------------------
# Feature files
# ---------------------------------------------------------------------------

def write_features(path, fs: FeatureSequence):
    frames = np.ascontiguousarray(fs.frames, dtype="<f4")
    header = FTR_MAGIC + struct.pack("<IIfI", frames.shape[0], frames.shape[1],
                                     float(fs.frame_rate), KIND_CODES[fs.kind])
    _atomic_write(path, header + frames.tobytes())


def read_features(path) -> FeatureSequence:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FTR_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r} at offset 0, want FTR1")
    if len(blob) < 20:
        raise FormatError(f"truncated header: {len(blob)} bytes")
    n, dim, rate, kind_code = struct.unpack("<IIfI", blob[4:20])
    if kind_code not in KIND_NAMES:
        raise FormatError(f"unknown kind code {kind_code} at offset 16")
    if rate <= 0:
        raise FormatError(f"non-positive frame rate {rate}")
    kind = KIND_NAMES[kind_code]
    want = {"mfcc39": 39, "logmel80": 80}.get(kind)
    if want is not None and dim != want:
        raise FormatError(f"kind {kind} requires dim {want}, header says {dim}")
    body = blob[20:]
    expect = 4 * n * dim
    if len(body) != expect:
        raise FormatError(
            f"body length {len(body)} != {expect} expected from header "
            f"(error at byte offset {20 + min(len(body), expect)})")
    frames = np.frombuffer(body, dtype="<f4").reshape(n, dim).astype(np.float64)
    return FeatureSequence(frames, float(rate), kind)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def write_checkpoint(path, schema: str, tensors: dict, meta: dict | None = None):
    """tensors: name -> 1-D or 2-D float array (stored as rows x cols)."""
    if schema not in CHECKPOINT_SCHEMAS:
        raise FormatError(f"unknown checkpoint schema {schema!r}")
    manifest = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "rows": arr.shape[0],
                         "cols": arr.shape[1], "offset": offset})
        blobs.append(data)
        offset += len(data)
    metadata = json.dumps({"schema": schema, "meta": meta or {},
                           "tensors": manifest}).encode("utf-8")
    payload = CKP_MAGIC + struct.pack("<I", len(metadata)) + metadata + b"".join(blobs)
    _atomic_write(path, payload)


def read_checkpoint(path, expect_schema: str | None = None):
    """Returns (schema, meta, tensors dict of float64 arrays)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CKP_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, want CKP1")
    (mlen,) = struct.unpack("<I", blob[4:8])
    if 8 + mlen > len(blob):
        raise FormatError("metadata length exceeds file size")
    try:
        metadata = json.loads(blob[8:8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"bad metadata: {e}") from e
    schema = metadata.get("schema")
    if schema not in CHECKPOINT_SCHEMAS:
        raise FormatError(f"unknown checkpoint schema {schema!r}")
    if expect_schema is not None and schema != expect_schema:
        raise FormatError(f"schema {schema!r}, expected {expect_schema!r}")
    body = blob[8 + mlen:]
    tensors = {}
    seen_spans = []
    for i, entry in enumerate(metadata.get("tensors", [])):
        name, rows, cols = entry["name"], int(entry["rows"]), int(entry["cols"])
        off = int(entry["offset"])
        size = 4 * rows * cols
        if off < 0 or off + size > len(body):
            raise FormatError(f"tensor {i} ({name!r}): span [{off}, {off + size}) "
                              f"out of bounds (body {len(body)} bytes)")
        for (o2, s2, n2) in seen_spans:
            if off < o2 + s2 and o2 < off + size:
                raise FormatError(f"tensor {name!r} overlaps {n2!r}")
        seen_spans.append((off, size, name))
        tensors[name] = np.frombuffer(body[off:off + size], dtype="<f4") \
            .reshape(rows, cols).astype(np.float64)
    return schema, metadata.get("meta", {}), tensors


# ---------------------------------------------------------------------------
# Text formats
# ---------------------------------------------------------------------------

def read_alignments(path):
    """TSV rows: start_s <TAB> end_s <TAB> label. Ordered, non-overlapping."""
    segments = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"line {lineno}: expected 3 tab-separated "
                                 f"fields, got {len(parts)}")
            try:
                start, end = float(parts[0]), float(parts[1])
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric time") from None
            if not start < end:
                raise ParseError(f"line {lineno}: start must be < end")
            if segments and start < segments[-1][1] - 1e-9:
                raise ParseError(
                    f"line {lineno}: segment overlaps or precedes the one on "
                    f"line {segments[-1][3]}")
            segments.append((start, end, parts[2], lineno))
    return [(s, e, lab) for s, e, lab, _ in segments]


def write_alignments(path, segments):
    lines = [f"{s:.6f}\t{e:.6f}\t{lab}" for s, e, lab in segments]
    _atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_ema(path) -> EmaRecording:
    """EMA TSV: '#rate=<hz>' pragma, channel-name header row, float rows."""
    rate = None
    names = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                if line.startswith("#rate="):
                    try:
                        rate = float(line[len("#rate="):])
                    except ValueError:
                        raise ParseError(f"line {lineno}: bad rate pragma") from None
                continue
            parts = line.split("\t")
            if names is None:
                names = parts
                continue
            if len(parts) != len(names):
                raise ParseError(f"line {lineno}: expected {len(names)} "
                                 f"columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric value") from None
    if rate is None:
        raise ParseError("missing '#rate=' pragma")
    if names is None or not rows:
        raise ParseError("missing header row or data rows")
    return EmaRecording(names, np.array(rows), rate)


def write_ema(path, e: EmaRecording):
    lines = [f"#rate={e.rate:g}", "\t".join(e.channel_names)]
    for row in e.data:
        lines.append("\t".join(f"{v:.8g}" for v in row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_transcript(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read().split()


# ---------------------------------------------------------------------------
# Corpus manifests
# ---------------------------------------------------------------------------

MANIFEST_KEYS = {"wav", "features", "traj", "source", "align", "transcript",
                 "mel", "ema", "scale"}
_PATH_KEYS = MANIFEST_KEYS - {"scale"}


def read_manifest(path, check_paths=True):
    """Rows: utt_id <TAB> speaker [<TAB> key=value ...]. Returns a list of
    dicts with 'utt_id', 'speaker', and any present keys; path values are
    resolved relative to the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    ids = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ParseError(f"line {lineno}: need at least utt_id and speaker")
            utt_id, speaker = parts[0], parts[1]
            if utt_id in ids:
                raise ParseError(f"line {lineno}: duplicate utterance id {utt_id!r}")
            ids.add(utt_id)
            entry = {"utt_id": utt_id, "speaker": speaker}
            for field in parts[2:]:
                if "=" not in field:
                    raise ParseError(f"line {lineno}: field {field!r} is not "
                                     "key=value")
                key, value = field.split("=", 1)
                if key not in MANIFEST_KEYS:
                    raise ParseError(f"line {lineno}: unknown key {key!r}")
                if key in _PATH_KEYS:
                    value = os.path.join(base, value)
                    if check_paths and not os.path.exists(value):
                        raise ParseError(f"line {lineno}: path for {key!r} "
                                         f"does not exist: {value}")
                entry[key] = value
            entries.append(entry)
    return entries


def write_manifest(path, entries):
    """Inverse of read_manifest; path values must already be relative."""
    lines = []
    for e in entries:
        fields = [e["utt_id"], e["speaker"]]
        for key in sorted(set(e) - {"utt_id", "speaker"}):
            fields.append(f"{key}={e[key]}")
        lines.append("\t".join(str(f) for f in fields))
    _atomic_write_text(path, "\n".join(lines) + "\n")
