"""Cross-package conformance: files written here must load cleanly in the
imitation toolkit, and forward passes must agree."""

import numpy as np
import pytest

artimit_store = pytest.importorskip("artimit.store")
artimit_imitation = pytest.importorskip("artimit.imitation")

from ssl_exporter import distill, exporter, formats
from test_distill import linear_pairs


def _line(name, ok, detail):
    print(f"\n[SECONDARY] {name}: {'PASS' if ok else 'FAIL'} ({detail})",
          flush=True)
    assert ok, f"{name}: {detail}"


def test_feature_files_load_in_toolkit(small_model, wav_manifest, tmp_path):
    job = exporter.ExportJob(str(wav_manifest), str(tmp_path), layer=1)
    written = exporter.export_features(job, model=small_model)
    ok = True
    for path in written:
        fs = artimit_store.read_features(path)
        ok = ok and fs.frames.shape[1] == 768 and fs.frame_rate == 50.0 \
            and fs.kind == "external"
        ours, rate, _ = formats.read_features(path)
        ok = ok and np.array_equal(fs.frames, ours) and rate == 50.0
    _line("exporter-conformance", ok,
          f"{len(written)} files, dim 768, rate 50 Hz, kind external")


def test_distilled_encoder_matches_in_toolkit(tmp_path):
    pairs = [(np.random.default_rng(i).normal(size=(40, 80)),
              np.random.default_rng(100 + i).normal(size=(40, 16)))
             for i in range(3)]
    path = tmp_path / "enc.ckp"
    distill.distill_encoder(pairs, str(path), window=3, hidden_sizes=(32,),
                            epochs=3)
    space = artimit_imitation.load_frozen_encoder(str(path))
    mel = pairs[0][0]
    theirs = space.render_np(mel)
    ours = distill.encoder_forward(str(path), mel)
    err = float(np.max(np.abs(theirs - ours)))
    _line("distill-forward-agreement",
          theirs.shape == (40, 16) and err <= 1e-5,
          f"max |toolkit - exporter| = {err:.2e} (tol 1e-5)")


def test_linear_distilled_encoder_round_trips(tmp_path):
    pairs = linear_pairs(in_dim=80, out_dim=8)
    path = tmp_path / "lin.ckp"
    report = distill.distill_encoder(pairs, str(path), window=1,
                                     hidden_sizes=(), epochs=400, lr=3e-2)
    space = artimit_imitation.load_frozen_encoder(str(path))
    mel, target = pairs[0]
    pred = space.render_np(mel)
    assert report.r2_mean > 0.999
    assert np.max(np.abs(pred - target)) < 0.3
    ours = distill.encoder_forward(str(path), mel)
    assert np.max(np.abs(pred - ours)) <= 1e-5
