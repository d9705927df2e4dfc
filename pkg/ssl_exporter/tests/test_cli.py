import numpy as np

from ssl_exporter import cli, distill, formats
from test_distill import linear_pairs


def test_distill_command(tmp_path, capsys):
    pairs = linear_pairs(in_dim=6, out_dim=4)
    lines = []
    for i, (mel, feats) in enumerate(pairs):
        formats.write_features(str(tmp_path / f"u{i}.mel.ftr"), mel, 50.0)
        formats.write_features(str(tmp_path / f"u{i}.w2v.ftr"), feats, 50.0)
        lines.append(f"u{i}\tspk0\tmel=u{i}.mel.ftr\tfeatures=u{i}.w2v.ftr")
    manifest = tmp_path / "m.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    out = tmp_path / "enc.ckp"
    rc = cli.main(["distill", str(manifest), str(out), "--window", "1",
                   "--hidden", "", "--epochs", "400", "--lr", "3e-2"])
    assert rc == 0
    assert "heldout r2 mean" in capsys.readouterr().out
    pred = distill.encoder_forward(str(out), pairs[0][0])
    assert np.max(np.abs(pred - pairs[0][1])) < 0.1


def test_distill_without_pairs_is_usage_error(tmp_path, capsys):
    manifest = tmp_path / "m.tsv"
    manifest.write_text("u0\tspk0\n")
    rc = cli.main(["distill", str(manifest), str(tmp_path / "enc.ckp")])
    assert rc == 2
    assert "mel=" in capsys.readouterr().err


def test_bad_manifest_is_runtime_error(tmp_path, capsys):
    manifest = tmp_path / "m.tsv"
    manifest.write_text("only-one-column\n")
    rc = cli.main(["distill", str(manifest), str(tmp_path / "enc.ckp")])
    assert rc == 1
    assert "error" in capsys.readouterr().err
