"""Command-line entry points: `ssl-exporter export` and
`ssl-exporter distill`."""

import argparse
import sys

import numpy as np

from . import distill, exporter, formats


def cmd_export(args):
    job = exporter.ExportJob(manifest=args.manifest, outdir=args.outdir,
                             layer=args.layer, model_id=args.model)
    written = exporter.export_features(job)
    print(f"wrote {len(written)} feature files to {args.outdir}")
    return 0


def cmd_distill(args):
    entries = formats.read_manifest(args.manifest)
    pairs = []
    for e in entries:
        if "mel" not in e or "features" not in e:
            continue
        mel, _, _ = formats.read_features(e["mel"])
        feats, _, _ = formats.read_features(e["features"])
        pairs.append((mel, feats))
    if not pairs:
        print("error: manifest has no rows with both mel= and features=",
              file=sys.stderr)
        return 2
    hidden = tuple(int(h) for h in args.hidden.split(",") if h)
    report = distill.distill_encoder(
        pairs, args.out, window=args.window, hidden_sizes=hidden,
        epochs=args.epochs, lr=args.lr, seed=args.seed)
    print(f"frames: {report.n_train} train / {report.n_val} heldout")
    print(f"heldout r2 mean {report.r2_mean:.4f} "
          f"min {float(np.min(report.r2_per_dim)):.4f}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="ssl-exporter")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="export per-layer wav2vec 2.0 features")
    p.add_argument("manifest")
    p.add_argument("outdir")
    p.add_argument("--layer", type=int, default=8)
    p.add_argument("--model", default=exporter.DEFAULT_MODEL)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("distill",
                       help="distill mel->embedding frozen encoder")
    p.add_argument("manifest")
    p.add_argument("out")
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--hidden", default="256")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_distill)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (exporter.ExportError, formats.FormatError,
            distill.AlignmentError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
