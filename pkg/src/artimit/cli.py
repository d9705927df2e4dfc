"""Command-line surface: every experiment is a sequence of subcommands over
manifests. Reports are CSV; exit codes are 0 (ok), 1 (runtime failure),
2 (usage/config error). Errors print one machine-parsable line
"<code>: <message>" on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys

import numpy as np

from . import artic, corpus, dsp, evaluation, imitation, store, synthesis
from .artic import GpcaStage, GuidedPcaSpec
from .dsp import FRAME_RATE, FeatureSequence
from .graph import DimensionError, NumericError
from .imitation import ImitationConfig
from .synthesis import AnalyticSynthesizer, CorpusConfig, SynthesizerNet


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "seed": int,
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "loss_space": str,
    "synth": str,
    "splits": str,
    "cap_per_contrast": int,
    "compensate_scale": lambda v: v.lower() in ("1", "true", "yes"),
    "n_speakers": int,
    "items_per_speaker": int,
}

_CONFIG_DEFAULTS = {
    "seed": 0,
    "epochs": 100,
    "batch_size": 8,
    "lr": 1.7e-3,
    "loss_space": "logmel80",
    "synth": "analytic",
    "splits": "80/10/10",
    "cap_per_contrast": 200,
    "compensate_scale": False,
    "n_speakers": 1,
    "items_per_speaker": 300,
}


def load_run_config(path=None):
    cfg = dict(_CONFIG_DEFAULTS)
    if path is None:
        return cfg
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            try:
                cfg[key] = _CONFIG_KEYS[key](value)
            except ValueError:
                raise ConfigError(
                    f"line {lineno}: bad value {value!r} for {key!r}") from None
    _validate_config(cfg)
    return cfg


def _validate_config(cfg):
    if cfg["lr"] <= 0:
        raise ConfigError("lr must be positive")
    if cfg["epochs"] < 0 or cfg["batch_size"] < 1:
        raise ConfigError("epochs must be >= 0 and batch_size >= 1")
    parse_splits(cfg["splits"])
    if not (cfg["synth"] == "analytic" or cfg["synth"].startswith("net:")):
        raise ConfigError(f"synth must be 'analytic' or 'net:<path>', "
                          f"got {cfg['synth']!r}")


def parse_splits(text):
    parts = text.split("/")
    if len(parts) != 3:
        raise ConfigError(f"splits must be three numbers like 80/10/10, got {text!r}")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"non-numeric split in {text!r}") from None
    total = sum(vals)
    if total <= 0:
        raise ConfigError("splits must sum to a positive number")
    return tuple(v / total for v in vals)


def make_synth(spec):
    if spec == "analytic":
        return AnalyticSynthesizer()
    if spec.startswith("net:"):
        _, _, tensors = store.read_checkpoint(spec[4:], "synthesizer_net")
        return SynthesizerNet.from_tensors(tensors)
    raise ConfigError(f"bad synthesizer spec {spec!r}")


def imitation_config(cfg):
    return ImitationConfig(
        lr=cfg["lr"], epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        seed=cfg["seed"], loss_space=cfg["loss_space"],
        splits=parse_splits(cfg["splits"]),
        compensate_scale=cfg["compensate_scale"])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_extract_features(args):
    w = store.read_wav(args.infile)
    if args.kind == "mfcc39":
        fs, _ = dsp.mfcc39(w)
    else:
        fs = dsp.logmel80(w)
    store.write_features(args.out, fs)
    return 0


def cmd_extract_source(args):
    w = store.read_wav(args.infile)
    track = dsp.extract_source(w)
    store.write_features(args.out,
                         FeatureSequence(track.frames, FRAME_RATE, "external"))
    return 0


def read_gpca_spec(path):
    """Stage file: PARAM <TAB> rule <TAB> comma-separated channels."""
    if path == "default":
        return artic.default_spec()
    stages = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise store.ParseError(f"line {lineno}: expected 3 fields")
            stages.append(GpcaStage(parts[0], parts[2].split(","), parts[1]))
    return GuidedPcaSpec(stages)


def cmd_fit_gpca(args):
    spec = read_gpca_spec(args.spec)
    entries = store.read_manifest(args.manifest)
    recordings = []
    for e in entries:
        if "ema" not in e:
            continue
        rec = store.read_ema(e["ema"])
        recordings.append(artic.resample_to_50hz(rec))
    if not recordings:
        raise ConfigError("manifest has no ema entries")
    names = recordings[0].channel_names
    data = np.concatenate([r.data for r in recordings], axis=0)
    model = artic.gpca_fit(artic.EmaRecording(names, data, 50.0), spec)
    store.write_checkpoint(args.out, "gpca_model", model.to_tensors(),
                           {"channel_names": model.channel_names})
    return 0


def cmd_apply_gpca(args):
    _, meta, tensors = store.read_checkpoint(args.ckpt, "gpca_model")
    model = artic.GuidedPcaModel.from_tensors(meta["channel_names"], tensors)
    rec = artic.resample_to_50hz(store.read_ema(args.infile))
    traj = artic.gpca_encode(rec, model)
    store.write_features(args.out,
                         FeatureSequence(traj.frames, FRAME_RATE, "external"))
    return 0


def cmd_gen_synthetic(args):
    cfg = load_run_config(args.config)
    corpus_cfg = CorpusConfig(n_speakers=cfg["n_speakers"],
                              items_per_speaker=cfg["items_per_speaker"])
    utterances = synthesis.generate_corpus(corpus_cfg, args.seed)
    manifest = corpus.write_corpus(utterances, args.outdir)
    print(manifest)
    return 0


def cmd_train_synth(args):
    cfg = load_run_config(args.config)
    utterances = corpus.load_corpus(args.manifest)
    pairs = [(u.trajectory.frames, u.source.frames, u.logmel)
             for u in utterances]
    train_cfg = synthesis.SynthTrainConfig(
        lr=cfg["lr"] if args.config else 5e-4,
        epochs=cfg["epochs"] if args.config else 200,
        seed=cfg["seed"])
    net, history = synthesis.train_synthesizer(pairs, train_cfg)
    store.write_checkpoint(args.out, "synthesizer_net", net.to_tensors(),
                           {"final_train_mse": history[-1][1],
                            "final_val_mse": history[-1][2]})
    print(f"final_train_mse={history[-1][1]:.6f} "
          f"final_val_mse={history[-1][2]:.6f}")
    return 0


def cmd_train_imitation(args):
    cfg = load_run_config(args.config)
    utterances = corpus.load_corpus(args.manifest)
    synth = make_synth(cfg["synth"])
    run = imitation.train_inverse(utterances, synth, imitation_config(cfg))
    meta = {"input_dim": run.model.input_dim,
            "loss_space": cfg["loss_space"],
            "compensate_scale": cfg["compensate_scale"],
            "split_ids": run.split_ids}
    store.write_checkpoint(args.out, "inverse_model",
                           run.model.to_tensors(), meta)
    if args.log:
        with open(args.log, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["epoch", "train_loss", "val_loss"])
            for row in run.log:
                wr.writerow([row[0], f"{row[1]:.8f}", f"{row[2]:.8f}"])
    print(f"final_train_loss={run.log[-1][1]:.6f} "
          f"final_val_loss={run.log[-1][2]:.6f}")
    return 0


def load_inverse(path):
    _, meta, tensors = store.read_checkpoint(path, "inverse_model")
    model = imitation.InverseModel.from_tensors(tensors, int(meta["input_dim"]))
    return model, meta


def cmd_infer(args):
    model, meta = load_inverse(args.ckpt)
    space = imitation.make_loss_space(meta.get("loss_space", "logmel80"))
    utterances = corpus.load_corpus(args.manifest)
    os.makedirs(args.outdir, exist_ok=True)
    for u in utterances:
        z = imitation.input_features_for(u, space,
                                         meta.get("compensate_scale", False))
        a_hat = model.forward_t(z).value
        store.write_features(
            os.path.join(args.outdir, u.utt_id + ".traj.ftr"),
            FeatureSequence(a_hat, FRAME_RATE, "external"))
        with open(os.path.join(args.outdir, u.utt_id + ".traj.csv"), "w",
                  newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["frame"] + list(artic.PARAM_NAMES))
            for t, row in enumerate(a_hat):
                wr.writerow([t] + [f"{v:.6f}" for v in row])
    return 0


def _traj_dir_map(d):
    out = {}
    for name in sorted(os.listdir(d)):
        if name.endswith(".traj.ftr"):
            out[name[:-len(".traj.ftr")]] = os.path.join(d, name)
    return out


def cmd_eval_corr(args):
    pred_map = _traj_dir_map(args.pred)
    truth_map = _traj_dir_map(args.truth)
    common = sorted(set(pred_map) & set(truth_map))
    if not common:
        raise ConfigError("no matching trajectory files between directories")
    preds = [store.read_features(pred_map[k]).frames for k in common]
    truths = [store.read_features(truth_map[k]).frames for k in common]
    rs, mean_r = evaluation.pearson_per_param(preds, truths)
    wr = csv.writer(sys.stdout)
    wr.writerow(["parameter", "r"])
    for name, r in zip(artic.PARAM_NAMES, rs):
        wr.writerow([name, f"{r:.6f}"])
    wr.writerow(["mean", f"{mean_r:.6f}"])
    return 0


def abx_representation(utterances, repr_kind, pred_dir=None):
    by_id = {u.utt_id: u for u in utterances}
    pred_map = _traj_dir_map(pred_dir) if pred_dir else {}

    def render(item):
        u = by_id[item.utt_id]
        if repr_kind == "features":
            return u.logmel[item.start:item.end]
        if repr_kind == "truth":
            return u.trajectory.frames[item.start:item.end]
        if repr_kind == "pred":
            frames = store.read_features(pred_map[item.utt_id]).frames
            return frames[item.start:item.end]
        raise ConfigError(f"unknown representation {repr_kind!r}")

    return render


def corpus_vcv_items(utterances):
    items = []
    for u in utterances:
        segs = [(s.label, s.place, s.manner, s.start, s.end) for s in u.segments]
        items.extend(evaluation.vcv_items_from_segments(u.utt_id, u.speaker, segs))
    return items


def cmd_eval_abx(args):
    cfg = load_run_config(args.config)
    utterances = corpus.load_corpus(args.manifest)
    items = corpus_vcv_items(utterances)
    mode = "within_speaker" if args.within_speaker else "across_context"
    triplets, skipped = evaluation.build_abx_triplets(
        items, mode, cap_per_contrast=cfg["cap_per_contrast"], seed=cfg["seed"])
    render = abx_representation(utterances, args.repr, args.pred)
    report = evaluation.abx_score(triplets, render)
    wr = csv.writer(sys.stdout)
    wr.writerow(["contrast_a", "contrast_b", "manner", "n", "score"])
    for (ca, cb, manner), (n, score) in sorted(report.per_contrast.items()):
        wr.writerow([ca, cb, manner, n, f"{score:.6f}"])
    wr.writerow(["overall", "", "", report.n_triplets, f"{report.overall:.6f}"])
    for key in skipped:
        print(f"# skipped contrast {key}", file=sys.stderr)
    return 0


def cmd_probe(args):
    cfg = load_run_config(args.config)
    utterances = corpus.load_corpus(args.manifest)
    rng = np.random.default_rng(cfg["seed"])
    order = rng.permutation(len(utterances))
    n_train = int(round(0.8 * len(utterances)))
    feats, labels = [], []
    for u in utterances:
        if args.target == "speaker":
            frame_labels = [u.speaker] * u.logmel.shape[0]
        else:
            frame_labels = [None] * u.logmel.shape[0]
            for s in u.segments:
                for t in range(s.start, min(s.end, len(frame_labels))):
                    frame_labels[t] = s.label
        feats.append(u.logmel)
        labels.append(frame_labels)
    train_X = np.concatenate([feats[i] for i in order[:n_train]])
    train_y = [l for i in order[:n_train] for l in labels[i]]
    test_X = np.concatenate([feats[i] for i in order[n_train:]])
    test_y = [l for i in order[n_train:] for l in labels[i]]
    keep = [i for i, l in enumerate(train_y) if l is not None]
    train_X, train_y = train_X[keep], [train_y[i] for i in keep]
    keep = [i for i, l in enumerate(test_y) if l is not None]
    test_X, test_y = test_X[keep], [test_y[i] for i in keep]
    model = evaluation.train_probe(train_X, train_y,
                                   evaluation.ProbeConfig(seed=cfg["seed"]))
    acc = evaluation.probe_accuracy(model, test_X, test_y)
    wr = csv.writer(sys.stdout)
    wr.writerow(["target", "n_train", "n_test", "accuracy"])
    wr.writerow([args.target, len(train_y), len(test_y), f"{acc:.6f}"])
    return 0


def cmd_wer(args):
    ref = store.read_transcript(args.ref)
    hyp = store.read_transcript(args.hyp)
    value = evaluation.wer(ref, hyp)
    print(f"{value:.6g}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="artimit",
        description="Acoustic-to-articulatory imitation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("extract-features", help="Deterministic DSP features "
                        "from a 16 kHz mono wav")
    sp.add_argument("--in", dest="infile", required=True, help="input wav")
    sp.add_argument("--kind", choices=["mfcc39", "logmel80"], required=True)
    sp.add_argument("--out", required=True, help="output feature file")
    sp.set_defaults(fn=cmd_extract_features)

    sp = sub.add_parser("extract-source", help="Pitch period/harmonicity track")
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_extract_source)

    sp = sub.add_parser("fit-gpca", help="Fit guided PCA on manifest EMA data")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--spec", required=True,
                    help="stage TSV file, or 'default'")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_fit_gpca)

    sp = sub.add_parser("apply-gpca", help="EMA file -> trajectory file")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_apply_gpca)

    sp = sub.add_parser("gen-synthetic", help="Generate a synthetic VCV corpus")
    sp.add_argument("--config", default=None, help="run config file")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--outdir", required=True)
    sp.set_defaults(fn=cmd_gen_synthetic)

    sp = sub.add_parser("train-synth", help="Train the feedforward synthesizer")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train_synth)

    sp = sub.add_parser("train-imitation", help="Train the inverse model")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log", default=None, help="per-epoch CSV log")
    sp.set_defaults(fn=cmd_train_imitation)

    sp = sub.add_parser("infer", help="Write predicted trajectories")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--outdir", required=True)
    sp.set_defaults(fn=cmd_infer)

    sp = sub.add_parser("eval-corr", help="Per-parameter Pearson correlation")
    sp.add_argument("--pred", required=True, help="directory of .traj.ftr files")
    sp.add_argument("--truth", required=True)
    sp.set_defaults(fn=cmd_eval_corr)

    sp = sub.add_parser("eval-abx", help="Place-of-articulation ABX")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--repr", choices=["features", "pred", "truth"],
                    required=True)
    sp.add_argument("--pred", default=None,
                    help="trajectory directory for --repr pred")
    sp.add_argument("--within-speaker", action="store_true")
    sp.add_argument("--config", default=None)
    sp.set_defaults(fn=cmd_eval_abx)

    sp = sub.add_parser("probe", help="Frame-level linear probe")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--target", choices=["phone", "speaker"], required=True)
    sp.add_argument("--config", default=None)
    sp.set_defaults(fn=cmd_probe)

    sp = sub.add_parser("wer", help="Word error rate between transcripts")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--hyp", required=True)
    sp.set_defaults(fn=cmd_wer)

    return p


_USAGE_ERRORS = (ConfigError, store.ParseError, artic.SchemaError)
_RUNTIME_ERRORS = (store.FormatError, DimensionError, NumericError,
                   dsp.InputTooShortError, dsp.NormalizationError,
                   artic.UnsupportedRateError, artic.DegenerateStageError,
                   evaluation.UndefinedCorrelationError,
                   evaluation.UndefinedWerError,
                   evaluation.LabelCoverageError,
                   imitation.ContractError, imitation.DivergenceError,
                   synthesis.DivergenceError,
                   FileNotFoundError, ValueError, RuntimeError, KeyError)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _USAGE_ERRORS as e:
        print(f"E_CONFIG: {e}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as e:
        print(f"E_RUNTIME: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
