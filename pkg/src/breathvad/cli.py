"""Command line front end for the whole pipeline.

Each subcommand reads and writes the file formats defined by the library
modules, derives its stage seeds from one master seed, and records its
effective configuration next to its outputs so any run can be replayed
bit-exactly. Option precedence: explicit flags over --config file entries
over built-in defaults.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import config as cfgmod
from . import dataset as ds
from . import flow
from . import metrics as mx
from . import models as md
from . import respiration as resp
from . import synth
from . import video_io

DEFAULTS: dict[str, dict] = {
    "synth-video": {
        "out_dir": "", "width": 64, "height": 64, "frames": 900, "fps": 30.0,
        "freq": 0.2, "amplitude": 1.5, "texture_scale": 3.0, "noise": 0.005,
        "seed": 0,
    },
    "synth-rp": {
        "out": "", "speakers": 32, "duration": 40.0, "fps": 10.0,
        "freq_lo": 0.15, "freq_hi": 0.4, "episodes": 3,
        "episode_min": 2.0, "episode_max": 9.0, "distortion": 1.0,
        "noise": 0.02, "seed": 0,
    },
    "extract-rp": {
        "manifest": "", "out": "", "eps": flow.DEFAULT_EPS,
        "tol": resp.DEFAULT_TOL, "max_iter": resp.DEFAULT_MAX_ITER,
        "band_lo": resp.DEFAULT_LOW_BPM, "band_hi": resp.DEFAULT_HIGH_BPM,
        "raw": False, "dump_flow": "", "seed": 0,
    },
    "make-dataset": {
        "out": "", "dataset": "", "item": [], "fps": 10.0,
        "n_splits": 4, "splits_out": "", "seed": 0,
    },
    "train": {
        "dataset": "", "fps": 10.0, "splits": "", "fold": 0,
        "arch": "convlstm", "mode": ds.MODE_OVERLAP, "width": md.DEFAULT_WIDTH,
        "epochs": 50, "batch_size": 32, "lr": 1e-3,
        "w_pos": None, "w_neg": None, "max_batches": None,
        "out": "", "seed": 0,
    },
    "predict": {
        "checkpoint": "", "rp": "", "dataset": "", "speaker": "", "fps": 10.0,
        "mode": ds.MODE_OVERLAP, "out": "", "seed": 0,
    },
    "eval": {
        "pred": "", "manifest": "", "dataset": "", "speaker": "", "fps": 10.0,
        "threshold": mx.DEFAULT_THRESHOLD,
        "match_window": mx.DEFAULT_MATCH_WINDOW_S,
        "model": "?", "mode": "?", "split": "?", "out_dir": "", "seed": 0,
    },
    "report": {
        "inputs": [], "out": "", "seed": 0,
    },
}

# keys whose value may be "none" (optional numbers)
_OPTIONAL_TYPES = {"w_pos": float, "w_neg": float, "max_batches": int}


def _coerce(key: str, text: str, default):
    if key in _OPTIONAL_TYPES:
        if text.lower() in ("none", ""):
            return None
        return _OPTIONAL_TYPES[key](text)
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, list):
        raise ValueError(f"{key} cannot be set from a config file")
    return text


def _effective(command: str, args: argparse.Namespace) -> dict:
    eff = {k: (list(v) if isinstance(v, list) else v) for k, v in DEFAULTS[command].items()}
    path = getattr(args, "config", None)
    if path:
        for key, text in cfgmod.read_kv(path).items():
            if key not in eff:
                raise ValueError(f"config key {key!r} unknown for {command}")
            eff[key] = _coerce(key, text, DEFAULTS[command][key])
    for key, value in vars(args).items():
        if key in ("command", "config"):
            continue
        eff[key] = value
    return eff


def _fmt_cfg(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ";".join(str(v) for v in value)
    return str(value)


def _write_run_config(eff: dict, command: str, path: str, extra: dict | None = None) -> None:
    record = {"command": command}
    record.update({k: _fmt_cfg(v) for k, v in eff.items()})
    if extra:
        record.update({k: _fmt_cfg(v) for k, v in extra.items()})
    cfgmod.write_kv(record, path)


def _require(eff: dict, *keys: str) -> None:
    for key in keys:
        if eff[key] in ("", []):
            raise ValueError(f"missing required option --{key.replace('_', '-')}")


def _series_csv(values: np.ndarray, fps: float, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,time_s,value\n")
        for i, v in enumerate(values):
            fh.write(f"{i},{i / fps:.9g},{float(v)!r}\n")


def _cmd_synth_video(eff: dict) -> None:
    _require(eff, "out_dir")
    sub_seed = cfgmod.derive_seed(eff["seed"], "synth_video")
    p = synth.SynthVideoParams(
        width=eff["width"], height=eff["height"], n_frames=eff["frames"],
        fps=eff["fps"], amplitude_px=eff["amplitude"], freq_hz=eff["freq"],
        texture_scale=eff["texture_scale"], noise_sigma=eff["noise"],
        seed=sub_seed,
    )
    seq, d = synth.synth_video(p)
    out_dir = eff["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    video_io.write_frames(seq, out_dir)
    manifest = video_io.Manifest(
        frame_source=video_io.frame_pattern(), width=p.width, height=p.height,
        fps=p.fps, speech_intervals=[], root=out_dir,
    )
    video_io.write_manifest(manifest, os.path.join(out_dir, "manifest.txt"))
    _series_csv(d, p.fps, os.path.join(out_dir, "displacement.csv"))
    _write_run_config(eff, "synth-video", os.path.join(out_dir, "run_config.txt"),
                      {"seed_synth_video": sub_seed})


def _cmd_synth_rp(eff: dict) -> None:
    _require(eff, "out")
    sub_seed = cfgmod.derive_seed(eff["seed"], "synth_rp")
    p = synth.SynthRPParams(
        n_speakers=eff["speakers"], duration_s=eff["duration"], fps=eff["fps"],
        freq_range_hz=(eff["freq_lo"], eff["freq_hi"]),
        episode_count=eff["episodes"],
        episode_duration_range_s=(eff["episode_min"], eff["episode_max"]),
        distortion=eff["distortion"], noise_sigma=eff["noise"], seed=sub_seed,
    )
    sequences = synth.synth_rp_dataset(p)
    ds.write_dataset_csv(sequences, eff["out"])
    _write_run_config(eff, "synth-rp", eff["out"] + ".run_config.txt",
                      {"seed_synth_rp": sub_seed})


def _cmd_extract_rp(eff: dict) -> None:
    _require(eff, "manifest", "out")
    manifest = video_io.read_manifest(eff["manifest"])
    seq = video_io.load_frames(manifest)
    matrix = flow.build_flow_matrix(seq, eps=eff["eps"])
    if eff["dump_flow"]:
        flow.write_matrix(matrix, eff["dump_flow"])
    sub_seed = cfgmod.derive_seed(eff["seed"], "power_iteration")
    pattern = resp.extract_rp(
        matrix, fps=seq.fps, tol=eff["tol"], max_iter=eff["max_iter"], seed=sub_seed,
    )
    if not eff["raw"]:
        pattern = resp.bandpass(pattern, low_bpm=eff["band_lo"], high_bpm=eff["band_hi"])
    resp.write_rp_csv(pattern, eff["out"])
    _write_run_config(eff, "extract-rp", eff["out"] + ".run_config.txt",
                      {"seed_power_iteration": sub_seed})


def _load_item_sequences(items: list[str]) -> list[ds.LabeledSequence]:
    sequences = []
    for item in items:
        parts = item.split(",")
        if len(parts) != 3:
            raise ValueError(f"--item wants RP_CSV,MANIFEST,SPEAKER_ID, got {item!r}")
        rp_path, manifest_path, speaker = (p.strip() for p in parts)
        pattern = resp.read_rp_csv(rp_path)
        manifest = video_io.read_manifest(manifest_path)
        labels = ds.label_from_intervals(manifest.speech_intervals, len(pattern), pattern.fps)
        sequences.append(ds.LabeledSequence(rp=pattern, labels=labels, speaker_id=speaker))
    return sequences


def _cmd_make_dataset(eff: dict) -> None:
    if eff["item"]:
        _require(eff, "out")
        sequences = _load_item_sequences(eff["item"])
        ds.write_dataset_csv(sequences, eff["out"])
        anchor = eff["out"]
    elif eff["dataset"]:
        sequences = ds.read_dataset_csv(eff["dataset"], fps=eff["fps"])
        anchor = eff["dataset"]
    else:
        raise ValueError("need --item entries or an existing --dataset")

    extra: dict = {}
    if eff["splits_out"]:
        sub_seed = cfgmod.derive_seed(eff["seed"], "split_speakers")
        partitions = ds.split_speakers(sequences, eff["n_splits"], seed=sub_seed)
        ds.write_splits(partitions, eff["splits_out"])
        extra["seed_split_speakers"] = sub_seed
    _write_run_config(eff, "make-dataset", anchor + ".run_config.txt", extra)


def _train_sequences(eff: dict) -> list[ds.LabeledSequence]:
    sequences = ds.read_dataset_csv(eff["dataset"], fps=eff["fps"])
    if eff["splits"]:
        folds = ds.read_splits(eff["splits"])
        if not 0 <= eff["fold"] < len(folds):
            raise ValueError(f"fold {eff['fold']} out of range for {len(folds)} folds")
        train_part, _ = ds.partitions_from_folds(sequences, folds)[eff["fold"]]
        return train_part
    return sequences


def _cmd_train(eff: dict) -> None:
    _require(eff, "dataset", "out")
    if eff["arch"] not in md.ARCHS:
        raise ValueError(f"unknown arch {eff['arch']!r}, expected one of {md.ARCHS}")
    train_part = _train_sequences(eff)
    if not train_part:
        raise ValueError("training partition is empty")
    chunk_sets = [ds.chunk(s, eff["width"], eff["mode"]) for s in train_part]

    build_seed = cfgmod.derive_seed(eff["seed"], "build_model")
    train_seed = cfgmod.derive_seed(eff["seed"], "train")
    model = md.build_model(md.ModelSpec(arch=eff["arch"], width=eff["width"]), seed=build_seed)
    cfg = md.TrainConfig(
        epochs=eff["epochs"], batch_size=eff["batch_size"], lr=eff["lr"],
        seed=train_seed, w_pos=eff["w_pos"], w_neg=eff["w_neg"],
        chunk_mode=eff["mode"], max_batches_per_epoch=eff["max_batches"],
    )
    model, history = md.train(model, chunk_sets, cfg)
    md.save_model(model, eff["out"])
    with open(eff["out"] + ".history.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(history):
            fh.write(f"{epoch},{loss!r}\n")
    _write_run_config(eff, "train", eff["out"] + ".run_config.txt",
                      {"seed_build_model": build_seed, "seed_train": train_seed})


def _single_speaker(eff: dict) -> ds.LabeledSequence:
    sequences = ds.read_dataset_csv(eff["dataset"], fps=eff["fps"])
    for seq in sequences:
        if seq.speaker_id == eff["speaker"]:
            return seq
    raise ValueError(f"speaker {eff['speaker']!r} not in {eff['dataset']}")


def _cmd_predict(eff: dict) -> None:
    _require(eff, "checkpoint", "out")
    model = md.load_model(eff["checkpoint"])
    if eff["rp"]:
        pattern = resp.read_rp_csv(eff["rp"])
    elif eff["dataset"] and eff["speaker"]:
        pattern = _single_speaker(eff).rp
    else:
        raise ValueError("need --rp, or --dataset with --speaker")
    probs = md.predict_sequence(model, pattern, eff["mode"])
    md.write_predictions(probs, pattern.fps, eff["out"])
    _write_run_config(eff, "predict", eff["out"] + ".run_config.txt")


def _eval_labels(eff: dict, n: int, fps: float) -> np.ndarray:
    if eff["manifest"]:
        manifest = video_io.read_manifest(eff["manifest"])
        return ds.label_from_intervals(manifest.speech_intervals, n, fps)
    if eff["dataset"] and eff["speaker"]:
        labels = _single_speaker(eff).labels
        if labels.shape[0] != n:
            raise ValueError(f"labels length {labels.shape[0]} != predictions {n}")
        return labels
    raise ValueError("need --manifest, or --dataset with --speaker")


def _cmd_eval(eff: dict) -> None:
    _require(eff, "pred", "out_dir")
    probs, binary, fps = md.read_predictions(eff["pred"])
    labels = _eval_labels(eff, probs.shape[0], fps)
    m = mx.metrics(probs, labels, threshold=eff["threshold"])
    errors = mx.transition_errors(binary, labels, fps, match_window_s=eff["match_window"])

    out_dir = eff["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    context = {"model": eff["model"], "mode": eff["mode"], "split": eff["split"]}
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(mx.format_eval_report(m, errors, context))
    if m.auroc is not None:  # curves need both classes
        mx.export_curves(
            probs, labels,
            os.path.join(out_dir, "roc.csv"), os.path.join(out_dir, "pr.csv"),
        )
    mx.write_transition_csv(errors, os.path.join(out_dir, "transitions.csv"))
    _write_run_config(eff, "eval", os.path.join(out_dir, "run_config.txt"))


def _cmd_report(eff: dict) -> None:
    _require(eff, "inputs", "out")
    reports = [cfgmod.read_kv(path) for path in eff["inputs"]]
    with open(eff["out"], "w", encoding="utf-8") as fh:
        fh.write(mx.aggregate_reports(reports))
    _write_run_config(eff, "report", eff["out"] + ".run_config.txt")


_HANDLERS = {
    "synth-video": _cmd_synth_video,
    "synth-rp": _cmd_synth_rp,
    "extract-rp": _cmd_extract_rp,
    "make-dataset": _cmd_make_dataset,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def _add(sub, command: str, text: str):
    p = sub.add_parser(command, help=text, description=text,
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="key=value file; flags override it")
    return p


def _opt(parser, command: str, key: str, help_text: str, **kwargs):
    flag = "--" + key.replace("_", "-")
    default = DEFAULTS[command][key]
    if key in _OPTIONAL_TYPES:
        kwargs.setdefault("type", _OPTIONAL_TYPES[key])
        shown = "none"
    elif isinstance(default, bool):
        kwargs.setdefault("action", "store_true")
        shown = "off"
    elif isinstance(default, (int, float)):
        kwargs.setdefault("type", type(default))
        shown = repr(default)
    else:
        shown = default if default else "required"
    parser.add_argument(flag, help=f"{help_text} (default: {shown})", **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="breathvad",
        description="Voice activity detection from video-derived respiration patterns.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = _add(sub, "synth-video", "generate a synthetic breathing video plus manifest")
    _opt(p, "synth-video", "out_dir", "output directory for frames and manifest")
    _opt(p, "synth-video", "width", "frame width in pixels")
    _opt(p, "synth-video", "height", "frame height in pixels")
    _opt(p, "synth-video", "frames", "number of frames")
    _opt(p, "synth-video", "fps", "frame rate")
    _opt(p, "synth-video", "freq", "breathing frequency in Hz")
    _opt(p, "synth-video", "amplitude", "displacement amplitude in pixels")
    _opt(p, "synth-video", "texture_scale", "texture smoothing radius in pixels")
    _opt(p, "synth-video", "noise", "per-pixel gaussian noise sigma")
    _opt(p, "synth-video", "seed", "master seed")

    p = _add(sub, "synth-rp", "generate a labeled synthetic respiration dataset")
    _opt(p, "synth-rp", "out", "dataset CSV to write")
    _opt(p, "synth-rp", "speakers", "number of speakers")
    _opt(p, "synth-rp", "duration", "seconds per speaker")
    _opt(p, "synth-rp", "fps", "samples per second")
    _opt(p, "synth-rp", "freq_lo", "lowest breathing frequency in Hz")
    _opt(p, "synth-rp", "freq_hi", "highest breathing frequency in Hz")
    _opt(p, "synth-rp", "episodes", "speech episodes per speaker")
    _opt(p, "synth-rp", "episode_min", "shortest episode in seconds")
    _opt(p, "synth-rp", "episode_max", "longest episode in seconds")
    _opt(p, "synth-rp", "distortion", "speech distortion strength; 0 = null control")
    _opt(p, "synth-rp", "noise", "additive noise sigma")
    _opt(p, "synth-rp", "seed", "master seed")

    p = _add(sub, "extract-rp", "extract the respiration pattern from a video manifest")
    _opt(p, "extract-rp", "manifest", "video manifest to read")
    _opt(p, "extract-rp", "out", "RP CSV to write")
    _opt(p, "extract-rp", "eps", "gradient-energy floor in the flow normalization")
    _opt(p, "extract-rp", "tol", "power-iteration residual tolerance")
    _opt(p, "extract-rp", "max_iter", "power-iteration cap")
    _opt(p, "extract-rp", "band_lo", "band-pass low edge in breaths per minute")
    _opt(p, "extract-rp", "band_hi", "band-pass high edge in breaths per minute")
    _opt(p, "extract-rp", "raw", "skip the band-pass, write the raw pattern")
    _opt(p, "extract-rp", "dump_flow", "optional path for a binary flow-matrix dump")
    _opt(p, "extract-rp", "seed", "master seed")

    p = _add(sub, "make-dataset", "assemble a labeled dataset and speaker splits")
    _opt(p, "make-dataset", "out", "dataset CSV to write (with --item)")
    _opt(p, "make-dataset", "dataset", "existing dataset CSV to re-split")
    _opt(p, "make-dataset", "item", "RP_CSV,MANIFEST,SPEAKER_ID (repeatable)",
         action="append")
    _opt(p, "make-dataset", "fps", "sample rate of an existing dataset CSV")
    _opt(p, "make-dataset", "n_splits", "number of speaker-disjoint folds")
    _opt(p, "make-dataset", "splits_out", "split file to write")
    _opt(p, "make-dataset", "seed", "master seed")

    p = _add(sub, "train", "train one architecture on a dataset")
    _opt(p, "train", "dataset", "dataset CSV")
    _opt(p, "train", "fps", "dataset sample rate")
    _opt(p, "train", "splits", "split file; train on everything when omitted")
    _opt(p, "train", "fold", "which fold's training half to use")
    _opt(p, "train", "arch", "one of: " + ", ".join(md.ARCHS))
    _opt(p, "train", "mode", "chunking mode: overlap or non_overlap")
    _opt(p, "train", "width", "window width")
    _opt(p, "train", "epochs", "training epochs")
    _opt(p, "train", "batch_size", "minibatch size")
    _opt(p, "train", "lr", "learning rate")
    _opt(p, "train", "w_pos", "positive-class weight; derived when none")
    _opt(p, "train", "w_neg", "negative-class weight; derived when none")
    _opt(p, "train", "max_batches", "cap on minibatches per epoch")
    _opt(p, "train", "out", "checkpoint path to write")
    _opt(p, "train", "seed", "master seed")

    p = _add(sub, "predict", "score a respiration pattern with a checkpoint")
    _opt(p, "predict", "checkpoint", "model checkpoint")
    _opt(p, "predict", "rp", "RP CSV to score")
    _opt(p, "predict", "dataset", "dataset CSV to pull one speaker from")
    _opt(p, "predict", "speaker", "speaker id inside --dataset")
    _opt(p, "predict", "fps", "dataset sample rate")
    _opt(p, "predict", "mode", "chunking mode: overlap or non_overlap")
    _opt(p, "predict", "out", "prediction CSV to write")
    _opt(p, "predict", "seed", "master seed (recorded only)")

    p = _add(sub, "eval", "score predictions against labels")
    _opt(p, "eval", "pred", "prediction CSV")
    _opt(p, "eval", "manifest", "manifest supplying speech intervals as labels")
    _opt(p, "eval", "dataset", "dataset CSV supplying labels")
    _opt(p, "eval", "speaker", "speaker id inside --dataset")
    _opt(p, "eval", "fps", "dataset sample rate")
    _opt(p, "eval", "threshold", "probability threshold")
    _opt(p, "eval", "match_window", "transition match window in seconds")
    _opt(p, "eval", "model", "model tag recorded in the report")
    _opt(p, "eval", "mode", "mode tag recorded in the report")
    _opt(p, "eval", "split", "split tag recorded in the report")
    _opt(p, "eval", "out_dir", "directory for report.txt and curve CSVs")
    _opt(p, "eval", "seed", "master seed (recorded only)")

    p = _add(sub, "report", "aggregate eval reports into mean and std blocks")
    p.add_argument("inputs", nargs="*", help="eval report.txt files")
    _opt(p, "report", "out", "aggregate report to write")
    _opt(p, "report", "seed", "master seed (recorded only)")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = getattr(args, "command", None)
    if not command:
        parser.print_help()
        return 2
    try:
        eff = _effective(command, args)
        _HANDLERS[command](eff)
    except Exception as exc:  # surface the failing stage, exit nonzero
        print(f"breathvad {command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
