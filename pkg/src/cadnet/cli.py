"""``cadnet`` command line: synth, train, predict, eval and split.

Option values resolve as built-in default < ``--config`` JSON < explicit
flag. The config file is a flat JSON object; a nested object named after
the subcommand overrides the flat keys for that subcommand only.

Exit codes: 0 success, 2 usage, 3 I/O or data, 4 numerical failure.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .dataset import load_manifest, write_manifest
from .evaluation import SplitSpec, evaluate, filter_unseen_teachers, make_split
from .exceptions import AucUndefinedError, CadError, NumericalError
from .model import load_embeddings, predict_segments, recording_inputs
from .nn import VARIANTS
from .synth import PRESETS, ScenarioConfig, generate_corpus
from .training import (FORMAT_VERSION, TrainConfig, featurize_manifest, load_checkpoint,
                       save_checkpoint, train)

logger = logging.getLogger("cadnet")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
PREDICT_VERSION = 1
SPLIT_VERSION = 1

DEFAULTS = {
    "synth": {"out": None, "n": 10, "mode": "online", "seed": 0, "duration": None,
              "enrollment_sec": None, "overlap_prob": None, "snr_db": None,
              "teacher_reuse": None, "n_students": None},
    "train": {"manifest": None, "val_manifest": None, "variant": "gru", "out": None,
              "log": None, "seed": 0, "epochs": 30, "lr": 0.05, "batch_size": 8,
              "clip_norm": 5.0, "raw_dim": 64, "embeddings": None, "window_frames": 40,
              "positional": True, "enrollment_vad": True},
    "predict": {"manifest": None, "ckpt": None, "out": None, "threshold": 0.5,
                "embeddings": None, "seed": 0},
    "eval": {"manifest": None, "ckpt": None, "split": "main", "out": None,
             "embeddings": None, "seed": 0},
    "split": {"manifest": None, "out_dir": None, "mode": "main", "test_fraction": 0.2,
              "seed": 0},
}
REQUIRED = {"synth": ["out"], "train": ["manifest", "out"], "predict": ["manifest", "ckpt", "out"],
            "eval": ["manifest", "ckpt"], "split": ["manifest", "out_dir"]}


class UsageError(Exception):
    pass


def _common(parser):
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    parser.add_argument("--config", default=argparse.SUPPRESS,
                        help="JSON file merged under the command-line flags")
    parser.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    _common(common)
    p = argparse.ArgumentParser(prog="cadnet", parents=[common],
                                description="Siamese teacher/student activity detection.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    s.add_argument("--out", default=S, help="output directory")
    s.add_argument("--n", type=int, default=S, help="number of recordings")
    s.add_argument("--mode", choices=sorted(PRESETS), default=S)
    s.add_argument("--duration", type=float, default=S, help="recording length in seconds")
    s.add_argument("--enrollment-sec", type=float, default=S)
    s.add_argument("--overlap-prob", type=float, default=S)
    s.add_argument("--snr-db", type=float, default=S)
    s.add_argument("--teacher-reuse", type=float, default=S)
    s.add_argument("--n-students", type=int, default=S)

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--manifest", default=S, help="training manifest (JSONL)")
    t.add_argument("--val-manifest", default=S)
    t.add_argument("--variant", choices=VARIANTS, default=S)
    t.add_argument("--out", default=S, help="checkpoint path")
    t.add_argument("--log", default=S, help="epoch log path (default: <out>.log.jsonl)")
    t.add_argument("--epochs", type=int, default=S)
    t.add_argument("--lr", type=float, default=S)
    t.add_argument("--batch-size", type=int, default=S)
    t.add_argument("--clip-norm", type=float, default=S)
    t.add_argument("--raw-dim", type=int, default=S)
    t.add_argument("--embeddings", default=S, help="external window embeddings (JSON)")
    t.add_argument("--window-frames", type=int, default=S)
    t.add_argument("--no-positional", dest="positional", action="store_false", default=S)
    t.add_argument("--no-enrollment-vad", dest="enrollment_vad", action="store_false",
                   default=S)

    r = sub.add_parser("predict", parents=[common], help="per-window teacher probabilities")
    r.add_argument("--manifest", default=S)
    r.add_argument("--ckpt", default=S)
    r.add_argument("--out", default=S, help="CSV path")
    r.add_argument("--threshold", type=float, default=S)
    r.add_argument("--embeddings", default=S)

    e = sub.add_parser("eval", parents=[common], help="ROC-AUC report")
    e.add_argument("--manifest", default=S)
    e.add_argument("--ckpt", default=S)
    e.add_argument("--split", choices=("main", "generalization"), default=S)
    e.add_argument("--out", default=S, help="report JSON path")
    e.add_argument("--embeddings", default=S)

    x = sub.add_parser("split", parents=[common], help="write train/test manifests")
    x.add_argument("--manifest", default=S)
    x.add_argument("--out-dir", default=S)
    x.add_argument("--mode", choices=("main", "generalization"), default=S)
    x.add_argument("--test-fraction", type=float, default=S)
    return p


def _read_config(path):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON config ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return obj


def resolve_options(command, cli, config=None):
    """Merge defaults, config-file values and explicit flags for ``command``."""
    known = set().union(*(d.keys() for d in DEFAULTS.values())) | set(DEFAULTS)
    opts = dict(DEFAULTS[command])
    if config:
        for key in config:
            if key.replace("-", "_") not in known | {"quiet"}:
                raise UsageError(f"unknown config key {key!r}")
        flat = {k.replace("-", "_"): v for k, v in config.items() if not isinstance(v, dict)}
        section = {k.replace("-", "_"): v for k, v in config.get(command, {}).items()}
        for src in (flat, section):
            opts.update({k: v for k, v in src.items() if k in DEFAULTS[command]})
    opts.update({k: v for k, v in cli.items() if k in DEFAULTS[command]})
    missing = [k for k in REQUIRED[command] if opts.get(k) is None]
    if missing:
        raise UsageError(f"{command}: missing required option(s) "
                         + ", ".join("--" + m.replace("_", "-") for m in missing))
    return opts


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- subcommands ------------------------------------------------------------

def cmd_synth(opts):
    overrides = {"n_recordings": opts["n"], "seed": opts["seed"]}
    for key, field_name in (("duration", "duration_sec"), ("enrollment_sec", "enrollment_sec"),
                            ("overlap_prob", "overlap_prob"), ("snr_db", "snr_db"),
                            ("teacher_reuse", "teacher_reuse"), ("n_students", "n_students")):
        if opts[key] is not None:
            overrides[field_name] = opts[key]
    config = ScenarioConfig.preset(opts["mode"], **overrides)
    manifest = generate_corpus(config, opts["out"])
    logger.info("wrote %d recordings to %s", config.n_recordings, manifest)
    return EXIT_OK


def train_config(opts):
    return TrainConfig(lr=opts["lr"], batch_size=opts["batch_size"], epochs=opts["epochs"],
                       clip_norm=opts["clip_norm"], seed=opts["seed"], variant=opts["variant"],
                       train_manifest=str(opts["manifest"]),
                       val_manifest=None if opts["val_manifest"] is None
                       else str(opts["val_manifest"]),
                       raw_dim=opts["raw_dim"],
                       raw_mode="external" if opts["embeddings"] else "stats_affine",
                       embeddings=opts["embeddings"], window_frames=opts["window_frames"],
                       positional=bool(opts["positional"]),
                       enrollment_vad=bool(opts["enrollment_vad"]))


def cmd_train(opts):
    if opts["variant"] not in VARIANTS:
        raise UsageError(f"unknown variant {opts['variant']!r}; choose from {VARIANTS}")
    config = train_config(opts)
    log_path = Path(opts["log"] or str(opts["out"]) + ".log.jsonl")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w") as log:
        log.write(json.dumps({"format_version": FORMAT_VERSION, "config": config.to_dict()},
                             sort_keys=True) + "\n")

        def on_epoch(record):
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()

        ckpt = train(config, on_epoch=on_epoch)
    Path(opts["out"]).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, opts["out"])
    logger.info("saved checkpoint %s (best epoch %d)", opts["out"], ckpt.best_epoch)
    return EXIT_OK


def _load_for_inference(opts):
    ckpt = load_checkpoint(opts["ckpt"])
    emb_path = opts["embeddings"] or ckpt.config.embeddings
    embeddings = load_embeddings(emb_path) if emb_path else None
    records = load_manifest(opts["manifest"])
    return ckpt, embeddings, records


def cmd_predict(opts):
    if not 0.0 <= opts["threshold"] <= 1.0:
        raise UsageError("--threshold must be in [0, 1]")
    ckpt, embeddings, records = _load_for_inference(opts)
    feats_all = featurize_manifest(opts["manifest"], ckpt.config, require_labels=False)
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    n_rows = 0
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recording_id", "start_sec", "end_sec", "p_teacher", "label_at_threshold"])
        for feats in feats_all:
            enroll, segs = recording_inputs(feats, ckpt.model, embeddings)
            for seg, (_, p) in zip(feats.segments, predict_segments(enroll, segs, ckpt.model)):
                for (lo, hi), pi in zip(seg.spans, p):
                    w.writerow([feats.recording_id, f"{lo:.3f}", f"{hi:.3f}", repr(float(pi)),
                                int(pi >= opts["threshold"])])
                    n_rows += 1
    _write_json(str(out) + ".meta.json", {
        "format_version": PREDICT_VERSION,
        "config": {**_echo(opts), "checkpoint_config": ckpt.config.to_dict()},
        "n_rows": n_rows,
    })
    logger.info("wrote %d window predictions to %s", n_rows, out)
    return EXIT_OK


def cmd_eval(opts):
    ckpt, embeddings, records = _load_for_inference(opts)
    feats = featurize_manifest(opts["manifest"], ckpt.config)
    extra = {"config": {**_echo(opts), "checkpoint_config": ckpt.config.to_dict()}}
    if opts["split"] == "generalization":
        keep = {r.recording_id for r in filter_unseen_teachers(records, ckpt.train_teacher_ids)}
        excluded = sorted(f.recording_id for f in feats if f.recording_id not in keep)
        feats = [f for f in feats if f.recording_id in keep]
        if not feats:
            raise UsageError("generalization split is empty: every teacher in the manifest "
                             "appears in the checkpoint's training data")
        extra.update({"teacher_disjoint": True, "excluded_recordings": excluded,
                      "train_teacher_ids": sorted(ckpt.train_teacher_ids)})
    report = evaluate(ckpt.model, feats, opts["split"], str(opts["ckpt"]), embeddings)
    report.extra.update(extra)
    if opts["out"]:
        _write_json(opts["out"], report.to_json())
    print(f"pooled AUC {report.auc:.4f}")
    return EXIT_OK


def cmd_split(opts):
    records = load_manifest(opts["manifest"])
    spec = SplitSpec(opts["mode"], opts["seed"], opts["test_fraction"])
    try:
        train_recs, test_recs = make_split(records, spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "train.jsonl", train_recs)
    write_manifest(out / "test.jsonl", test_recs)
    _write_json(out / "split.json", {
        "format_version": SPLIT_VERSION, "config": _echo(opts),
        "train_ids": spec.train_ids, "test_ids": spec.test_ids,
        "train_teachers": sorted(spec.train_teachers),
        "test_teachers": sorted(spec.test_teachers)})
    logger.info("split %d train / %d test recordings", len(train_recs), len(test_recs))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "predict": cmd_predict,
            "eval": cmd_eval, "split": cmd_split}


def _echo(opts):
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(opts.items())}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    cli = vars(args)
    command = cli.pop("command")
    quiet = cli.pop("quiet", False)
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config = _read_config(cli.pop("config")) if "config" in cli else None
        if config and config.get("quiet") and not quiet:
            logging.getLogger().setLevel(logging.WARNING)
        opts = resolve_options(command, cli, config)
        return COMMANDS[command](opts)
    except UsageError as exc:
        print(f"cadnet {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, AucUndefinedError, FloatingPointError) as exc:
        print(f"cadnet {command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CadError) as exc:
        print(f"cadnet {command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"cadnet {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
