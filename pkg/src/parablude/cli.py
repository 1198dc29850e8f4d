"""Command-line front end for the whole pipeline.

Commands:
  synth      render a labelled synthetic corpus from a spec or preset
  featurize  turn one WAV into a spectrogram CSV
  train      fit the classifier on a manifest, write a checkpoint
  eval       score a checkpoint against a manifest, emit a JSON report
  infer      classify a single WAV
  detect     stream samples through the detector, emit NDJSON events
  serve      host the TCP + WebSocket match service
  replay     rebuild a match from its event log, print the final state

Exit codes: 0 success, 1 usage error, 2 I/O failure, 3 invalid content.

Every run resolves its options from three layers (command defaults,
then a JSON config file, then explicit flags, later layers winning)
and prints ``config sha256 <hex>`` of the resolved set to stderr, so a
run is reproducible from that hash plus its input files.  The config
file comes from --config or the PMU_CONFIG environment variable; keys
under a top-level section named after the command apply to just that
command, other top-level keys apply to any command that knows them.

Machine output (CSV, JSON, NDJSON) goes to stdout; notes to stderr.
"""

from __future__ import annotations

import argparse
import asyncio
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import game, nn
from .audio import WavError, downmix_mono, read_wav
from .detect import Detector, DetectorConfig, classify_window
from .dsp import FeatureConfig, SpectrogramConfig, features
from .evaluate import ReportMetadata, confusion, report, report_to_json
from .serve import ServiceConfig, run_service
from .train import (
    LabelSet,
    TrainConfig,
    TrainingDiverged,
    featurize_manifest,
    history_to_csv,
    load_checkpoint,
    manifest_from_rows,
    read_manifest,
    save_checkpoint,
    split_dataset,
    train_model,
    write_manifest,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_INVALID = 3

FEATURES_SIDECAR = "features.json"


class UsageError(Exception):
    """Missing or contradictory options, caught after config-file merging."""


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; the contract here reserves 2 for I/O."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_schedule(text: str) -> tuple[tuple[int, float], ...]:
    legs = []
    for part in text.split(","):
        steps, _, lr = part.partition(":")
        if not lr:
            raise argparse.ArgumentTypeError("expected STEPS:LR[,STEPS:LR...]")
        legs.append((int(steps), float(lr)))
    return tuple(legs)


def _parse_split(text: str) -> tuple[int, int, int]:
    parts = tuple(int(p) for p in text.split(","))
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated integers")
    return parts


def _parse_merge(text: str) -> dict[str, str]:
    sources, _, target = text.partition("=")
    target = target.strip()
    names = [s.strip() for s in sources.split(",") if s.strip()]
    if not target or not names:
        raise argparse.ArgumentTypeError("expected SRC[,SRC...]=TARGET")
    return {name: target for name in names}


def _read_text(path: str | Path) -> str:
    return Path(path).read_text(encoding="utf-8")


def _read_bytes(path: str | Path) -> bytes:
    return Path(path).read_bytes()


def _file_values(args: argparse.Namespace, known: set[str]) -> dict:
    """Pull this command's keys from the JSON config file, if any.

    Section keys must all be recognized; stray top-level keys are
    ignored so one flat file can serve several commands.
    """
    path = getattr(args, "config", None) or os.environ.get("PMU_CONFIG")
    if not path:
        return {}
    doc = json.loads(_read_text(path))
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    values = {k: v for k, v in doc.items() if k in known}
    section = doc.get(args.command)
    if section is not None:
        if not isinstance(section, dict):
            raise ValueError(f"config section {args.command!r} must be an object")
        unknown = set(section) - known
        if unknown:
            raise ValueError(
                f"config section {args.command!r} has unknown keys: {sorted(unknown)}"
            )
        values.update(section)
    return values


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    file_values = _file_values(args, known=set(defaults))
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_values:
            resolved[key] = file_values[key]
        else:
            resolved[key] = default
    return resolved


def _announce(command: str, resolved: dict) -> str:
    blob = json.dumps({"command": command, **resolved}, sort_keys=True, default=str)
    digest = hashlib.sha256(blob.encode("utf-8")).hexdigest()
    print(f"config sha256 {digest}", file=sys.stderr)
    return digest


def _write_output(text: str, path: str | None):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _feature_config(opts: dict) -> FeatureConfig:
    lowpass = opts["lowpass_hz"]
    if lowpass is not None and float(lowpass) <= 0:
        lowpass = None  # 0 switches the low-pass stage off
    fft = opts["fft_size"]
    spec = SpectrogramConfig(
        window_ms=float(opts["window_ms"]),
        hop_ms=float(opts["hop_ms"]),
        fft_size=None if not fft else int(fft),
        feature_bins=int(opts["feature_bins"]),
        log_floor=float(opts["log_floor"]),
    )
    return FeatureConfig(spectrogram=spec, lowpass_hz=lowpass)


_FEATURE_DEFAULTS = {
    "lowpass_hz": 252.0,
    "window_ms": 30.0,
    "hop_ms": 20.0,
    "fft_size": 0,
    "feature_bins": 40,
    "log_floor": 1e-6,
}


def _add_feature_flags(p: argparse.ArgumentParser):
    p.add_argument("--lowpass-hz", type=float, dest="lowpass_hz",
                   help="low-pass cutoff in Hz before the spectrogram; 0 disables the stage")
    p.add_argument("--window-ms", type=float, dest="window_ms",
                   help="analysis window length in milliseconds")
    p.add_argument("--hop-ms", type=float, dest="hop_ms",
                   help="hop between windows in milliseconds")
    p.add_argument("--fft-size", type=int, dest="fft_size",
                   help="FFT length; 0 picks the next power of two above the window")
    p.add_argument("--feature-bins", type=int, dest="feature_bins",
                   help="number of averaged frequency columns per frame")
    p.add_argument("--log-floor", type=float, dest="log_floor",
                   help="epsilon added before the log compression")


def _add_config_flag(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; flags override its values "
                                    "(PMU_CONFIG is the fallback path)")


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    defaults = {
        "spec": None,
        "preset": None,
        "clips_per_class": None,
        "out": None,
        "seed": 0,
    }
    opts = _resolve(args, defaults)
    _announce("synth", opts)

    if bool(opts["spec"]) == bool(opts["preset"]):
        raise UsageError("exactly one of --spec and --preset is required")
    if not opts["out"]:
        raise UsageError("--out directory is required")
    if opts["spec"]:
        spec = corpus_mod.CorpusSpec.from_json(_read_text(opts["spec"]))
    else:
        try:
            factory = corpus_mod.PRESETS[opts["preset"]]
        except KeyError:
            raise ValueError(
                f"unknown preset {opts['preset']!r}; choose from {sorted(corpus_mod.PRESETS)}"
            ) from None
        if opts["clips_per_class"] is not None:
            spec = factory(clips_per_class=int(opts["clips_per_class"]))
        else:
            spec = factory()

    out_dir = Path(opts["out"])
    rows = corpus_mod.generate_corpus(spec, out_dir, seed=int(opts["seed"]))
    label_set = LabelSet(classes=tuple(spec.labels), background=spec.background)
    manifest = manifest_from_rows(rows, label_set, base_dir=out_dir)
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest, manifest_path)
    feature_config = FeatureConfig(lowpass_hz=spec.lowpass_hz)
    (out_dir / FEATURES_SIDECAR).write_text(
        json.dumps(feature_config.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    print(json.dumps({
        "clips": len(rows),
        "classes": spec.labels,
        "manifest": str(manifest_path),
        "features": str(out_dir / FEATURES_SIDECAR),
    }))
    return EXIT_OK


# ------------------------------------------------------------ featurize

def cmd_featurize(args) -> int:
    defaults = {"in_path": None, "out": None, **_FEATURE_DEFAULTS}
    opts = _resolve(args, defaults)
    _announce("featurize", opts)
    if not opts["in_path"]:
        raise UsageError("--in WAV file is required")
    clip = downmix_mono(read_wav(_read_bytes(opts["in_path"])))
    spec = features(clip, _feature_config(opts))
    _write_output(spec.to_csv(), opts["out"])
    return EXIT_OK


# ---------------------------------------------------------------- train

def cmd_train(args) -> int:
    defaults = {
        "manifest": None,
        "out": None,
        "history": None,
        "seed": 0,
        "batch_size": 100,
        "eval_interval": 100,
        "schedule": ((12000, 0.001), (3000, 0.0001)),
        "scale": None,
        "split": (8, 1, 1),
        **_FEATURE_DEFAULTS,
    }
    # a features.json next to the manifest becomes the feature defaults,
    # so corpora that must skip the low-pass train correctly by default
    if args.manifest or _file_values(args, {"manifest"}).get("manifest"):
        manifest_path = Path(args.manifest or _file_values(args, {"manifest"})["manifest"])
        sidecar = manifest_path.parent / FEATURES_SIDECAR
        if sidecar.is_file():
            doc = FeatureConfig.from_dict(json.loads(sidecar.read_text()))
            defaults.update(
                lowpass_hz=doc.lowpass_hz if doc.lowpass_hz is not None else 0,
                window_ms=doc.spectrogram.window_ms,
                hop_ms=doc.spectrogram.hop_ms,
                fft_size=doc.spectrogram.fft_size or 0,
                feature_bins=doc.spectrogram.feature_bins,
                log_floor=doc.spectrogram.log_floor,
            )
    opts = _resolve(args, defaults)
    _announce("train", opts)
    if not opts["manifest"] or not opts["out"]:
        raise UsageError("--manifest and --out are required")

    manifest = read_manifest(opts["manifest"])
    schedule = tuple((int(s), float(lr)) for s, lr in opts["schedule"])
    config = TrainConfig(
        schedule=schedule,
        batch_size=int(opts["batch_size"]),
        split=tuple(int(p) for p in opts["split"]),
        seed=int(opts["seed"]),
        eval_interval=int(opts["eval_interval"]),
    )
    if opts["scale"] is not None:
        config = config.scaled(float(opts["scale"]))
    feature_config = _feature_config(opts)

    train_part, val_part, _ = split_dataset(manifest, config.split, config.seed)
    params, history = train_model(train_part, val_part, feature_config, config)
    blob = save_checkpoint(params, feature_config, manifest.label_set)
    Path(opts["out"]).write_bytes(blob)
    if opts["history"]:
        Path(opts["history"]).write_text(history_to_csv(history), encoding="utf-8")
    print(json.dumps({
        "checkpoint": opts["out"],
        "sha256": hashlib.sha256(blob).hexdigest(),
        "steps": config.total_steps,
        "val_accuracy": history[-1].val_accuracy if history else None,
    }))
    return EXIT_OK


# ----------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    defaults = {
        "checkpoint": None,
        "manifest": None,
        "part": "test",
        "split": (8, 1, 1),
        "seed": 0,
        "merge": None,
        "out": None,
    }
    opts = _resolve(args, defaults)
    digest = _announce("eval", opts)
    if not opts["checkpoint"] or not opts["manifest"]:
        raise UsageError("--checkpoint and --manifest are required")

    ckpt = load_checkpoint(_read_bytes(opts["checkpoint"]))
    manifest = read_manifest(opts["manifest"])
    if manifest.label_set.classes != ckpt.label_set.classes:
        raise ValueError(
            f"manifest classes {manifest.label_set.classes} do not match "
            f"checkpoint classes {ckpt.label_set.classes}"
        )
    part = opts["part"]
    if part == "all":
        selected = manifest
    else:
        names = ("train", "val", "test")
        if part not in names:
            raise ValueError(f"--part must be one of {names + ('all',)}")
        split = split_dataset(manifest, tuple(int(p) for p in opts["split"]), int(opts["seed"]))
        selected = split[names.index(part)]

    x, y = featurize_manifest(selected, ckpt.features)
    preds = nn.predict_proba(x, ckpt.params).argmax(axis=1)
    cm = confusion(preds, y, ckpt.label_set.classes)

    mapping = None
    merge_opt = opts["merge"]
    if merge_opt:
        mapping = {}
        for piece in (merge_opt if isinstance(merge_opt, list) else [merge_opt]):
            mapping.update(piece)
        for name in ckpt.label_set.classes:
            mapping.setdefault(name, name)

    meta = ReportMetadata(seed=int(opts["seed"]), config_hash=digest, split=part)
    doc = report(cm, metadata=meta, merge=mapping)
    _write_output(report_to_json(doc), opts["out"])
    return EXIT_OK


# ---------------------------------------------------------------- infer

def cmd_infer(args) -> int:
    defaults = {"checkpoint": None, "in_path": None}
    opts = _resolve(args, defaults)
    _announce("infer", opts)
    if not opts["checkpoint"] or not opts["in_path"]:
        raise UsageError("--checkpoint and --in are required")
    ckpt = load_checkpoint(_read_bytes(opts["checkpoint"]))
    clip = downmix_mono(read_wav(_read_bytes(opts["in_path"])))
    name, probs = classify_window(clip, ckpt)
    print(name)
    print(json.dumps({
        "class": name,
        "posteriors": {c: float(p) for c, p in zip(ckpt.label_set.classes, probs)},
    }))
    return EXIT_OK


# --------------------------------------------------------------- detect

def cmd_detect(args) -> int:
    defaults = {
        "checkpoint": None,
        "in_path": None,
        "rate": 44100,
        "chunk": 4410,
        "pmu_id": "pmu-0",
        "window_s": 1.0,
        "stride_hops": 1,
        "threshold": 0.8,
        "persistence": 3,
        "refractory_ms": 500.0,
    }
    opts = _resolve(args, defaults)
    _announce("detect", opts)
    if not opts["checkpoint"]:
        raise UsageError("--checkpoint is required")
    ckpt = load_checkpoint(_read_bytes(opts["checkpoint"]))
    config = DetectorConfig(
        window_s=float(opts["window_s"]),
        stride_hops=int(opts["stride_hops"]),
        threshold=float(opts["threshold"]),
        persistence=int(opts["persistence"]),
        refractory_ms=float(opts["refractory_ms"]),
    )

    def emit(events):
        for event in events:
            sys.stdout.write(json.dumps(event.to_dict()) + "\n")
            sys.stdout.flush()

    chunk = max(1, int(opts["chunk"]))
    if opts["in_path"]:
        clip = downmix_mono(read_wav(_read_bytes(opts["in_path"])))
        detector = Detector(ckpt, config, pmu_id=opts["pmu_id"],
                            sample_rate=clip.sample_rate)
        signal = clip.mono()
        for start in range(0, signal.shape[0], chunk):
            emit(detector.push(signal[start:start + chunk]))
    else:
        # raw signed 16-bit little-endian mono PCM on stdin
        detector = Detector(ckpt, config, pmu_id=opts["pmu_id"],
                            sample_rate=int(opts["rate"]))
        stream = sys.stdin.buffer
        while True:
            raw = stream.read(chunk * 2)
            if not raw:
                break
            pcm = np.frombuffer(raw[: len(raw) // 2 * 2], dtype="<i2")
            emit(detector.push(pcm.astype(np.float64) / 32768.0))
    return EXIT_OK


# ---------------------------------------------------------------- serve

def cmd_serve(args) -> int:
    base = ServiceConfig()
    defaults = {
        "host": base.host,
        "tcp_port": base.tcp_port,
        "http_port": base.http_port,
        "token": base.token,
        "queue_limit": base.queue_limit,
        "log_path": base.log_path,
        "static_dir": base.static_dir,
        "match": None,
    }
    opts = _resolve(args, defaults)
    _announce("serve", opts)
    doc = dict(opts)
    if doc["match"] is None:
        del doc["match"]
    config = ServiceConfig.from_dict(doc)
    try:
        asyncio.run(run_service(config))
    except KeyboardInterrupt:
        pass
    return EXIT_OK


# --------------------------------------------------------------- replay

def cmd_replay(args) -> int:
    defaults = {"log": None, "match_config": None, "out": None}
    opts = _resolve(args, defaults)
    _announce("replay", opts)
    if not opts["log"]:
        raise UsageError("--log file is required")
    entries = game.log_from_jsonl(_read_text(opts["log"]))
    config = None
    if opts["match_config"]:
        config = game.MatchConfig.from_dict(json.loads(_read_text(opts["match_config"])))
    match = game.replay([e.event for e in entries], config)
    if [e.to_dict() for e in match.log] != [e.to_dict() for e in entries]:
        raise ValueError("log does not replay cleanly under this match config")
    doc = match.snapshot()
    doc["finished_by"] = match.finished_by
    _write_output(json.dumps(doc, indent=2, sort_keys=True) + "\n", opts["out"])
    return EXIT_OK


# ------------------------------------------------------------- plumbing

COMMANDS = {
    "synth": cmd_synth,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "detect": cmd_detect,
    "serve": cmd_serve,
    "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="parablude",
        description="Hit-detection pipeline and match engine tools. "
                    "Exit codes: 1 usage, 2 I/O, 3 invalid content.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render a labelled synthetic corpus")
    _add_config_flag(p)
    p.add_argument("--spec", help="corpus spec JSON file")
    p.add_argument("--preset", help="built-in corpus name: "
                                    + ", ".join(sorted(corpus_mod.PRESETS)))
    p.add_argument("--clips-per-class", type=int, dest="clips_per_class",
                   help="override the preset's clip count per class")
    p.add_argument("--out", help="output directory for WAVs + manifest.jsonl")
    p.add_argument("--seed", type=int, help="corpus RNG seed (default 0)")

    p = sub.add_parser("featurize", help="WAV to spectrogram CSV")
    _add_config_flag(p)
    p.add_argument("--in", dest="in_path", help="input WAV file")
    p.add_argument("--out", help="output CSV path (default stdout)")
    _add_feature_flags(p)

    p = sub.add_parser("train", help="fit the classifier, write a checkpoint")
    _add_config_flag(p)
    p.add_argument("--manifest", help="dataset manifest JSONL")
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--history", help="write step/loss/accuracy CSV here")
    p.add_argument("--seed", type=int, help="split + init + batch RNG seed")
    p.add_argument("--batch-size", type=int, dest="batch_size", help="SGD batch size")
    p.add_argument("--eval-interval", type=int, dest="eval_interval",
                   help="steps between validation passes")
    p.add_argument("--schedule", type=_parse_schedule,
                   help="learning-rate legs as STEPS:LR[,STEPS:LR...]")
    p.add_argument("--scale", type=float, help="multiply every leg's step count")
    p.add_argument("--split", type=_parse_split, help="train,val,test ratio (default 8,1,1)")
    _add_feature_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint, print a JSON report")
    _add_config_flag(p)
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("--manifest", help="dataset manifest JSONL")
    p.add_argument("--part", choices=("train", "val", "test", "all"),
                   help="which split part to score (default test)")
    p.add_argument("--split", type=_parse_split, help="train,val,test ratio (default 8,1,1)")
    p.add_argument("--seed", type=int, help="split seed (default 0)")
    p.add_argument("--merge", type=_parse_merge, action="append",
                   help="collapse classes, e.g. hand,forearm,upper_arm=body; repeatable")
    p.add_argument("--out", help="report path (default stdout)")

    p = sub.add_parser("infer", help="classify one WAV")
    _add_config_flag(p)
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("--in", dest="in_path", help="input WAV file")

    p = sub.add_parser("detect", help="stream audio, print hit events as NDJSON")
    _add_config_flag(p)
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("--in", dest="in_path",
                   help="input WAV; omit to read raw PCM16 LE mono from stdin")
    p.add_argument("--rate", type=int, help="sample rate for stdin input (default 44100)")
    p.add_argument("--chunk", type=int, help="samples per push (default 4410)")
    p.add_argument("--pmu-id", dest="pmu_id", help="sensor id stamped on events")
    p.add_argument("--window-s", type=float, dest="window_s", help="classifier window seconds")
    p.add_argument("--stride-hops", type=int, dest="stride_hops",
                   help="hops between inferences (default 1)")
    p.add_argument("--threshold", type=float, help="posterior needed to count a frame")
    p.add_argument("--persistence", type=int,
                   help="consecutive confident inferences before an event")
    p.add_argument("--refractory-ms", type=float, dest="refractory_ms",
                   help="dead time after each event")

    p = sub.add_parser("serve", help="run the match service (TCP + HTTP/WebSocket)")
    _add_config_flag(p)
    p.add_argument("--host", help="bind address")
    p.add_argument("--tcp-port", type=int, dest="tcp_port", help="NDJSON listener port")
    p.add_argument("--http-port", type=int, dest="http_port", help="HTTP/WebSocket port")
    p.add_argument("--token", help="shared auth token")
    p.add_argument("--queue-limit", type=int, dest="queue_limit",
                   help="pending events before load shedding")
    p.add_argument("--log-path", dest="log_path", help="append the event log here")
    p.add_argument("--static-dir", dest="static_dir", help="serve these files at /")

    p = sub.add_parser("replay", help="rebuild a match from its event log")
    _add_config_flag(p)
    p.add_argument("--log", help="event log JSONL file")
    p.add_argument("--match-config", dest="match_config", help="match config JSON file")
    p.add_argument("--out", help="final state path (default stdout)")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse raises for --help and usage errors
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"parablude: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"parablude: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, WavError, TrainingDiverged) as exc:
        print(f"parablude: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
