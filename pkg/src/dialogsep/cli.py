"""Command-line front end.

    dialogsep enhance [--boost-db 12] in.wav out.wav
    dialogsep separate in.wav dialog.wav
    dialogsep mix-dataset --items 128 --dnrs 0,5,10 --seed 7 --out-dir d/
    dialogsep loudness a.wav b.wav [--mode speech-gated]
    dialogsep train --out-dir models/
    dialogsep correlate --a s1.csv --b s2.csv --method spearman --out-dir rep/

Every flag can also be set in a flat text config file (``--config FILE``)
holding ``key = value`` lines, where key is the flag name without leading
dashes; flags given on the command line override the file. Exit status is
0 on success, 1 on a processing error and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys

from . import toy
from .audio import AudioBuffer, AudioError, read_wav, resample, write_wav, WAV_FORMATS
from .dataset import DatasetError, DatasetPlan, plan_dataset, render_dataset, synthetic_pools
from .denoiser import DenoiserHyperparams, MaskPredictor
from .evaluation import METHODS, ScoreTable, StatsError, correlate_tables
from .gate import DialogClassifier, GateConfig, activity_decisions, classify_frames
from .loudness import MODES, integrated_loudness
from .nn import ModelFileError, TrainingDiverged
from .pipeline import PipelineConfig, boost_gain_from_db, enhance, separate
from .report import emit_report, line_svg
from .slf import SlfConfig

log = logging.getLogger("dialogsep")

MODEL_DIR_ENV = "DIALOGSEP_MODEL_DIR"
SUBCOMMANDS = ("enhance", "separate", "mix-dataset", "loudness", "train", "correlate")


class UsageError(Exception):
    pass


def _float_list(text):
    try:
        return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _common(p):
    p.add_argument("--config", help="flat key = value config file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="count", default=0)


def _stage_flags(p):
    p.add_argument("--model-dir", default=os.environ.get(MODEL_DIR_ENV),
                   help=f"directory with {toy.DENOISER_FILE} / {toy.CLASSIFIER_FILE} (env {MODEL_DIR_ENV})")
    p.add_argument("--denoiser", help="band-mask model file (overrides --model-dir)")
    p.add_argument("--classifier", help="dialog classifier model file (overrides --model-dir)")
    p.add_argument("--bypass-all", action="store_true")
    p.add_argument("--bypass-slf", action="store_true")
    p.add_argument("--bypass-denoiser", action="store_true")
    p.add_argument("--bypass-gate", action="store_true")
    p.add_argument("--aggressiveness", type=float, default=0.5, help="SLF suppression (<1 = gentler)")
    p.add_argument("--mask-floor", type=float, default=0.1)
    p.add_argument("--attack-ms", type=float, default=50.0)
    p.add_argument("--release-ms", type=float, default=500.0)
    p.add_argument("--classifier-input", choices=("mix", "processed"), default="mix")
    p.add_argument("--format", choices=WAV_FORMATS, default="float32")
    p.add_argument("input")
    p.add_argument("output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dialogsep", description="Dialog separation and enhancement toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="boost dialog: y = g * d_hat + x, then align loudness")
    _common(p)
    p.add_argument("--boost-db", type=float, default=12.0)
    p.add_argument("--target-lkfs", type=float, default=-31.0)
    p.add_argument("--no-align", action="store_true", help="skip loudness alignment")
    _stage_flags(p)

    p = sub.add_parser("separate", help="write the dialog estimate d_hat")
    _common(p)
    _stage_flags(p)

    p = sub.add_parser("mix-dataset", help="synthesize a DNR-controlled stereo corpus")
    _common(p)
    p.add_argument("--items", type=int, default=128)
    p.add_argument("--dnrs", type=_float_list, default=(0.0, 5.0, 10.0))
    p.add_argument("--clip-seconds", type=float, default=10.0)
    p.add_argument("--pan-distribution", type=_float_list, default=(0.6, 0.3, 0.1))
    p.add_argument("--speech-dir", help="48 kHz speech WAVs (default: synthetic)")
    p.add_argument("--background-dir", help="48 kHz background WAVs (default: synthetic)")
    p.add_argument("--backgrounds", type=int, default=32, help="synthetic background pool size")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", "--out", dest="out_dir", required=True)

    p = sub.add_parser("loudness", help="print integrated loudness as CSV")
    _common(p)
    p.add_argument("--mode", choices=MODES, default="gated")
    p.add_argument("--model-dir", default=os.environ.get(MODEL_DIR_ENV))
    p.add_argument("inputs", nargs="+")

    p = sub.add_parser("train", help="train the toy classifier and band-mask denoiser")
    _common(p)
    p.add_argument("--out-dir", default=os.environ.get(MODEL_DIR_ENV))
    p.add_argument("--what", choices=("both", "denoiser", "classifier"), default="both")
    p.add_argument("--clips", type=int, default=16, help="denoiser training clips")
    p.add_argument("--held-out", type=int, default=6)
    p.add_argument("--classifier-clips", type=int, default=12, help="classifier clips per kind")
    hp = DenoiserHyperparams()
    p.add_argument("--epochs", type=int, default=hp.epochs)
    p.add_argument("--lr", type=float, default=hp.lr)
    p.add_argument("--lr-decay", type=float, default=hp.lr_decay)
    p.add_argument("--momentum", type=float, default=hp.momentum)
    p.add_argument("--batch-size", type=int, default=hp.batch_size)

    p = sub.add_parser("correlate", help="correlate two item x system score tables")
    _common(p)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--method", choices=sorted(METHODS), default="pearson")
    p.add_argument("--axis", choices=("systems", "items"), default="systems")
    p.add_argument("--average", action="store_true", help="correlate per-label means instead of columns")
    p.add_argument("--out-dir", default=".")
    return parser


# ------------------------------------------------------------------ config

def read_config_file(path) -> dict:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_string("[dialogsep]\n" + fh.read(), source=str(path))
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    except configparser.Error as exc:
        raise UsageError(f"bad config file {path}: {exc}")
    return {k.strip().lstrip("-").replace("-", "_"): v.strip() for k, v in cp["dialogsep"].items()}


def _apply_config(subparser: argparse.ArgumentParser, values: dict) -> None:
    actions = {a.dest: a for a in subparser._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in values.items():
        a = actions.get(key)
        if a is None:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(a, argparse._StoreTrueAction):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"config key {key!r} needs true/false")
            defaults[key] = raw.lower() in ("true", "1", "yes")
        elif isinstance(a, argparse._CountAction):
            try:
                defaults[key] = int(raw)
            except ValueError:
                raise UsageError(f"config key {key!r} needs an integer")
        elif a.nargs == "+":
            defaults[key] = raw.split()
        else:
            try:
                v = a.type(raw) if a.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key!r}: {exc}")
            if a.choices is not None and v not in a.choices:
                raise UsageError(f"config key {key!r} must be one of {list(a.choices)}")
            defaults[key] = v
        # positionals and required flags can come from the file too
        a.required = False
        if not a.option_strings:
            a.nargs = "*" if a.nargs == "+" else "?"
    subparser.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        command = next((a for a in argv if a in SUBCOMMANDS), None)
        if command is None:
            parser.error("a subcommand is required")
        subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        try:
            _apply_config(subparsers.choices[command], read_config_file(known.config))
        except UsageError as exc:
            parser.error(str(exc))
    args = parser.parse_args(argv)
    for name in ("input", "output", "inputs"):
        if hasattr(args, name) and not getattr(args, name):
            parser.error(f"missing {name}")
    return args


def resolved_config(args) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())}


# ---------------------------------------------------------------- commands

def _load_models(args):
    den_path = args.denoiser
    clf_path = args.classifier
    if args.model_dir:
        d, c = toy.model_paths(args.model_dir)
        den_path = den_path or (d if os.path.exists(d) else None)
        clf_path = clf_path or (c if os.path.exists(c) else None)
    den = MaskPredictor.load(den_path) if den_path else None
    clf = DialogClassifier.load(clf_path) if clf_path else None
    return den, clf


def _pipeline_config(args, align=None) -> PipelineConfig:
    den, clf = _load_models(args)
    gate = GateConfig(attack_ms=args.attack_ms, release_ms=args.release_ms, classifier_input=args.classifier_input)
    slf = SlfConfig(aggressiveness=args.aggressiveness, mask_floor=args.mask_floor)
    if args.bypass_all:
        return PipelineConfig.bypass_all(slf=slf, gate=gate, denoiser=den, classifier=clf)
    bypass_gate = args.bypass_gate
    if den is None and not args.bypass_denoiser:
        log.warning("no denoiser model found; the band-mask stage passes through")
    if clf is None and not bypass_gate:
        log.warning("no classifier model found; the dialog gate is bypassed")
        bypass_gate = True
    return PipelineConfig(slf=slf, denoiser=den, classifier=clf, gate=gate,
                          bypass_slf=args.bypass_slf, bypass_denoiser=args.bypass_denoiser,
                          bypass_gate=bypass_gate, alignment_target=align)


def _read_input(path) -> AudioBuffer:
    x = read_wav(path)
    if x.sample_rate != 48000:
        log.info("resampling %s from %d Hz to 48 kHz", path, x.sample_rate)
        x = resample(x, 48000)
    return x


def cmd_enhance(args) -> int:
    x = _read_input(args.input)
    cfg = _pipeline_config(args, None if args.no_align else args.target_lkfs)
    y, _ = enhance(x, cfg, boost_gain_from_db(args.boost_db))
    write_wav(args.output, y, args.format)
    return 0


def cmd_separate(args) -> int:
    x = _read_input(args.input)
    sep = separate(x, _pipeline_config(args))
    write_wav(args.output, sep.dialog, args.format)
    return 0


def cmd_mix_dataset(args) -> int:
    plan = DatasetPlan(items=args.items, dnrs_db=tuple(args.dnrs), clip_seconds=args.clip_seconds,
                       pan_distribution=tuple(args.pan_distribution), seed=args.seed)
    if args.speech_dir or args.background_dir:
        if not (args.speech_dir and args.background_dir):
            raise DatasetError("give both --speech-dir and --background-dir")
        speech = sorted(os.path.join(args.speech_dir, f) for f in os.listdir(args.speech_dir) if f.endswith(".wav"))
        bg = sorted(os.path.join(args.background_dir, f) for f in os.listdir(args.background_dir) if f.endswith(".wav"))
    else:
        speech, bg = synthetic_pools(args.items, args.backgrounds, args.seed)
    entries = plan_dataset(plan, speech, bg)
    render_dataset(entries, args.out_dir, jobs=args.jobs,
                   progress=lambda e: log.info("%s: DNR %.2f dB", e.clip_id, e.measured_dnr_db))
    print(f"wrote {len(entries)} clips to {args.out_dir}")
    return 0


def cmd_loudness(args) -> int:
    clf = None
    if args.mode == "speech-gated" and args.model_dir:
        _, c = toy.model_paths(args.model_dir)
        clf = DialogClassifier.load(c) if os.path.exists(c) else None
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["file", "mode", "lkfs", "blocks"])
    for path in args.inputs:
        buf = _read_input(path)
        decisions = None
        if args.mode == "speech-gated":
            decisions = classify_frames(buf, clf) if clf is not None else activity_decisions(buf)
        v = integrated_loudness(buf, args.mode, decisions)
        w.writerow([path, args.mode, f"{v.lkfs:.4f}", v.block_count])
    return 0


def cmd_train(args) -> int:
    if not args.out_dir:
        raise UsageError(f"--out-dir or {MODEL_DIR_ENV} is required")
    os.makedirs(args.out_dir, exist_ok=True)
    den_path, clf_path = toy.model_paths(args.out_dir)
    traces = {}
    if args.what in ("both", "classifier"):
        clf = toy.train_toy_classifier(args.classifier_clips, seed=args.seed)
        clf.save(clf_path)
        traces["classifier"] = clf.loss_trace
        print(f"classifier: loss {clf.loss_trace[0]:.4f} -> {clf.loss_trace[-1]:.4f}, saved {clf_path}")
    if args.what in ("both", "denoiser"):
        hp = DenoiserHyperparams(epochs=args.epochs, lr=args.lr, lr_decay=args.lr_decay,
                                 momentum=args.momentum, batch_size=args.batch_size)
        den = toy.train_toy_denoiser(args.clips, seed=args.seed, hyperparams=hp,
                                     log=lambda e, l: log.info("epoch %d: loss %.5f", e, l))
        den.save(den_path)
        traces["denoiser"] = den.loss_trace
        mse, ones = toy.band_mask_mse(den, toy.denoiser_corpus(args.held_out, held_out=True))
        print(f"denoiser: held-out band-mask MSE {mse:.4f} (all-ones {ones:.4f}), saved {den_path}")
    with open(os.path.join(args.out_dir, "loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "step", "loss"])
        for name, tr in traces.items():
            for i, v in enumerate(tr):
                w.writerow([name, i, repr(float(v))])
    for name, tr in traces.items():
        line_svg({name: tr}, os.path.join(args.out_dir, f"loss_{name}.svg"),
                 title=f"{name} training loss", xlabel="step", ylabel="loss")
    return 0


def cmd_correlate(args) -> int:
    a = ScoreTable.read_csv(args.a)
    b = ScoreTable.read_csv(args.b)
    results = correlate_tables(a, b, axis=args.axis, method=args.method, average=args.average)
    for path in emit_report(results, args.out_dir, tables=(a, b)):
        print(path)
    return 0


COMMANDS = {"enhance": cmd_enhance, "separate": cmd_separate, "mix-dataset": cmd_mix_dataset,
            "loudness": cmd_loudness, "train": cmd_train, "correlate": cmd_correlate}

PROCESSING_ERRORS = (AudioError, DatasetError, StatsError, ModelFileError, TrainingDiverged, ValueError, OSError)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    print("config: " + json.dumps(resolved_config(args), sort_keys=True), file=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except PROCESSING_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
