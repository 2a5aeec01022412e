"""Command-line entry point.

Exit codes: 0 success, 1 validation error (including bad usage), 2 I/O error.
Failures print one JSON line ``{"error": kind, "message": ...}`` to stderr.
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import subprocess
import sys
from dataclasses import MISSING, fields
from pathlib import Path

from emocues import __version__
from emocues.audio import AudioConfig, featurize_file, write_feature_files
from emocues.config import PUBLISHED_SETTINGS, TrainConfig, flat_config, load_config_file, split_config
from emocues.corpus import load_conversations, render_speaker_sequence, split_conversations
from emocues.errors import ValidationError
from emocues.knowledge import load_kb, sample_kb_path
from emocues.kwrt import importance_matrices, load_lexicon, squeeze_importance, tag_matrix

log = logging.getLogger("emocues")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2

FIELD_HELP = {
    "task": "epc (predict the next turn's emotion) or erc (label each turn)",
    "modality": "T (text), S (speech) or T+S",
    "lr": "Adam learning rate",
    "batch_size": "instances per Adam step",
    "epochs": "maximum training epochs",
    "model_dim": "width of the text/audio/fusion transformers",
    "spectral_dim": "width of the mel-branch transformer",
    "n_heads": "attention heads per transformer layer",
    "n_layers": "layers in the text and audio encoders",
    "ff_mult": "feed-forward width as a multiple of the model width",
    "bridge_len": "bridge tokens per direction per fusion block",
    "mfm_blocks": "stacked bridge fusion blocks",
    "mlp_depth": "linear layers in each bridge projection",
    "window": "utterances of history (EPC) or context (ERC) per instance",
    "no_kwrt": "ablation: skip word-importance scaling of text features",
    "no_pe": "ablation: skip the prosody residual (F_a = h_a)",
    "no_tmf": "ablation: skip bridge fusion; classify pooled initial fusion with one head",
    "dropout": "dropout rate inside transformer layers",
    "mel_mode": "frame (one token per mel frame) or patch (patch_frames frames per token)",
    "patch_frames": "frames per mel token in patch mode",
    "target_accuracy": "stop once training accuracy reaches this value",
    "kb": "relation TSV (default: bundled sample)",
    "lexicon": "function-word list (default: bundled English list)",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _diagnose("usage", message)
        sys.exit(EXIT_VALIDATION)


def _diagnose(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None, help="random seed (default: config value, 0)")
    p.add_argument("--out", type=Path, required=out_required, default=None,
                   help="output location; the only place files are written")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path,
                   help="flat JSON config or a previous run_manifest.json; also accepts the audio "
                        "keys sample_rate, win_ms, hop_ms, n_mels, n_fft, fmin, fmax, log_floor, "
                        "f0_min, f0_max, voicing_threshold")
    g = p.add_argument_group("model/training settings (override --config)")
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        default = f.default if f.default is not MISSING else None
        published = PUBLISHED_SETTINGS.get(f.name)
        note = f" [default {default}" + (f"; published setting {published}]" if published is not None
                                         and published != default else "]")
        help_ = FIELD_HELP.get(f.name, f.name) + note
        if f.type in ("bool", bool):
            g.add_argument(flag, action="store_true", default=None, help=help_)
        elif f.name in ("lr", "dropout", "target_accuracy"):
            g.add_argument(flag, type=float, default=None, help=help_)
        elif f.name in ("task", "modality", "mel_mode", "kb", "lexicon"):
            g.add_argument(flag, type=str, default=None, help=help_)
        else:
            g.add_argument(flag, type=int, default=None, help=help_)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emocues", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"emocues {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("tag", help="word-relation tags and importance matrices per conversation")
    p.add_argument("--kb", type=Path, default=None, help="relation TSV (default: bundled sample)")
    p.add_argument("--input", type=Path, required=True, help="conversation JSONL")
    p.add_argument("--lexicon", type=Path, default=None, help="function-word list")
    _add_common(p)

    p = sub.add_parser("featurize", help="log-mel and prosody frames for one WAV file")
    p.add_argument("--wav", type=Path, required=True)
    p.add_argument("--config", type=Path, help="JSON with audio settings (n_mels, hop_ms, ...)")
    _add_common(p)
    p.set_defaults(help_out="manifest .json path, or a directory")

    p = sub.add_parser("kb", help="knowledge-base utilities")
    kb_sub = p.add_subparsers(dest="kb_command", metavar="KB_COMMAND")
    ps = kb_sub.add_parser("stats", help="triple, pair and vocabulary counts")
    ps.add_argument("--kb", type=Path, default=None, help="relation TSV (default: bundled sample)")
    _add_common(ps, out_required=False)

    p = sub.add_parser("train", help="train a model on a conversation corpus")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--split", choices=["all", "train", "dev", "test"], default="all",
                   help="70/15/15 split by conversation-id hash (default all)")
    _add_config_flags(p)
    _add_common(p)

    for name, text in (("eval", "score a checkpoint on a corpus"),
                       ("predict", "EPC: forecast the turn after each conversation; "
                                   "ERC: label every turn")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--corpus", type=Path, required=True)
        p.add_argument("--checkpoint", type=Path, required=True,
                       help="checkpoint directory, model.json, or a train --out directory")
        p.add_argument("--split", choices=["all", "train", "dev", "test"], default="all")
        p.add_argument("--kb", type=Path, default=None, help="override the checkpoint's KB path")
        p.add_argument("--lexicon", type=Path, default=None)
        if name == "predict":
            p.add_argument("--next-speaker", default=None,
                           help="speaker name of the forecast turn (default: turn alternation)")
        _add_common(p)

    p = sub.add_parser("ablate", help="full model vs w/o KWRT, w/o PE, w/o TMF")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--eval-corpus", type=Path, default=None,
                   help="corpus scored by each variant (default: the training corpus)")
    _add_config_flags(p)
    _add_common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable stage")
    p.add_argument("--tolerance", type=float, default=1e-3)
    _add_common(p, out_required=False)

    p = sub.add_parser("synth", help="write a synthetic corpus with WAV audio")
    p.add_argument("--conversations", type=int, default=8)
    p.add_argument("--utterances", type=int, default=5)
    p.add_argument("--labels", default="hap,sad,ang,neu")
    p.add_argument("--duration", type=float, default=0.2, help="seconds of audio per utterance")
    p.add_argument("--label-noise", type=float, default=0.0)
    _add_common(p)
    return parser


# -- helpers --------------------------------------------------------------

def _git_describe() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        return res.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out: Path, command: str, config: dict, seed: int, inputs: list[Path]) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": seed,
        "git_describe": _git_describe(),
        "version": __version__,
        "started_at": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "inputs": {str(p): _digest(p) for p in inputs if p is not None and Path(p).is_file()},
    }
    path = out / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _resolve_config(args) -> tuple[TrainConfig, AudioConfig]:
    flat = load_config_file(args.config) if getattr(args, "config", None) else {}
    for f in fields(TrainConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            flat[f.name] = value
    if args.seed is not None:
        flat["seed"] = args.seed
    return split_config(flat)


def _load_corpus(path: Path, split: str, seed: int):
    convs = load_conversations(path)
    if split != "all":
        convs = split_conversations(convs, seed)[split]
        if not convs:
            raise ValidationError(f"split {split!r} of {path} is empty")
    return convs


def _checkpoint_path(path: Path) -> Path:
    if path.is_dir() and not (path / "model.json").exists() and (path / "checkpoint").is_dir():
        return path / "checkpoint"
    return path


# -- commands -------------------------------------------------------------

def cmd_tag(args) -> int:
    kb = load_kb(args.kb or sample_kb_path())
    lexicon = load_lexicon(args.lexicon)
    convs = load_conversations(args.input)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "tags.jsonl"
    with path.open("w", encoding="utf-8") as fh:
        for c in convs:
            tokens = render_speaker_sequence(c.utterances)
            mats = importance_matrices(tokens, lexicon, kb)
            record = {
                "id": c.id,
                "tokens": tokens,
                "words": [w.surface for w in mats.words],
                "content": [w.is_content for w in mats.words],
                "utterance": [w.utterance_index for w in mats.words],
                "tags": tag_matrix(mats, kb),
                "m_rec": mats.m_rec.tolist(),
                "m_rel": mats.m_rel.tolist(),
                "m": mats.m.tolist(),
                "scores": squeeze_importance(mats).tolist(),
            }
            fh.write(json.dumps(record) + "\n")
    print(f"tagged {len(convs)} conversation(s) -> {path}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    from emocues.plotting import plot_features

    audio_cfg = AudioConfig()
    if args.config:
        _, audio_cfg = split_config(load_config_file(args.config))
    mel, pros = featurize_file(args.wav, audio_cfg)
    out = args.out
    manifest = out if out.suffix == ".json" else out / (args.wav.stem + ".json")
    write_feature_files(manifest, str(args.wav), mel, pros, audio_cfg)
    plot_features(mel.frames, pros.f0, pros.energy, mel.frame_hop, manifest.with_suffix(".png"))
    voiced = pros.f0[pros.f0 > 0]
    print(f"{args.wav}: {mel.n_frames} frames x {mel.n_mels} mels, "
          f"{len(voiced)} voiced, median F0 {float(_median(voiced)):.1f} Hz -> {manifest}")
    return EXIT_OK


def _median(x):
    import numpy as np
    return np.median(x) if len(x) else 0.0


def cmd_kb(args) -> int:
    if args.kb_command != "stats":
        build_parser().parse_args(["kb", "--help"])
    kb = load_kb(args.kb or sample_kb_path())
    stats = kb.stats()
    print(f"triples {stats['triples']}  vocabulary {stats['vocabulary']}  pairs {stats['pairs']}  "
          f"skipped {stats['skipped']}")
    for rel, n in stats["relations"].items():
        print(f"  {rel:<11}{n}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "kb_stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    from emocues.plotting import plot_confusion, plot_training_trace
    from emocues.tasks import train

    cfg, audio_cfg = _resolve_config(args)
    convs = _load_corpus(args.corpus, args.split, cfg.seed)
    out = args.out
    write_run_manifest(out, "train", flat_config(cfg, audio_cfg), cfg.seed,
                       [args.corpus, args.config, Path(cfg.kb) if cfg.kb else None])

    def progress(row):
        log.info("epoch %d loss %.6f acc %.4f", row["epoch"], row["loss"], row["accuracy"])

    res = train(convs, cfg, audio_cfg, out_dir=out, on_epoch=progress)
    (out / "trace.json").write_text(json.dumps(res.trace, indent=2) + "\n")
    plot_training_trace(res.trace, out / "training_curve.png")
    res.final.write(out, "train_")
    plot_confusion(res.final.confusion.counts, res.bundle.labels, out / "train_confusion.png",
                   f"{cfg.task.upper()} training set")
    m = res.final.metrics
    print(f"trained {len(res.trace)} epoch(s); train uar={m.uar:.4f} macro_f1={m.macro_f1:.4f} "
          f"acc={m.accuracy:.4f} w_f1={m.weighted_f1:.4f}; checkpoint {res.checkpoint}")
    return EXIT_OK


def _load_for_scoring(args):
    from emocues.tasks import TrainedModel, resolve_knowledge

    bundle = TrainedModel.load(_checkpoint_path(args.checkpoint))
    cfg = bundle.cfg
    if args.kb is not None or args.lexicon is not None:
        cfg = cfg.with_(kb=str(args.kb) if args.kb else cfg.kb,
                        lexicon=str(args.lexicon) if args.lexicon else cfg.lexicon)
    kb, lexicon = resolve_knowledge(cfg)
    convs = _load_corpus(args.corpus, args.split, args.seed if args.seed is not None else cfg.seed)
    write_run_manifest(args.out, args.command, flat_config(bundle.cfg, bundle.audio_cfg), cfg.seed,
                       [args.corpus, _checkpoint_path(args.checkpoint) / "model.json"
                        if _checkpoint_path(args.checkpoint).is_dir() else args.checkpoint])
    return bundle, convs, kb, lexicon


def cmd_eval(args) -> int:
    from emocues.plotting import plot_confusion
    from emocues.tasks import evaluate

    bundle, convs, kb, lexicon = _load_for_scoring(args)
    res = evaluate(convs, bundle, kb, lexicon)
    res.write(args.out)
    plot_confusion(res.confusion.counts, bundle.labels, args.out / "confusion.png",
                   f"{bundle.cfg.task.upper()} evaluation")
    m = res.metrics
    print(f"{len(res.predictions)} instance(s): uar={m.uar:.4f} macro_f1={m.macro_f1:.4f} "
          f"accuracy={m.accuracy:.4f} weighted_f1={m.weighted_f1:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    from emocues.tasks import evaluate, forecast, write_predictions

    bundle, convs, kb, lexicon = _load_for_scoring(args)
    if bundle.cfg.task == "epc":
        preds = forecast(convs, bundle, kb, lexicon, args.next_speaker)
        path = args.out / "forecasts.csv"
    else:
        preds = evaluate(convs, bundle, kb, lexicon).predictions
        path = args.out / "predictions.csv"
    write_predictions(path, preds, bundle.labels)
    print(f"{len(preds)} prediction(s) -> {path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from emocues.plotting import plot_ablation
    from emocues.tasks import format_ablation_table, run_ablation

    cfg, audio_cfg = _resolve_config(args)
    convs = load_conversations(args.corpus)
    eval_convs = load_conversations(args.eval_corpus) if args.eval_corpus else None
    write_run_manifest(args.out, "ablate", flat_config(cfg, audio_cfg), cfg.seed,
                       [args.corpus, args.eval_corpus, args.config])
    rows = run_ablation(convs, cfg, audio_cfg, eval_convs)
    table = format_ablation_table(rows)
    (args.out / "ablation.json").write_text(json.dumps([r.as_dict() for r in rows], indent=2) + "\n")
    (args.out / "ablation.txt").write_text(table + "\n")
    with (args.out / "ablation.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "uar", "macro_f1", "accuracy", "weighted_f1", "delta_uar",
                    "delta_macro_f1", "n_params"])
        for r in rows:
            d = r.delta
            w.writerow([r.variant, r.metrics.uar, r.metrics.macro_f1, r.metrics.accuracy,
                        r.metrics.weighted_f1, "/" if d is None else d["uar"],
                        "/" if d is None else d["macro_f1"], r.n_params])
    plot_ablation(rows, args.out / "ablation.png")
    print(table)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from emocues.gradsuite import run_gradient_suite

    seed = args.seed if args.seed is not None else 0
    results = run_gradient_suite(seed)
    ok = True
    for name, err in results.items():
        passed = err <= args.tolerance
        ok &= passed
        print(f"{name:<18} max_rel_err={err:.3e} {'ok' if passed else 'FAIL'}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "gradcheck.json").write_text(json.dumps(
            {"seed": seed, "tolerance": args.tolerance, "max_rel_err": results}, indent=2) + "\n")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_synth(args) -> int:
    from emocues.synth import make_corpus

    path = make_corpus(args.out, args.conversations, args.utterances,
                       tuple(args.labels.split(",")), args.seed or 0, args.duration,
                       label_noise=args.label_noise)
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"tag": cmd_tag, "featurize": cmd_featurize, "kb": cmd_kb, "train": cmd_train,
            "eval": cmd_eval, "predict": cmd_predict, "ablate": cmd_ablate,
            "gradcheck": cmd_gradcheck, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        _diagnose("usage", "no command given")
        return EXIT_VALIDATION
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        _diagnose("usage", "no command given")
        return EXIT_VALIDATION
    if args.command == "kb" and args.kb_command is None:
        parser.print_usage(sys.stderr)
        _diagnose("usage", "kb needs a subcommand (stats)")
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        _diagnose("validation", str(exc))
        return EXIT_VALIDATION
    except OSError as exc:
        _diagnose("io", str(exc))
        return EXIT_IO
    except FloatingPointError as exc:
        _diagnose("numeric", str(exc))
        return EXIT_VALIDATION
    except ValueError as exc:
        _diagnose("validation", str(exc))
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
