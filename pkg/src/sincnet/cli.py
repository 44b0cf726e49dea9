"""Command-line entry point: ``sincnet {synth,train,eval-id,eval-verif,analyze,gradcheck}``.

Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
Flags override keys read from ``--config``; environment variables are never read.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import (ConfigurationError, EmptyResultError, InvalidParameterError,
                     InvalidTrialSetError, ShapeError, UnsupportedFormatError)

VALIDATION_ERRORS = (ConfigurationError, InvalidParameterError, UnsupportedFormatError,
                     InvalidTrialSetError, EmptyResultError, ShapeError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _echo(title, values):
    print(f"# {title}")
    for key in sorted(values):
        print(f"{key} = {values[key]}")
    sys.stdout.flush()


# -- subcommands ------------------------------------------------------------------------

def cmd_synth(args):
    from .dataio import synth_corpus
    _echo("synth", {"speakers": args.speakers, "utts": args.utts, "seconds": args.seconds,
                    "test_utts": args.test_utts, "impostors": args.impostors,
                    "impostor_utts": args.impostor_utts, "sample_rate": args.sample_rate,
                    "seed": args.seed, "out": args.out, "threads": args.threads})
    manifest, _ = synth_corpus(args.out, args.speakers, args.utts, args.seconds, args.sample_rate,
                               seed=args.seed, test_utts=args.test_utts,
                               impostor_speakers=args.impostors, impostor_utts=args.impostor_utts)
    print(f"wrote {len(manifest.entries)} utterances and {Path(args.out) / 'manifest.csv'}")
    return 0


def _train_config(args):
    from .trainer import TrainConfig, load_config
    overrides = {"seed": args.seed, "epochs": args.epochs, "cnn_mode": args.mode,
                 "manifest": args.manifest, "out_dir": args.out}
    if args.config:
        return load_config(args.config, **overrides)
    return TrainConfig.from_mapping({k: v for k, v in overrides.items() if v is not None})


def cmd_train(args):
    from .checkpoint import save_checkpoint
    from .dataio import Manifest, build_chunk_set, load_utterances
    from .nn import build_network
    from .trainer import sentence_error_rate, train

    config = _train_config(args)
    if not config.manifest:
        raise ConfigurationError("no manifest given (config key 'manifest' or --manifest)")
    if not config.out_dir:
        raise ConfigurationError("no output directory given (config key 'out_dir' or --out)")
    _echo("train", {**{k: v for k, v in vars(config).items()}, "threads": args.threads})
    manifest = Manifest.read(config.manifest)
    manifest.validate()
    speakers = manifest.speakers("train")
    index = {s: i for i, s in enumerate(speakers)}
    kw = dict(chunk_ms=config.chunk_ms, overlap_ms=config.overlap_ms, dtype=np.dtype(config.dtype))
    train_set = build_chunk_set(load_utterances(manifest, "train", config.sample_rate), index, **kw)
    test_utts = load_utterances(manifest, "test", config.sample_rate)
    test_set = build_chunk_set(test_utts, index, **kw) if test_utts else None
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text())
    network = build_network(config.model_config(), len(speakers), seed=config.seed)
    meta = {"speakers": speakers}
    train(network, train_set, config, test_set, log_path=out / "train_log.csv",
          checkpoint_dir=out if config.checkpoint_every else None, checkpoint_meta=meta)
    save_checkpoint(out / "model.snc", network, epoch=config.epochs, **meta)
    print(f"wrote {out / 'train_log.csv'} and {out / 'model.snc'}")
    if test_set is not None:
        print(f"test CER = {sentence_error_rate(network, test_set):.4f}%")
    return 0


def _load_model(path):
    from .checkpoint import load_checkpoint
    network, meta = load_checkpoint(path)
    speakers = meta.get("speakers")
    if not speakers:
        raise ConfigurationError(f"{path}: checkpoint has no speaker list")
    return network, {s: i for i, s in enumerate(speakers)}


def cmd_eval_id(args):
    from .dataio import Manifest, build_chunk_set, load_utterances
    from .trainer import frame_error_rate, sentence_error_rate

    _echo("eval-id", {"checkpoint": args.checkpoint, "manifest": args.manifest, "split": args.split,
                      "seed": args.seed, "threads": args.threads})
    network, index = _load_model(args.checkpoint)
    manifest = Manifest.read(args.manifest)
    utts = load_utterances(manifest, args.split, network.config.sample_rate)
    unknown = sorted({u.speaker_id for u in utts} - set(index))
    if unknown:
        raise ConfigurationError(f"speakers not known to the model: {unknown}")
    if not utts:
        raise ConfigurationError(f"manifest has no {args.split!r} utterances")
    chunk_set = build_chunk_set(utts, index, dtype=np.dtype(network.config.dtype))
    report = {"cer_percent": sentence_error_rate(network, chunk_set),
              "fer_percent": frame_error_rate(network, chunk_set),
              "n_sentences": chunk_set.n_sentences, "n_chunks": int(len(chunk_set.chunks))}
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_eval_verif(args):
    from .dataio import Manifest
    from .verification import eer_report, format_report, make_trials, score_trials, write_trials

    _echo("eval-verif", {"checkpoint": args.checkpoint, "manifest": args.manifest,
                         "impostors": args.impostors, "seed": args.seed, "out": args.out,
                         "threads": args.threads})
    network, index = _load_model(args.checkpoint)
    manifest = Manifest.read(args.manifest)
    trials = make_trials(manifest, args.impostors, args.seed)
    dvec, post = score_trials(network, manifest, trials, index,
                              sample_rate=network.config.sample_rate)
    reports = {"dvector": eer_report(dvec), "posterior": eer_report(post)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trials(out / "trials_dvector.csv", dvec)
    write_trials(out / "trials_posterior.csv", post)
    (out / "eer_report.json").write_text(format_report(reports))
    print(format_report(reports), end="")
    return 0


def cmd_analyze(args):
    from .analysis import compare_convergence, export_filters
    from .trainer import read_log

    _echo("analyze", {"checkpoint": args.checkpoint, "out": args.out, "n_fft": args.n_fft,
                      "compare": args.compare, "seed": args.seed, "threads": args.threads})
    if not args.checkpoint and not args.compare:
        raise ConfigurationError("nothing to analyze: give --checkpoint and/or --compare")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.checkpoint:
        files = export_filters(args.checkpoint, out, args.n_fft)
        print(f"wrote {len(files)} files to {out}")
    if args.compare:
        _, summary = compare_convergence(read_log(args.compare[0]), read_log(args.compare[1]),
                                         out / "convergence.csv")
        print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_gradcheck

    _echo("gradcheck", {"seed": args.seed, "networks": args.networks, "threshold": args.threshold,
                        "threads": args.threads})
    worst, passed = run_gradcheck(args.seed, args.networks, args.threshold)
    print(f"max relative error = {worst:.3e}")
    print("PASS" if passed else "FAIL")
    return 0 if passed else 2


# -- parser -----------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="sincnet", description=__doc__.splitlines()[0])
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for every random draw")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads (computation is single-threaded and deterministic)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic multi-speaker corpus")
    p.add_argument("--speakers", type=int, required=True)
    p.add_argument("--utts", type=int, required=True, help="training utterances per speaker")
    p.add_argument("--seconds", type=float, required=True)
    p.add_argument("--test-utts", type=int, default=4)
    p.add_argument("--impostors", type=int, default=5, help="extra speakers for the impostor split")
    p.add_argument("--impostor-utts", type=int, default=4)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth, default_seed=0)

    p = sub.add_parser("train", parents=[common], help="train a SincNet or standard CNN")
    p.add_argument("--config", help="flat 'key = value' file; flags override its keys")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--mode", choices=("sinc", "standard"))
    p.set_defaults(func=cmd_train, default_seed=None)

    p = sub.add_parser("eval-id", parents=[common], help="sentence and frame error rates")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="optional JSON report path")
    p.set_defaults(func=cmd_eval_id, default_seed=0)

    p = sub.add_parser("eval-verif", parents=[common], help="speaker verification EER")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--impostors", type=int, default=10, help="impostor trials per genuine trial")
    p.add_argument("--out", default="verification")
    p.set_defaults(func=cmd_eval_verif, default_seed=0)

    p = sub.add_parser("analyze", parents=[common], help="filter exports and convergence comparison")
    p.add_argument("--checkpoint")
    p.add_argument("--out", default="analysis")
    p.add_argument("--n-fft", type=int, default=4096)
    p.add_argument("--compare", nargs=2, metavar=("SINC_LOG", "CNN_LOG"))
    p.set_defaults(func=cmd_analyze, default_seed=0)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--networks", type=int, default=20)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck, default_seed=0)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        if args.seed is None and args.default_seed is not None:
            args.seed = args.default_seed
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
