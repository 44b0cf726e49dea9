"""Desk-scale toy experiment: synthetic corpus, SincNet vs standard CNN, identification,
verification and learned-band analysis."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import filterbank as fb
from .analysis import band_masses, compare_convergence, cumulative_report
from .checkpoint import save_checkpoint
from .dataio import Manifest, build_chunk_set, load_utterances, synth_corpus
from .nn import build_network
from .trainer import TrainConfig, sentence_error_rate, train, write_log
from .verification import eer_report, format_report, make_trials, score_trials, write_trials

# 10 enrolled speakers with 8 x 2 s training and 4 x 2 s test sentences, plus 5
# held-out impostor speakers
TOY_CORPUS = dict(n_speakers=10, utts_per_speaker=8, seconds_per_utt=2.0, sample_rate=8000,
                  seed=7, test_utts=4, impostor_speakers=5, impostor_utts=4)

# 129 taps at 8 kHz span the same 16 ms as 251 taps at 16 kHz; single precision for speed
TOY_TRAIN = TrainConfig(
    seed=7, lr=0.0002, epochs=40, random_offsets=True, sample_rate=8000, n_filters=32,
    filter_length=129, conv_channels=(32, 32), conv_lengths=(5, 5), pool_widths=(3, 3, 3),
    fc_sizes=(256, 256, 256), dtype="float32")


def make_toy_corpus(out_dir, **overrides):
    """Write the toy corpus (idempotent for a given directory) and return its manifest."""
    out_dir = Path(out_dir)
    if (out_dir / "manifest.csv").exists():
        return Manifest.read(out_dir / "manifest.csv")
    return synth_corpus(out_dir, **{**TOY_CORPUS, **overrides})[0]


def speaker_index(manifest):
    return {s: i for i, s in enumerate(manifest.speakers("train"))}


@dataclass
class ToySets:
    manifest: Manifest
    index: dict
    train: object
    test: object

    @classmethod
    def load(cls, manifest, config=TOY_TRAIN):
        index = speaker_index(manifest)
        rate = config.sample_rate
        kw = dict(chunk_ms=config.chunk_ms, overlap_ms=config.overlap_ms, dtype=np.dtype(config.dtype))
        train_set = build_chunk_set(load_utterances(manifest, "train", rate), index, **kw)
        test_set = build_chunk_set(load_utterances(manifest, "test", rate), index, **kw)
        return cls(manifest, index, train_set, test_set)


@dataclass
class ToyRun:
    mode: str
    seed: int
    logs: list
    cer: list
    network: object = field(repr=False)
    seconds: float = 0.0
    eer_dvector: float | None = None
    eer_posterior: float | None = None
    masses: list = field(default_factory=list)

    @property
    def best_cer(self):
        return min(self.cer)

    def fer(self, epoch):
        return self.logs[epoch - 1].eval_fer


def run_toy(sets, mode="sinc", seed=7, config=TOY_TRAIN, out_dir=None, verify=True,
            impostors_per_genuine=10):
    """Train one toy model and evaluate it; writes logs and reports when ``out_dir`` is given.

    Sentence-level CER on the test split is recorded after every epoch.
    """
    config = config.replace(seed=seed, cnn_mode=mode)
    network = build_network(config.model_config(), len(sets.index), seed=seed)
    cer = []
    start = time.perf_counter()
    _, logs = train(network, sets.train, config, sets.test,
                    epoch_callback=lambda e, net, entry: cer.append(sentence_error_rate(net, sets.test)))
    run = ToyRun(mode, seed, logs, cer, network, time.perf_counter() - start)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_log(out / "train_log.csv", logs)
        with open(out / "cer.csv", "w") as fh:
            fh.write("epoch,cer\n")
            fh.writelines(f"{e},{c:.4f}\n" for e, c in enumerate(cer, 1))
        save_checkpoint(out / "model.snc", network, speakers=sorted(sets.index, key=sets.index.get),
                        epoch=config.epochs)
    if verify:
        trials = make_trials(sets.manifest, impostors_per_genuine, seed)
        dvec, post = score_trials(network, sets.manifest, trials, sets.index,
                                  config.chunk_ms, config.overlap_ms, config.sample_rate)
        reports = {"dvector": eer_report(dvec), "posterior": eer_report(post)}
        run.eer_dvector = reports["dvector"]["eer_percent"]
        run.eer_posterior = reports["posterior"]["eer_percent"]
        if out is not None:
            write_trials(out / "trials_dvector.csv", dvec)
            write_trials(out / "trials_posterior.csv", post)
            (out / "eer_report.json").write_text(format_report(reports))
    if mode == "sinc":
        freqs, cumulative, _, _ = cumulative_report(network, out)
        run.masses = band_masses(freqs, cumulative)
    return run


def low_band_wins(masses):
    """True when the 0-500 Hz band carries more cumulative mass than every other band."""
    values = [m for _, _, m in masses]
    return all(values[0] > v for v in values[1:])


def compare_runs(sinc_run, cnn_run, out_path=None):
    """Convergence comparison of two runs; returns ``(rows, summary)``."""
    return compare_convergence(sinc_run.logs, cnn_run.logs, out_path)


def summary_json(runs):
    """Deterministic JSON summary of a list of runs (timings excluded)."""
    items = []
    for r in runs:
        items.append({"mode": r.mode, "seed": r.seed, "final_fer": r.logs[-1].eval_fer,
                      "best_cer": r.best_cer, "final_cer": r.cer[-1],
                      "eer_dvector": r.eer_dvector, "eer_posterior": r.eer_posterior,
                      "band_masses": [m for _, _, m in r.masses]})
    return json.dumps(items, indent=2, sort_keys=True) + "\n"


def untrained_mel_coverage(n_filters=80, sample_rate=16000, f_min=30.0, f_max=8000.0, length=251,
                           n_fft=4096):
    """``(edges_increasing, covered)`` for a freshly mel-initialized bank."""
    params = fb.mel_initialize(n_filters, sample_rate, f_min, f_max)
    bank = fb.SincFilterBank.from_cutoffs(params, length, sample_rate)
    f1, f2 = params.absolute()
    increasing = bool(np.all(np.diff(f1) > 0) and np.all(np.diff(f2) > 0))
    cumulative = fb.cumulative_response(bank, n_fft)
    freqs = fb.response_freqs_hz(n_fft, sample_rate)
    sel = (freqs >= f_min) & (freqs <= f_max)
    return increasing, bool(np.all(cumulative[sel] > 0))
