"""Acceptance suite: one verdict line per criterion, printed in the terminal summary.

The toy-experiment criteria (6, 7, 8, 10, 11) share one module-scoped set of
training runs: SincNet and the standard CNN for three seeds on the seed-7
corpus, plus a repeat of seed 7 for the determinism check.
"""

import time

import numpy as np
import pytest

from conftest import record_criterion
from sincnet import filterbank as fb
from sincnet.experiment import (TOY_TRAIN, ToySets, compare_runs, low_band_wins, make_toy_corpus,
                                run_toy, untrained_mel_coverage)
from sincnet.gradcheck import run_gradcheck
from sincnet.nn import first_layer_param_count
from sincnet.verification import equal_error_rate

SEEDS = (7, 8, 9)


def majority(flags):
    return sum(bool(f) for f in flags) >= 2


# -- analytic criteria ------------------------------------------------------------------

def test_criterion_01_gradient_check():
    start = time.perf_counter()
    worst, passed = run_gradcheck(seed=7, n_networks=20, threshold=1e-4)
    seconds = time.perf_counter() - start
    ok = passed and seconds < 30.0
    record_criterion(1, "gradient check, 20 tiny networks", ok,
                     f"max rel err {worst:.2e} (< 1e-4), {seconds:.1f} s (< 30 s)")
    assert ok


def test_criterion_02_parameter_counts():
    counts = {(mode, length): first_layer_param_count(mode, 80, length)
              for mode in ("standard", "sinc") for length in (100, 200)}
    expected = {("standard", 100): 8000, ("sinc", 100): 160, ("standard", 200): 16000, ("sinc", 200): 160}
    ok = counts == expected
    record_criterion(2, "first-layer parameter counts", ok,
                     f"L=100: {counts['standard', 100]} vs {counts['sinc', 100]}; "
                     f"L=200: {counts['standard', 200]} vs {counts['sinc', 200]}")
    assert ok


def test_criterion_03_symmetric_compute():
    half_counter, full_counter = fb.EvalCounter(), fb.EvalCounter()
    half = fb.mirror_half(fb.build_half_filter(0.05, 0.15, 251, counter=half_counter))
    full = fb.build_filter(0.05, 0.15, 251, counter=full_counter)
    ok = half_counter.pairs == 126 and full_counter.pairs == 251 and np.array_equal(half, full)
    record_criterion(3, "half-filter evaluation count", ok,
                     f"{half_counter.pairs} vs {full_counter.pairs} evaluations, "
                     f"bitwise equal: {np.array_equal(half, full)}")
    assert ok


def test_criterion_04_filter_fidelity():
    taps = fb.build_filter(0.05, 0.15, 251)
    n_fft = 4096
    mag = fb.frequency_response(taps, n_fft)
    center_db = 20 * np.log10(mag[round(0.10 * n_fft)])
    stop_db = 20 * np.log10(mag[round(0.40 * n_fft)])
    ok = abs(center_db - 0.0) <= 1.5 and center_db - stop_db >= 30.0
    record_criterion(4, "band-pass fidelity (0.05, 0.15), L=251", ok,
                     f"center {center_db:+.4f} dB (ideal 0 dB +-1.5), 0.40 is {center_db - stop_db:.1f} dB down (>= 30)")
    assert ok


def test_criterion_05_mel_coverage():
    increasing, covered = untrained_mel_coverage(80, 16000, 30.0, 8000.0)
    ok = increasing and covered
    record_criterion(5, "mel initialization coverage", ok,
                     f"edges strictly increasing: {increasing}, cumulative > 0 on [30, 8000] Hz: {covered}")
    assert ok


def test_criterion_09_eer_estimator():
    from test_verification import brute_force_eer
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n_gen, n_imp = rng.integers(5, 500, 2)
        gen = rng.normal(rng.uniform(0, 3), 1.0, n_gen)
        imp = rng.normal(0.0, 1.0, n_imp)
        labels = np.r_[np.ones(n_gen, bool), np.zeros(n_imp, bool)]
        got = equal_error_rate(np.r_[gen, imp], labels)
        worst = max(worst, abs(got - brute_force_eer(list(gen), list(imp))))
    separable = equal_error_rate([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])
    scores = rng.standard_normal(20000)
    same = equal_error_rate(scores, np.arange(20000) < 10000)
    ok = worst <= 0.1 and separable == 0.0 and abs(same - 50.0) <= 5.0
    record_criterion(9, "EER estimator", ok,
                     f"max |oracle diff| {worst:.2e} pp (<= 0.1), separable {separable}, "
                     f"identical n=10000 each {same:.2f} (50 +- 5)")
    assert ok


# -- toy experiment ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    sets = ToySets.load(make_toy_corpus(root / "corpus"), TOY_TRAIN)
    runs = {}
    for seed in SEEDS:
        for mode in ("sinc", "standard"):
            start = time.perf_counter()
            run = run_toy(sets, mode, seed, TOY_TRAIN, out_dir=root / f"{mode}_{seed}")
            run.seconds = time.perf_counter() - start
            runs[mode, seed] = run
    repeat = {mode: run_toy(sets, mode, SEEDS[0], TOY_TRAIN, out_dir=root / f"repeat_{mode}_{SEEDS[0]}")
              for mode in ("sinc", "standard")}
    return root, runs, repeat


@pytest.mark.slow
def test_criterion_06_toy_identification(toy):
    _, runs, _ = toy
    run = runs["sinc", 7]
    reached = [e for e, c in enumerate(run.cer, 1) if c <= 5.0]
    ok = bool(reached) and reached[0] <= 50 and run.seconds < 600
    first = reached[0] if reached else None
    record_criterion(6, "toy identification, seed 7", ok,
                     f"CER <= 5% first at epoch {first} (best {run.best_cer:.1f}%, final {run.cer[-1]:.1f}%), "
                     f"run time {run.seconds:.0f} s (< 600 s)")
    assert ok


@pytest.mark.slow
def test_criterion_07_convergence(toy):
    root, runs, _ = toy
    verdicts, parts = [], []
    for seed in SEEDS:
        sinc, cnn = runs["sinc", seed], runs["standard", seed]
        compare_runs(sinc, cnn, root / f"convergence_{seed}.csv")
        at10 = sinc.fer(10) < cnn.fer(10)
        final = sinc.logs[-1].eval_fer <= cnn.logs[-1].eval_fer
        verdicts.append(at10 and final)
        parts.append(f"seed {seed}: ep10 {sinc.fer(10):.2f} vs {cnn.fer(10):.2f}, "
                     f"final {sinc.logs[-1].eval_fer:.2f} vs {cnn.logs[-1].eval_fer:.2f}")
    ok = majority(verdicts)
    record_criterion(7, "SincNet vs CNN held-out FER", ok,
                     f"{sum(verdicts)}/3 seeds hold ({'; '.join(parts)})")
    assert ok


@pytest.mark.slow
def test_criterion_08_verification(toy):
    _, runs, _ = toy
    bounded, ordered, parts = [], [], []
    for seed in SEEDS:
        run = runs["sinc", seed]
        bounded.append(run.eer_dvector <= 15.0 and run.eer_posterior <= 15.0)
        ordered.append(run.eer_posterior <= run.eer_dvector)
        parts.append(f"seed {seed}: d-vector {run.eer_dvector:.2f}%, DNN-class {run.eer_posterior:.2f}%")
    ok = all(bounded) and majority(ordered)
    record_criterion(8, "verification EER", ok,
                     f"all <= 15%: {all(bounded)}, DNN-class <= d-vector in {sum(ordered)}/3 ({'; '.join(parts)})")
    assert ok


@pytest.mark.slow
def test_criterion_10_determinism(toy):
    root, _, _ = toy
    names = ["train_log.csv", "cer.csv", "model.snc", "trials_dvector.csv", "trials_posterior.csv",
             "eer_report.json"]
    mismatched = []
    for mode in ("sinc", "standard"):
        for name in names + (["cumulative_response.csv", "bands.csv"] if mode == "sinc" else []):
            a = (root / f"{mode}_7" / name).read_bytes()
            b = (root / f"repeat_{mode}_7" / name).read_bytes()
            if a != b:
                mismatched.append(f"{mode}/{name}")
    ok = not mismatched
    record_criterion(10, "bytewise determinism of seed-7 runs", ok,
                     "all logs, checkpoints and reports identical" if ok else f"differs: {mismatched}")
    assert ok


@pytest.mark.slow
def test_criterion_11_low_band(toy):
    _, runs, _ = toy
    verdicts, parts = [], []
    for seed in SEEDS:
        masses = runs["sinc", seed].masses
        verdicts.append(low_band_wins(masses))
        runner_up = max(m for _, _, m in masses[1:])
        parts.append(f"seed {seed}: 0-500 Hz {masses[0][2]:.0f} vs next best {runner_up:.0f}")
    ok = majority(verdicts)
    record_criterion(11, "0-500 Hz cumulative mass dominates", ok,
                     f"{sum(verdicts)}/3 seeds ({'; '.join(parts)})")
    assert ok
