import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sincnet.dataio import Manifest, ManifestEntry, Utterance
from sincnet.errors import ConfigurationError, DegenerateEmbeddingError, InvalidTrialSetError
from sincnet.nn import build_network
from sincnet.trainer import train
from sincnet.verification import (GENUINE, IMPOSTOR, DVector, Trial, cosine_score, eer_report,
                                  eer_with_threshold, enrollment_dvector, equal_error_rate,
                                  extract_dvector, format_report, make_trials, posterior_score,
                                  score_trials, write_trials)


def brute_force_eer(genuine, impostor):
    """The documented sweep rule evaluated by direct counting at every threshold."""
    thresholds = sorted(set(genuine) | set(impostor)) + [float("inf")]
    rates = []
    for t in thresholds:
        far = sum(1 for s in impostor if s >= t) / len(impostor)
        frr = sum(1 for s in genuine if s < t) / len(genuine)
        rates.append((far, frr))
    for k, (far, frr) in enumerate(rates):
        if far - frr == 0:
            return 100.0 * far
        if far - frr < 0:
            if k == 0:
                return 100.0 * far
            pf, pr = rates[k - 1]
            lam = (pf - pr) / ((pf - pr) - (far - frr))
            return 100.0 * (pf + lam * (far - pf))
    raise AssertionError("sweep ends with nothing accepted, so FAR - FRR must reach <= 0")


# -- EER --------------------------------------------------------------------------------

def test_eer_separable_is_zero():
    assert equal_error_rate([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 0.0


def test_eer_reversed_is_hundred():
    assert equal_error_rate([0.3, 0.7], [True, False]) == 100.0


def test_eer_string_labels_and_report():
    trials = [Trial("a", "u1", GENUINE, 0.9), Trial("a", "u2", IMPOSTOR, 0.1),
              Trial("a", "u3", IMPOSTOR, 0.2)]
    report = eer_report(trials)
    assert report["eer_percent"] == 0.0
    assert report["n_genuine"] == 1 and report["n_impostor"] == 2
    assert set(json.loads(format_report(report))) == {"eer_percent", "threshold", "n_genuine", "n_impostor"}


def test_eer_needs_both_classes():
    with pytest.raises(InvalidTrialSetError):
        equal_error_rate([0.1, 0.2], [1, 1])
    with pytest.raises(InvalidTrialSetError):
        equal_error_rate([0.1, np.nan], [1, 0])


def test_eer_matches_brute_force_on_random_sets():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n_gen, n_imp = rng.integers(1, 120, 2)
        shift = rng.uniform(-1, 3)
        gen = rng.normal(shift, 1.0, n_gen)
        imp = rng.normal(0.0, 1.0, n_imp)
        if rng.random() < 0.3:
            gen, imp = np.round(gen, 1), np.round(imp, 1)
        scores = np.concatenate([gen, imp])
        labels = np.r_[np.ones(n_gen, bool), np.zeros(n_imp, bool)]
        assert abs(equal_error_rate(scores, labels) - brute_force_eer(list(gen), list(imp))) < 0.1


def test_eer_identical_distributions_near_fifty():
    rng = np.random.default_rng(0)
    scores = rng.standard_normal(10000)
    labels = np.arange(10000) < 5000
    assert abs(equal_error_rate(scores, labels) - 50.0) <= 5.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-5000, 5000), min_size=1, max_size=40),
       st.lists(st.integers(-5000, 5000), min_size=1, max_size=40))
def test_eer_invariant_under_monotone_transform(gen, imp):
    # millesimal grid so the transform stays strictly increasing in floating point
    scores = np.array(gen + imp) / 1000.0
    labels = np.r_[np.ones(len(gen), bool), np.zeros(len(imp), bool)]
    base = equal_error_rate(scores, labels)
    assert 0.0 <= base <= 100.0
    assert equal_error_rate(np.arctan(scores) * 3 + 7, labels) == pytest.approx(base, abs=1e-9)


def test_eer_threshold_is_within_score_range():
    rng = np.random.default_rng(3)
    scores = np.r_[rng.normal(1, 1, 50), rng.normal(0, 1, 200)]
    labels = np.arange(250) < 50
    _, t = eer_with_threshold(scores, labels)
    assert scores.min() <= t <= scores.max()


# -- cosine and d-vectors ---------------------------------------------------------------

def test_cosine_examples():
    a = np.array([1.0, 2.0, -3.0])
    assert cosine_score(a, a) == pytest.approx(1.0)
    assert cosine_score([1, 0], [0, 5]) == 0.0
    assert cosine_score(a, -a) == pytest.approx(-1.0)
    with pytest.raises(DegenerateEmbeddingError):
        cosine_score(a, np.zeros(3))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_cosine_scale_invariance(a, b, alpha, beta):
    a, b = np.array(a), np.array(b)
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    assert abs(cosine_score(alpha * a, beta * b) - cosine_score(a, b)) < 1e-12


def test_dvector_rejects_degenerate_values():
    with pytest.raises(DegenerateEmbeddingError):
        DVector(np.zeros(4))
    with pytest.raises(DegenerateEmbeddingError):
        DVector(np.array([1.0, np.inf]))


def test_enrollment_is_unit_mean():
    e = enrollment_dvector([np.array([2.0, 0.0]), np.array([0.0, 2.0])])
    np.testing.assert_allclose(e.values, [np.sqrt(0.5), np.sqrt(0.5)])


@pytest.fixture(scope="module")
def trained_small(small_sets):
    from sincnet.trainer import TrainConfig
    index, train_set, _ = small_sets
    cfg = TrainConfig(seed=2, epochs=8, minibatch=16, sample_rate=8000, n_filters=8, filter_length=33,
                      conv_channels=(8, 8), fc_sizes=(32, 32))
    net = build_network(cfg.model_config(), len(index), seed=cfg.seed)
    train(net, train_set, cfg)
    return net


def test_dvector_single_chunk_duplicates_and_order(trained_small, small_sets):
    _, _, test_set = small_sets
    chunks = test_set.sentence_chunks(0)
    one = extract_dvector(trained_small, chunks[:1])
    np.testing.assert_allclose(one.values, trained_small.embed(chunks[:1])[0], rtol=1e-5, atol=1e-6)
    twice = extract_dvector(trained_small, np.concatenate([chunks[:1], chunks[:1]]))
    np.testing.assert_allclose(twice.values, one.values, rtol=1e-5, atol=1e-6)
    fwd = extract_dvector(trained_small, chunks)
    rev = extract_dvector(trained_small, chunks[::-1])
    np.testing.assert_allclose(fwd.values, rev.values, rtol=1e-5, atol=1e-6)


def test_dvector_accepts_utterances(trained_small, small_sets):
    _, _, test_set = small_sets
    utt = Utterance(test_set.utterances[0], 8000, "x", "u0")
    d = extract_dvector(trained_small, utt)
    np.testing.assert_allclose(d.values, extract_dvector(trained_small, test_set.sentence_chunks(0)).values,
                               rtol=1e-5, atol=1e-7)


def test_trained_embeddings_separate_speakers(trained_small, small_sets):
    _, _, test_set = small_sets
    vecs = [extract_dvector(trained_small, test_set.sentence_chunks(s)) for s in range(test_set.n_sentences)]
    labels = test_set.sentence_labels
    within, across = [], []
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            (within if labels[i] == labels[j] else across).append(cosine_score(vecs[i], vecs[j]))
    assert np.mean(within) > np.mean(across)


def test_posterior_scores(trained_small, small_sets):
    _, _, test_set = small_sets
    genuine, impostor = [], []
    for s in range(test_set.n_sentences):
        chunks = test_set.sentence_chunks(s)
        for k in range(trained_small.n_classes):
            score = posterior_score(trained_small, chunks, k)
            assert 0.0 <= score <= 1.0
            (genuine if k == test_set.sentence_labels[s] else impostor).append(score)
    assert np.mean(genuine) > np.mean(impostor)
    with pytest.raises(ConfigurationError):
        posterior_score(trained_small, test_set.sentence_chunks(0), trained_small.n_classes)


def test_posterior_score_uniform_model(small_config):
    net = build_network(small_config.model_config(), 4, seed=0)
    net.layers[-2].params["weight"][:] = 0.0
    net.layers[-2].params["bias"][:] = 0.0
    x = np.random.default_rng(0).standard_normal((3, small_config.chunk_samples)).astype(np.float32)
    assert posterior_score(net, x, 2) == pytest.approx(0.25)


# -- trials -----------------------------------------------------------------------------

def _trial_manifest(n_test=5, n_impostor=3):
    entries = [ManifestEntry(f"tr{i}.wav", f"s{i % 2}", "train") for i in range(4)]
    entries += [ManifestEntry(f"te{i}.wav", f"s{i % 2}", "test") for i in range(n_test)]
    entries += [ManifestEntry(f"im{i}.wav", f"x{i}", "impostor") for i in range(n_impostor)]
    return Manifest(entries)


def test_make_trials_counts_and_determinism():
    m = _trial_manifest()
    trials = make_trials(m, 10, seed=4)
    assert sum(t.label == GENUINE for t in trials) == 5
    assert sum(t.label == IMPOSTOR for t in trials) == 50
    assert trials == make_trials(m, 10, seed=4)
    assert all(t.test_utterance.startswith("im") for t in trials if t.label == IMPOSTOR)


def test_make_trials_errors():
    with pytest.raises(ConfigurationError):
        make_trials(_trial_manifest(n_impostor=0))
    m = _trial_manifest()
    m.entries.append(ManifestEntry("leak.wav", "s0", "impostor"))
    with pytest.raises(ConfigurationError):
        make_trials(m)


def test_score_trials_end_to_end(trained_small, small_corpus, small_sets, tmp_path):
    index, _, _ = small_sets
    trials = make_trials(small_corpus, 10, seed=0)
    dvec, post = score_trials(trained_small, small_corpus, trials, index)
    assert len(dvec) == len(post) == len(trials) == 11 * len(small_corpus.split("test"))
    assert all(np.isfinite(t.score) for t in dvec + post)
    write_trials(tmp_path / "t.csv", dvec)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "claimed_speaker,utterance,label,score" and len(lines) == len(trials) + 1
