"""Speaker verification: d-vector cosine scoring, posterior scoring, trials and EER."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataio import Utterance, chunk, normalize_peak
from .errors import (ConfigurationError, DegenerateEmbeddingError, InvalidTrialSetError)
from .trainer import predict_posteriors

GENUINE = "genuine"
IMPOSTOR = "impostor"


@dataclass
class DVector:
    values: np.ndarray
    speaker_id: str = ""
    utterance_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise DegenerateEmbeddingError(f"d-vector of {self.utterance_id!r} is not finite")
        if np.linalg.norm(self.values) == 0.0:
            raise DegenerateEmbeddingError(f"d-vector of {self.utterance_id!r} has zero norm")


@dataclass
class Trial:
    claimed_speaker: str
    test_utterance: str
    label: str
    score: float | None = None


def utterance_chunks(utterance, chunk_ms=200.0, overlap_ms=10.0, dtype=np.float32):
    """Peak-normalized inference chunks of an utterance (short ones are zero-padded)."""
    norm = Utterance(normalize_peak(utterance.samples), utterance.sample_rate,
                     utterance.speaker_id, utterance.utterance_id)
    return chunk(norm, chunk_ms, overlap_ms, training=False).astype(dtype)


def _as_chunks(network, utterance, chunk_ms, overlap_ms):
    if isinstance(utterance, Utterance):
        dtype = np.dtype(network.config.dtype) if network.config else np.float32
        return utterance_chunks(utterance, chunk_ms, overlap_ms, dtype)
    chunks = np.asarray(utterance)
    return chunks[None] if chunks.ndim == 1 else chunks


def extract_dvector(network, utterance, chunk_ms=200.0, overlap_ms=10.0):
    """Mean last-hidden-layer activation over the chunks of ``utterance``.

    ``utterance`` is an :class:`Utterance` or an array of ready-made chunks.
    """
    chunks = _as_chunks(network, utterance, chunk_ms, overlap_ms)
    hidden = np.concatenate([network.embed(chunks[i:i + 256]) for i in range(0, len(chunks), 256)])
    speaker = getattr(utterance, "speaker_id", "")
    utt_id = getattr(utterance, "utterance_id", "")
    return DVector(hidden.astype(np.float64).mean(axis=0), speaker, utt_id)


def _values(v):
    return v.values if isinstance(v, DVector) else np.asarray(v, dtype=np.float64)


def cosine_score(a, b):
    a, b = _values(a), _values(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateEmbeddingError("cosine score of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def enrollment_dvector(dvectors, speaker_id=""):
    """Mean of a speaker's d-vectors, renormalized to unit length."""
    mean = np.mean([_values(d) for d in dvectors], axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise DegenerateEmbeddingError(f"enrollment d-vector of {speaker_id!r} has zero norm")
    return DVector(mean / norm, speaker_id, "enroll")


def posterior_score(network, utterance, claimed_index, chunk_ms=200.0, overlap_ms=10.0):
    """Sentence-averaged softmax posterior of the claimed class."""
    if not 0 <= claimed_index < network.n_classes:
        raise ConfigurationError(f"claimed class {claimed_index} outside 0..{network.n_classes - 1}")
    chunks = _as_chunks(network, utterance, chunk_ms, overlap_ms)
    return float(predict_posteriors(network, chunks).mean(axis=0)[claimed_index])


def make_trials(manifest, impostors_per_genuine=10, seed=0):
    """One genuine and ``impostors_per_genuine`` impostor trials per test sentence."""
    genuine = manifest.split("test")
    pool = manifest.split("impostor")
    if not genuine:
        raise ConfigurationError("manifest has no test sentences for genuine trials")
    if not pool:
        raise ConfigurationError("impostor pool is empty")
    overlap = {e.speaker_id for e in pool} & set(manifest.speakers("train"))
    if overlap:
        raise ConfigurationError(f"impostor speakers overlap the training speakers: {sorted(overlap)}")
    rng = np.random.default_rng(seed)
    trials = []
    for entry in genuine:
        trials.append(Trial(entry.speaker_id, entry.path, GENUINE))
        picks = rng.choice(len(pool), size=impostors_per_genuine,
                           replace=len(pool) < impostors_per_genuine)
        trials.extend(Trial(entry.speaker_id, pool[i].path, IMPOSTOR) for i in picks)
    return trials


def _split_scores(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.dtype.kind in "US":
        labels = labels == GENUINE
    labels = labels.astype(bool)
    if scores.shape != labels.shape:
        raise InvalidTrialSetError("scores and labels differ in length")
    if not np.all(np.isfinite(scores)):
        raise InvalidTrialSetError("scores must be finite")
    gen, imp = scores[labels], scores[~labels]
    if len(gen) == 0 or len(imp) == 0:
        raise InvalidTrialSetError("need both genuine and impostor trials")
    return np.sort(gen), np.sort(imp)


def eer_with_threshold(scores, labels):
    """``(eer_percent, threshold)``; a trial is accepted when ``score >= threshold``.

    FAR and FRR are swept over the sorted unique scores (plus +inf, where
    nothing is accepted). Between the two thresholds bracketing the sign
    change of FAR - FRR both rates are interpolated linearly to the crossing.
    """
    gen, imp = _split_scores(scores, labels)
    thresholds = np.append(np.unique(np.concatenate([gen, imp])), np.inf)
    far = (len(imp) - np.searchsorted(imp, thresholds, side="left")) / len(imp)
    frr = np.searchsorted(gen, thresholds, side="left") / len(gen)
    diff = far - frr
    j = int(np.argmax(diff <= 0))
    if diff[j] == 0 or j == 0:
        return 100.0 * far[j], float(thresholds[j])
    i = j - 1
    lam = diff[i] / (diff[i] - diff[j])
    eer = far[i] + lam * (far[j] - far[i])
    hi = thresholds[j] if np.isfinite(thresholds[j]) else thresholds[i]
    return 100.0 * float(eer), float(thresholds[i] + lam * (hi - thresholds[i]))


def equal_error_rate(scores, labels):
    return eer_with_threshold(scores, labels)[0]


def eer_report(trials):
    scores = [t.score for t in trials]
    labels = [t.label == GENUINE for t in trials]
    eer, threshold = eer_with_threshold(scores, labels)
    return {"eer_percent": eer, "threshold": threshold,
            "n_genuine": int(sum(labels)), "n_impostor": int(len(labels) - sum(labels))}


def format_report(report):
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def write_trials(path, trials):
    with open(path, "w") as fh:
        fh.write("claimed_speaker,utterance,label,score\n")
        for t in trials:
            fh.write(f"{t.claimed_speaker},{t.test_utterance},{t.label},{t.score:.8f}\n")


def score_trials(network, manifest, trials, speaker_index, chunk_ms=200.0, overlap_ms=10.0,
                 sample_rate=None):
    """Score ``trials`` with both back ends; returns ``(dvector_trials, posterior_trials)``.

    The enrollment d-vector of a claimed speaker averages the d-vectors of
    its ``enroll`` utterances, or of its ``train`` utterances when the
    manifest has no enrollment split for that speaker.
    """
    from .dataio import read_wav

    cache = {}

    def load(path, speaker):
        if path not in cache:
            entry = next(e for e in manifest.entries if e.path == path)
            utt = read_wav(manifest.resolve(entry), sample_rate, speaker)
            chunks = utterance_chunks(utt, chunk_ms, overlap_ms, np.dtype(network.config.dtype))
            cache[path] = (chunks, extract_dvector(network, chunks))
        return cache[path]

    enrolled = {}
    for speaker in sorted({t.claimed_speaker for t in trials}):
        entries = [e for e in manifest.split("enroll") if e.speaker_id == speaker]
        entries = entries or [e for e in manifest.split("train") if e.speaker_id == speaker]
        if not entries:
            raise ConfigurationError(f"no enrollment material for speaker {speaker!r}")
        enrolled[speaker] = enrollment_dvector([load(e.path, speaker)[1] for e in entries], speaker)

    dvec_trials, post_trials = [], []
    for t in trials:
        chunks, dvec = load(t.test_utterance, "")
        if t.claimed_speaker not in speaker_index:
            raise ConfigurationError(f"claimed speaker {t.claimed_speaker!r} is not a trained class")
        dvec_trials.append(Trial(t.claimed_speaker, t.test_utterance, t.label,
                                 cosine_score(dvec, enrolled[t.claimed_speaker])))
        post_trials.append(Trial(t.claimed_speaker, t.test_utterance, t.label,
                                 posterior_score(network, chunks, speaker_index[t.claimed_speaker])))
    return dvec_trials, post_trials
