"""WAV I/O, fixed-grid chunking, manifests and a synthetic multi-speaker corpus."""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigurationError, EmptyResultError, UnsupportedFormatError

SPLITS = ("train", "test", "enroll", "impostor")


@dataclass
class Utterance:
    samples: np.ndarray
    sample_rate: int
    speaker_id: str = ""
    utterance_id: str = ""

    def __post_init__(self):
        if len(self.samples) == 0:
            raise EmptyResultError(f"utterance {self.utterance_id!r} has no samples")

    @property
    def duration_ms(self):
        return 1000.0 * len(self.samples) / self.sample_rate


def read_wav(path, sample_rate=None, speaker_id="", utterance_id=None):
    """Read a mono 16-bit PCM RIFF/WAVE file, scaling samples by 1/32768."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            if fh.getcomptype() != "NONE":
                raise UnsupportedFormatError(f"{path}: codec {fh.getcomptype()!r} is not PCM")
            frames = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise UnsupportedFormatError(f"{path}: codec not supported ({exc})") from None
    if channels != 1:
        raise UnsupportedFormatError(f"{path}: channels={channels}, only mono is supported")
    if width != 2:
        raise UnsupportedFormatError(f"{path}: sample width={8 * width} bits, only 16-bit PCM is supported")
    if sample_rate is not None and rate != sample_rate:
        raise UnsupportedFormatError(f"{path}: sample rate={rate} Hz, expected {sample_rate} Hz")
    ints = np.frombuffer(frames, dtype="<i2")
    samples = ints.astype(np.float64) / 32768.0
    return Utterance(samples, rate, speaker_id, path.stem if utterance_id is None else utterance_id)


def write_wav(path, samples, sample_rate):
    """Write samples in [-1, 1) as mono 16-bit PCM; values are rounded and clipped."""
    ints = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(sample_rate))
        fh.writeframes(ints.astype("<i2").tobytes())


def normalize_peak(samples, peak=0.95):
    samples = np.asarray(samples, dtype=np.float64)
    top = np.max(np.abs(samples))
    if top == 0.0:
        return samples.copy()
    return samples * (peak / top)


def chunk_geometry(sample_rate, chunk_ms=200.0, overlap_ms=10.0):
    """``(window, stride)`` in samples."""
    window = int(round(chunk_ms * sample_rate / 1000.0))
    stride = int(round((chunk_ms - overlap_ms) * sample_rate / 1000.0))
    if window <= 0 or stride <= 0:
        raise ConfigurationError(f"chunk_ms={chunk_ms} and overlap_ms={overlap_ms} give an empty window or stride")
    return window, stride


def chunk(utterance, chunk_ms=200.0, overlap_ms=10.0, training=True):
    """Split into fixed-length windows on a regular grid; a trailing partial window is dropped.

    An utterance shorter than one window raises :class:`EmptyResultError` for
    training; for inference it yields a single zero-padded chunk.
    """
    samples = utterance.samples if isinstance(utterance, Utterance) else np.asarray(utterance)
    rate = utterance.sample_rate if isinstance(utterance, Utterance) else None
    if rate is None:
        raise ConfigurationError("chunk() needs an Utterance carrying its sample rate")
    window, stride = chunk_geometry(rate, chunk_ms, overlap_ms)
    n = len(samples)
    if n < window:
        if training:
            raise EmptyResultError(f"utterance of {n} samples is shorter than one {window}-sample chunk")
        padded = np.zeros((1, window), dtype=samples.dtype)
        padded[0, :n] = samples
        return padded
    count = (n - window) // stride + 1
    starts = np.arange(count) * stride
    return np.stack([samples[s:s + window] for s in starts])


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestEntry:
    path: str
    speaker_id: str
    split: str


@dataclass
class Manifest:
    entries: list = field(default_factory=list)
    root: Path = Path(".")

    def __post_init__(self):
        for e in self.entries:
            if e.split not in SPLITS:
                raise ConfigurationError(f"unknown split {e.split!r} for {e.path}")

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def speakers(self, split):
        return sorted({e.speaker_id for e in self.entries if e.split == split})

    def resolve(self, entry):
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def validate(self):
        """Check split disjointness and closed-set coverage."""
        seen = {}
        for e in self.entries:
            if e.path in seen and seen[e.path] != e.split:
                raise ConfigurationError(f"{e.path} appears in splits {seen[e.path]} and {e.split}")
            seen[e.path] = e.split
        train = set(self.speakers("train"))
        missing = set(self.speakers("test")) - train
        if missing:
            raise ConfigurationError(f"test speakers without training data: {sorted(missing)}")
        overlap = set(self.speakers("impostor")) & train
        if overlap:
            raise ConfigurationError(f"impostor speakers also used for training: {sorted(overlap)}")

    def write(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["path", "speaker_id", "split"])
            for e in self.entries:
                writer.writerow([e.path, e.speaker_id, e.split])

    @classmethod
    def read(cls, path):
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["path", "speaker_id", "split"]:
                raise ConfigurationError(f"{path}: expected header path,speaker_id,split")
            entries = [ManifestEntry(r["path"], r["speaker_id"], r["split"]) for r in reader]
        return cls(entries, path.parent)


# ---------------------------------------------------------------------------
# chunked datasets


@dataclass
class ChunkSet:
    """Chunks of a set of sentences with chunk-level and sentence-level labels."""

    chunks: np.ndarray
    labels: np.ndarray
    sentence: np.ndarray
    sentence_labels: np.ndarray
    utterance_ids: list
    utterances: list = field(default_factory=list, repr=False)
    window: int = 0

    @property
    def n_sentences(self):
        return len(self.sentence_labels)

    def sentence_chunks(self, index):
        return self.chunks[self.sentence == index]

    def random_chunks(self, rng):
        """Same number of chunks per sentence as the grid, at random offsets."""
        out = []
        for s, samples in enumerate(self.utterances):
            count = int(np.sum(self.sentence == s))
            starts = rng.integers(0, len(samples) - self.window + 1, size=count)
            out.extend(samples[st:st + self.window] for st in starts)
        return np.stack(out).astype(self.chunks.dtype), self.labels.copy()


def load_utterances(manifest, split, sample_rate=None):
    return [read_wav(manifest.resolve(e), sample_rate, e.speaker_id) for e in manifest.split(split)]


def build_chunk_set(utterances, speaker_index, chunk_ms=200.0, overlap_ms=10.0,
                    training=True, dtype=np.float32):
    """Peak-normalize and chunk utterances; labels come from ``speaker_index``."""
    chunks, labels, sentence, sentence_labels, ids, raw = [], [], [], [], [], []
    window = 0
    for s, utt in enumerate(utterances):
        samples = normalize_peak(utt.samples)
        norm = Utterance(samples, utt.sample_rate, utt.speaker_id, utt.utterance_id)
        window = chunk_geometry(utt.sample_rate, chunk_ms, overlap_ms)[0]
        c = chunk(norm, chunk_ms, overlap_ms, training=training)
        label = speaker_index.get(utt.speaker_id, -1)
        chunks.append(c)
        labels.extend([label] * len(c))
        sentence.extend([s] * len(c))
        sentence_labels.append(label)
        ids.append(utt.utterance_id)
        raw.append(samples)
    if not chunks:
        raise EmptyResultError("no utterances to chunk")
    return ChunkSet(np.concatenate(chunks).astype(dtype), np.asarray(labels), np.asarray(sentence),
                    np.asarray(sentence_labels), ids, raw, window)


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SynthSpeakerSpec:
    """Source-filter voice: glottal pulse train through formant resonators."""

    speaker_id: str
    pitch_hz: float
    formants_hz: tuple
    bandwidths_hz: tuple
    jitter: float = 0.01
    pitch_drift: float = 0.04
    noise_level: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not 80.0 <= self.pitch_hz <= 300.0:
            raise ConfigurationError(f"pitch {self.pitch_hz} Hz outside [80, 300]")
        if not 2 <= len(self.formants_hz) <= 3 or len(self.formants_hz) != len(self.bandwidths_hz):
            raise ConfigurationError("need 2-3 formants with matching bandwidths")


def random_speaker(speaker_id, rng, sample_rate, pitch_range=(100.0, 250.0)):
    nyq = sample_rate / 2.0
    formants = (rng.uniform(350.0, 850.0), rng.uniform(1000.0, 2200.0),
                min(rng.uniform(2400.0, 3200.0), 0.9 * nyq))
    bandwidths = (rng.uniform(60.0, 120.0), rng.uniform(80.0, 160.0), rng.uniform(120.0, 250.0))
    return SynthSpeakerSpec(speaker_id, float(rng.uniform(*pitch_range)), formants, bandwidths,
                            seed=int(rng.integers(2**31)))


def _resonator(freq, bandwidth, sample_rate):
    """Second-order resonator coefficients with unit gain at DC."""
    r = np.exp(-np.pi * bandwidth / sample_rate)
    theta = 2.0 * np.pi * freq / sample_rate
    a = [1.0, -2.0 * r * np.cos(theta), r * r]
    return [sum(a)], a


# formant multipliers of a few vowels relative to a speaker's neutral formants
VOWEL_FACTORS = (
    (1.00, 1.00, 1.00),
    (1.20, 0.85, 1.00),
    (0.80, 1.20, 1.05),
    (0.85, 0.80, 0.95),
    (1.05, 1.10, 1.00),
    (1.10, 0.80, 0.95),
)


def synthesize(spec, seconds, sample_rate, rng):
    """One utterance of ``spec``.

    A jittered pulse train with a slow intonation contour goes through a
    -12 dB/oct glottal tilt and the speaker's formant resonators. The formants
    are moved to a random vowel every 120-300 ms, an amplitude envelope is
    applied and low-level noise is added.
    """
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    contour = 1.0 + spec.pitch_drift * np.sin(2 * np.pi * rng.uniform(0.3, 1.2) * t + rng.uniform(0, 2 * np.pi))
    f0 = spec.pitch_hz * contour * (1.0 + spec.jitter * rng.standard_normal(n))
    phase = np.cumsum(f0) / sample_rate + rng.uniform()
    source = np.diff(np.floor(phase), prepend=np.floor(phase[0])).astype(np.float64)
    # two real poles near DC for the glottal spectral tilt
    signal = lfilter([1.0], [1.0, -0.97], source)
    signal = lfilter([1.0], [1.0, -0.97], signal)

    out = np.empty(n)
    states = [np.zeros(2) for _ in spec.formants_hz]
    start = 0
    while start < n:
        stop = min(n, start + int(rng.uniform(0.12, 0.30) * sample_rate))
        factors = VOWEL_FACTORS[rng.integers(len(VOWEL_FACTORS))]
        seg = signal[start:stop]
        for k, (freq, bw) in enumerate(zip(spec.formants_hz, spec.bandwidths_hz)):
            target = min(freq * factors[k], 0.45 * sample_rate)
            b, a = _resonator(target, bw, sample_rate)
            seg, states[k] = lfilter(b, a, seg, zi=states[k])
        out[start:stop] = seg
        start = stop
    out -= out.mean()
    envelope = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(3.0, 5.0) * t + rng.uniform(0, 2 * np.pi)) ** 2
    out = out * envelope
    out = out / np.max(np.abs(out))
    out = out + spec.noise_level * rng.standard_normal(n)
    return 0.9 * out / np.max(np.abs(out))


def synth_corpus(out_dir, n_speakers, utts_per_speaker, seconds_per_utt, sample_rate=16000, seed=0,
                 test_utts=0, impostor_speakers=0, impostor_utts=4):
    """Write a seeded toy corpus to ``out_dir`` and return its manifest.

    ``n_speakers`` speakers get ``utts_per_speaker`` training and
    ``test_utts`` test utterances each; ``impostor_speakers`` further speakers
    get ``impostor_utts`` utterances in the ``impostor`` split.
    """
    if n_speakers < 2:
        raise ConfigurationError("need at least two speakers")
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    total = n_speakers + impostor_speakers
    specs = [random_speaker(f"spk{i:03d}", rng, sample_rate) for i in range(total)]
    entries = []
    for i, spec in enumerate(specs):
        speaker_rng = np.random.default_rng(spec.seed)
        if i < n_speakers:
            plan = [("train", utts_per_speaker), ("test", test_utts)]
        else:
            plan = [("impostor", impostor_utts)]
        for split, count in plan:
            for j in range(count):
                audio = synthesize(spec, seconds_per_utt, sample_rate, speaker_rng)
                rel = f"wav/{spec.speaker_id}_{split}{j:02d}.wav"
                write_wav(out_dir / rel, audio, sample_rate)
                entries.append(ManifestEntry(rel, spec.speaker_id, split))
    manifest = Manifest(entries, out_dir)
    manifest.write(out_dir / "manifest.csv")
    with open(out_dir / "speakers.csv", "w") as fh:
        fh.write("speaker_id,pitch_hz,formants_hz\n")
        for spec in specs:
            fh.write(f"{spec.speaker_id},{spec.pitch_hz:.3f},{' '.join(f'{f:.1f}' for f in spec.formants_hz)}\n")
    return manifest, specs
