import numpy as np
import pytest

from sincnet.dataio import Manifest, build_chunk_set, load_utterances, synth_corpus
from sincnet.trainer import TrainConfig

SMALL_RATE = 8000


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Four speakers, 1 s utterances at 8 kHz, plus two impostor speakers."""
    root = tmp_path_factory.mktemp("small_corpus")
    synth_corpus(root, 4, 4, 1.0, SMALL_RATE, seed=3, test_utts=2, impostor_speakers=2, impostor_utts=2)
    return Manifest.read(root / "manifest.csv")


@pytest.fixture(scope="session")
def small_sets(small_corpus):
    index = {s: i for i, s in enumerate(small_corpus.speakers("train"))}
    train = build_chunk_set(load_utterances(small_corpus, "train"), index)
    test = build_chunk_set(load_utterances(small_corpus, "test"), index)
    return index, train, test


@pytest.fixture
def small_config():
    return TrainConfig(seed=1, epochs=5, minibatch=16, sample_rate=SMALL_RATE, n_filters=8,
                       filter_length=33, conv_channels=(8, 8), fc_sizes=(32, 32), dtype="float32")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = {}


def record_criterion(number, title, passed, detail):
    """Store one acceptance verdict; all verdicts are printed in the terminal summary."""
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
