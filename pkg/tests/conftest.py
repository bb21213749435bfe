import numpy as np
import pytest

from ambivox.corpus import build_corpus, split_records


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Shared 8-speaker corpus for attacker and trainer tests."""
    root = tmp_path_factory.mktemp("small_corpus")
    records = build_corpus(
        root, n_speakers=8, utterances_per_speaker=8, vocabulary_size=16,
        words_per_utterance=4, seed=3,
    )
    return root, records


@pytest.fixture(scope="session")
def small_train_test(small_corpus):
    _, records = small_corpus
    return split_records(records, "train"), split_records(records, "test")


@pytest.fixture(scope="session")
def small_waves(small_train_test):
    train, test = small_train_test
    return (
        [r.load_audio() for r in train],
        [r.load_audio() for r in test],
    )


@pytest.fixture(scope="session")
def tone():
    def make(freq, seconds=1.0, rate=16000, amp=0.9):
        t = np.arange(int(seconds * rate)) / rate
        return amp * np.sin(2.0 * np.pi * freq * t)

    return make
