import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def f1():
    from gendisc.synthetic import fixture_f1

    return fixture_f1()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_corpus(seed, n_docs=50, vocab_size=12, n_classes=3, max_len=9):
    """Random encoded documents ending in EOS, with every class present."""
    from gendisc.text import EOS, Dataset

    r = np.random.default_rng(seed)
    docs, labels = [], []
    for i in range(n_docs):
        n = int(r.integers(1, max_len))
        docs.append(np.concatenate([r.integers(3, vocab_size, n), [EOS]]).astype(np.int64))
        labels.append(i % n_classes)
    return Dataset(docs, labels, n_classes, f"random{seed}")


def pytest_terminal_summary(terminalreporter):
    from verdicts import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
