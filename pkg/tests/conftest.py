import numpy as np
import pytest

from dlmorder.corpus import gen_copy, split
from dlmorder.model import ModelConfig, init_params, train

COPY_CONFIG = dict(vocab_size=9, dim=16, layers=1, heads=1, max_len=6)


@pytest.fixture(scope="session")
def copy_corpus():
    return gen_copy(9, 3, 2000, seed=0)


@pytest.fixture(scope="session")
def copy_splits(copy_corpus):
    return split(copy_corpus, 0.8, 0)


@pytest.fixture(scope="session")
def trained_copy(copy_splits):
    """1-layer copy-task model, the same recipe as configs/copy.json."""
    params = init_params(ModelConfig(**COPY_CONFIG), seed=0)
    return train(params, copy_splits[0], 2000, 0.3, seed=0, batch_size=64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_params(vocab=7, dim=8, layers=1, heads=1, max_len=8, seed=0, std=0.5):
    params = init_params(ModelConfig(vocab, dim, layers, heads, max_len), seed=seed, std=std)
    params.out_b[...] = np.random.default_rng(seed + 1).normal(0.0, 0.5, vocab)
    return params


_VERDICTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(number, name, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:>2} {name}: {detail}"
        _VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
