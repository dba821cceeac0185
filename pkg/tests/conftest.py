import numpy as np
import pytest

from cyclecl.seqdata import GeneratorConfig, encode, generate_benchmark, make_encoder


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_benchmark():
    """Six short sequences (half anomalous) encoded with the frozen encoder."""
    base = GeneratorConfig(num_frames=240)
    seqs = generate_benchmark(base, 6, seed=3, split=0, anomaly_length=(20, 30))
    enc = make_encoder(seed=3)
    return [encode(s, enc) for s in seqs]


def unit_rows(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts, one line per criterion, at the end of the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
