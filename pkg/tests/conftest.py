import numpy as np
import pytest

from cadnet.audio import SAMPLE_RATE, AudioSignal
from cadnet.dataset import featurize_record, load_manifest
from cadnet.synth import ScenarioConfig, generate_corpus


def tone(freq, dur, amp=0.5, sr=SAMPLE_RATE, phase=0.0):
    t = np.arange(int(round(dur * sr))) / sr
    return amp * np.sin(2 * np.pi * freq * t + phase)


def place(total_sec, bursts, freq=440.0, amp=0.5):
    """Silence of ``total_sec`` with tone bursts at ``[(start, end), ...]``."""
    x = np.zeros(int(round(total_sec * SAMPLE_RATE)))
    for lo, hi in bursts:
        i, j = int(round(lo * SAMPLE_RATE)), int(round(hi * SAMPLE_RATE))
        x[i:j] = tone(freq, (j - i) / SAMPLE_RATE, amp)
    return AudioSignal(x)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Four short online recordings, two teachers."""
    out = tmp_path_factory.mktemp("tiny_corpus")
    cfg = ScenarioConfig.preset("online", n_recordings=4, duration_sec=20.0, enrollment_sec=6.0,
                                teacher_reuse=0.5, seed=3)
    return generate_corpus(cfg, out)


@pytest.fixture(scope="session")
def tiny_features(tiny_corpus):
    return [featurize_record(r) for r in load_manifest(tiny_corpus)]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
