import numpy as np
import pytest

from fliot.core import RandomStream
from fliot.sim import ExperimentConfig
from fliot.traffic import DataConfig
from fliot.rnn import TrainingConfig


@pytest.fixture
def stream():
    return RandomStream(1234, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(99)


def small_config(**changes) -> ExperimentConfig:
    """A few devices, short windows: seconds per experiment."""
    base = ExperimentConfig(
        n_devices=3, rounds=2, seed=5, key_bits=256,
        data=DataConfig(seq_len=12, windows_per_device=10),
        training=TrainingConfig(local_epochs=1),
        centralized_baseline=False,
    )
    return base.with_(**changes)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        r = results[number]
        status = "PASS" if r["passed"] else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {r['title']} -- {r['detail']} "
                                    f"({r['seconds']:.1f}s)")
