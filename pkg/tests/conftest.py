import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qatlab.trainer import RunSpec, default_corpus_path, load_corpus  # noqa: E402


@pytest.fixture(scope="session")
def corpus():
    return load_corpus(default_corpus_path())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_spec(**kw) -> RunSpec:
    """A cell that trains in about a second."""
    base = dict(size="desk-S", steps=12, warmup_steps=2, batch_tokens=128, seq_len=32,
                grad_accum_steps=2, eval_count=3, val_bytes=1024, warmdown=0.33)
    base.update(kw)
    return RunSpec(**base)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
