import numpy as np
import pytest

from endemic.knowledge import HashingEncoder


class LookupEncoder:
    """Encoder returning fixed vectors for known texts (zero vector otherwise)."""

    def __init__(self, table: dict, dim: int):
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}
        self.dim = dim

    def encode(self, text: str) -> np.ndarray:
        return self.table.get(text, np.zeros(self.dim)).copy()


@pytest.fixture
def hashing_encoder():
    return HashingEncoder(dim=32, seed=7)


@pytest.fixture
def lookup_encoder_cls():
    return LookupEncoder


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
