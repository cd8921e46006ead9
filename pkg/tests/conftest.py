import numpy as np
import pytest

from aircade.config import ModelConfig
from aircade.data import fit_normalizer, generate_synthetic, make_windows, normalize_series, stack_samples
from aircade.model import AirCadeModel

TINY = dict(T=4, T_P=4, N=5, c=1, f=3, d_s=4, d_P=2, d_e=3, K_h=2, L1=1, L2=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(**TINY)


@pytest.fixture
def tiny_model(tiny_cfg):
    return AirCadeModel(tiny_cfg, seed=7)


@pytest.fixture(scope="session")
def tiny_windows():
    series = generate_synthetic(5, 60, 1, 3, seed=3)
    norm = normalize_series(series, fit_normalizer(series, 1.0))
    return make_windows(norm, 4, 4)


@pytest.fixture
def tiny_batch(tiny_windows):
    return stack_samples(tiny_windows[:4])


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line, then assert on it."""

    def check(number: int, name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d} ({name}): {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split("(")[0])):
            terminalreporter.write_line(line)
