import numpy as np
import pytest

from detachctl import harness
from detachctl.config import parse_config


@pytest.fixture(scope="session")
def default_cfg():
    return parse_config("")


@pytest.fixture(scope="session")
def campaign(default_cfg):
    return harness.generate_campaign(default_cfg, seed=1)


@pytest.fixture(scope="session")
def norm_model(campaign):
    """Norm-preprocessed model trained on the default 1000-frame campaign."""
    return harness.train_from_campaign(campaign, "norm")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = {}


@pytest.fixture
def acceptance(request):
    """Record one criterion line; printed in the terminal summary and echoed with -s."""

    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip()
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
