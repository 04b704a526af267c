import numpy as np
import pytest

from morphgen.model import make_toy_model
from morphgen.render import save_png
from morphgen.scene import make_toy_prior, save_illumination_prior

# (criterion, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def toy_model():
    return make_toy_model(12, 6, 6, 4, seed=3)


@pytest.fixture(scope="session")
def backgrounds(tmp_path_factory):
    d = tmp_path_factory.mktemp("bg")
    rng = np.random.default_rng(11)
    for i, (h, w) in enumerate([(96, 160), (200, 140), (128, 128)]):
        save_png((rng.random((h, w, 3)) * 255).astype(np.uint8), d / f"bg{i}.png")
    return d


@pytest.fixture(scope="session")
def prior_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("prior") / "prior.json"
    save_illumination_prior(make_toy_prior(8, seed=5), p)
    return p


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
