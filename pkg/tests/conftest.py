import sys
import warnings
from pathlib import Path

import pytest

# Make the flat modules, the utilities and the reference implementation importable
ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))
sys.path.insert(0, str(ROOT / "utils"))
sys.path.insert(0, str(Path(__file__).resolve().parent))

from normal_functionals import McSettings  # noqa: E402
from simulation import draw, make_dgp  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the Monte Carlo acceptance checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def small_mc():
    return McSettings(draws=20_000, seed=7)


@pytest.fixture
def dgp0_sample():
    return draw(make_dgp("dgp0"), 200, 11)


@pytest.fixture
def repo_root():
    return ROOT


@pytest.fixture(scope="session")
def golden():
    """The shipped seeded sample and golden report under data/.

    A checkout without them gets them written by utils/gen_golden.py, which
    refuses a report that disagrees with the reference implementation.
    """
    import gen_golden

    if not (gen_golden.CSV_PATH.exists() and gen_golden.REPORT_PATH.exists()):
        warnings.warn(f"golden files missing under {gen_golden.DATA_DIR}; generating them, commit the result")
        gen_golden.generate()
    return gen_golden
