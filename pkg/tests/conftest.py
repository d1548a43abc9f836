import collections

import numpy as np
import pytest

from zslrac.data import SyntheticConfig, synthesize_dataset

_criteria = collections.OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    ok = _criteria.get(n, True)
    if rep.when == "call" or rep.failed:
        _criteria[n] = ok and not rep.failed
    if rep.when == "setup" and rep.skipped:
        _criteria[n] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if _criteria[n] else 'FAIL'}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_split():
    return synthesize_dataset(SyntheticConfig(seen_classes=3, unseen_classes=2,
                                              samples_per_class=6, feature_dim=4,
                                              descriptor_dim=3, seed=5))
