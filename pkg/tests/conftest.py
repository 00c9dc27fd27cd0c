import numpy as np
import pytest

from guitar import GraphParams, build_graph, generate_synthetic, make_random_measure

_criteria: dict[int, tuple[str, bool]] = {}
_notes: dict[int, list[str]] = {}


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(600, 12, seed=3)


@pytest.fixture(scope="session")
def small_graph(small_data):
    return build_graph(small_data, GraphParams(M=8, k_construction=32))


@pytest.fixture(scope="session")
def small_deepfm():
    return make_random_measure("deepfm", (4, 8), seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def note(request):
    """Record a measured value under the test's criterion; shown in the terminal summary."""
    mark = request.node.get_closest_marker("criterion")
    num = mark.args[0] if mark else 0

    def add(text: str) -> None:
        _notes.setdefault(num, []).append(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    num, title = mark.args
    ok = rep.passed if rep.when == "call" else not rep.failed
    prev = _criteria.get(num, (title, True))[1]
    if rep.when == "setup" and ok:
        return
    _criteria[num] = (title, prev and ok)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_criteria):
        title, ok = _criteria[num]
        tr.write_line(f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {title}")
        for text in _notes.get(num, []):
            tr.write_line(f"    {text}")
