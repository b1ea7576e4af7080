import numpy as np
import pytest

from dualhmm import kernels
from dualhmm.cir import CirModel, CirParams
from dualhmm.model import ObservationSeries
from dualhmm.wf import WfModel, WfParams


@pytest.fixture
def cir_model():
    return CirModel(CirParams(3.0, 2.5, 4.0, 1.0))


@pytest.fixture
def wf_model():
    return WfModel(WfParams((1.1, 2.5, 2.1)))


@pytest.fixture
def cir_series():
    return ObservationSeries.from_rows([0.0, 0.0, 0.4, 1.0, 1.0, 1.3], [5, 8, 11, 4, 6, 9])


@pytest.fixture
def wf_series():
    rows = [[3, 1, 2], [0, 2, 1], [2, 2, 0], [1, 0, 3]]
    return ObservationSeries.from_rows([0.0, 0.2, 0.5, 0.9], rows)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(params=["python", "compiled"])
def backend(request):
    """Run a test once per kernel backend, restoring the default afterwards."""
    before = kernels.BACKEND
    try:
        kernels.use_backend(request.param)
    except ImportError:
        pytest.skip("compiled kernels are not built")
    yield request.param
    kernels.use_backend(before)


# ------------------------------------------------------- acceptance report

_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    details = [v for k, v in item.user_properties if k == "detail"]
    _CRITERIA.setdefault(marker.args[0], []).append((item.name, rep.outcome, details))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        runs = _CRITERIA[n]
        ok = all(o == "passed" for _, o, _ in runs)
        skipped = all(o == "skipped" for _, o, _ in runs)
        verdict = "SKIP" if skipped else ("PASS" if ok else "FAIL")
        notes = "; ".join(d for _, _, ds in runs for d in ds)
        tr.write_line(f"criterion {n:2d}: {verdict}  {notes}")
