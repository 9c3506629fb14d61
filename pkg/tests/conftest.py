import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def noise_slice(rng, floor=-95.0, sigma=1.5):
    return floor + sigma * rng.standard_normal((134, 46))


# ------------------------------------------------------------------ acceptance summary

CRITERIA = {
    1: "gradient correctness (CNN-3, LSTM)",
    2: "AUC equals pair counting",
    3: "FROC equals threshold enumeration",
    4: "DeLong CI coverage",
    5: "DKW band coverage",
    6: "AUC ordering on synthetic scenes",
    7: "OOBE robustness",
    8: "timing ordering",
    9: "survey correctness",
    10: "pipeline determinism",
    11: "multi-init FROC envelope",
}
_status: dict[int, str] = {}
_notes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by this test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args[0]))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    n = props.get("criterion")
    if n is None:
        return
    if report.failed:
        _status[n] = "FAIL"
    elif report.skipped:
        _status.setdefault(n, "SKIP")
    elif report.when == "call":
        _status.setdefault(n, "PASS")
        if _status[n] == "SKIP":
            _status[n] = "PASS"
    if report.when == "call":
        _notes.setdefault(n, []).extend(v for k, v in report.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter):
    if not _status:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        state = _status.get(n, "NOT RUN")
        note = "; ".join(_notes.get(n, []))
        tr.write_line(f"criterion {n:>2} {state:<7} {title}" + (f" | {note}" if note else ""))
