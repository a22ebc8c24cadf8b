import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "capbound", deadline=None, derandomize=True, print_blob=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("capbound")


@pytest.fixture(scope="session")
def scenes_dir():
    from pathlib import Path

    import capbound
    return Path(capbound.__file__).with_name("scenes")


# Acceptance criteria: tests marked ``criterion(n, title)`` are summarized as
# one PASS/FAIL line per criterion at the end of the run.
_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "seen": False, "notes": []})
    if rep.failed:
        entry["ok"] = False
        entry["notes"].append(f"{item.name} failed")
    if rep.when == "call":
        entry["seen"] = True
    for key, value in item.user_properties:
        if key == "detail":
            entry["notes"].append(str(value))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["ok"] and e["seen"] else ("FAIL" if e["seen"] or not e["ok"] else "NOT RUN")
        detail = "; ".join(dict.fromkeys(e["notes"]))
        tr.write_line(f"criterion {n:2d} {status}: {e['title']}" + (f" ({detail})" if detail else ""))
