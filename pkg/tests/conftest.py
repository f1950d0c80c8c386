import pytest
import torch

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")
    torch.set_num_threads(1)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "passed": True, "ran": False, "detail": []})
    if report.when == "call" or report.failed:
        entry["ran"] = True
        entry["passed"] &= report.passed
        entry["detail"] += [v for k, v in report.user_properties if k == "detail" and v not in entry["detail"]]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["ran"] and e["passed"] else ("FAIL" if e["ran"] else "NOT RUN")
        detail = f" [{'; '.join(e['detail'])}]" if e["detail"] else ""
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {e['title']}{detail}")
