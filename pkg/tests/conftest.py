from collections import defaultdict

_labels = {}  # nodeid -> criterion label
_outcomes = defaultdict(list)  # label -> outcomes of its checks


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(criterion): exit criterion of the build")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m is not None:
            _labels[item.nodeid] = m.args[0]


def pytest_runtest_logreport(report):
    label = _labels.get(report.nodeid)
    if label is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes[label].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _labels:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(set(_labels.values()), key=lambda s: int(s.split(".")[0])):
        results = _outcomes.get(label, [])
        if not results:
            status = "----"
        elif "failed" in results:
            status = "FAIL"
        elif all(r == "passed" for r in results):
            status = "PASS"
        else:
            status = "SKIP"
        terminalreporter.write_line(f"[{status}] {label}")
