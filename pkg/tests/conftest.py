_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1].replace("test_criterion_", "")
        props = {k: v for k, v in report.user_properties}
        _CRITERIA[name] = (report.outcome, props)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        outcome, props = _CRITERIA[name]
        status = "PASS" if outcome == "passed" else "FAIL"
        detail = ", ".join(f"{k}={_fmt(v)}" for k, v in props.items())
        terminalreporter.write_line(f"{status}  criterion {name}" + (f"  [{detail}]" if detail else ""))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}: {_fmt(x)}" for k, x in v.items()) + "}"
    return str(v)
