import pytest

from fwmon.stockfw import stock_image
from fwmon.symbols import builtin_map


@pytest.fixture(scope="session")
def syms():
    return builtin_map()


@pytest.fixture(scope="session")
def _stock_template(syms):
    return stock_image(syms)


@pytest.fixture
def stock(_stock_template):
    """Fresh synthetic stock image (RAM built from the symbol map, ROM zero)."""
    return _stock_template.copy()


_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        name = report.nodeid.split("::")[-1].replace("test_criterion_", "")
        _ACCEPTANCE.setdefault(name, ("PASS" if report.passed else "FAIL", report.duration))
        if not report.passed:
            _ACCEPTANCE[name] = ("FAIL", report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split("_")[0])):
        status, duration = _ACCEPTANCE[name]
        terminalreporter.write_line(f"criterion {name:<40} {status}  ({duration:.3f} s)")
