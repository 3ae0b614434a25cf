from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import pytest

from edgeedit.corpus import load_corpus, parse_brat, read_document

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS_DIR = FIXTURES / "corpus"
MANIFEST = FIXTURES / "manifest.txt"

TINY_TEXT = "TiO2 was mixed with ethanol and heated at 600 C."
TINY_ANN = """T1\tMaterial 0 4\tTiO2
T2\tOperation 9 14\tmixed
T3\tMaterial 20 27\tethanol
T4\tOperation 32 38\theated
T5\tNumber 42 45\t600
R1\tRecipe_Precursor Arg1:T1 Arg2:T2
R2\tSolvent_Material Arg1:T2 Arg2:T3
R3\tNext_Operation Arg1:T2 Arg2:T4
"""


@pytest.fixture(scope="session")
def fixture_corpus():
    return load_corpus(CORPUS_DIR, MANIFEST)


@pytest.fixture(scope="session")
def srmoo4_doc():
    return read_document(FIXTURES / "srmoo4", "srmoo4")


@pytest.fixture(scope="session")
def tiny_doc():
    return parse_brat(TINY_TEXT, TINY_ANN, "tiny")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")
    config._acceptance = defaultdict(list)
    config._acceptance_titles = {}


def pytest_runtest_logreport(report):
    marks = getattr(report, "criterion", None)
    if marks is None:
        return
    number, title = marks
    config = pytest_runtest_logreport.config
    config._acceptance_titles[number] = title
    if report.when == "call" or report.failed or report.skipped:
        config._acceptance[number].append((report.nodeid, report.outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


@pytest.hookimpl(tryfirst=True)
def pytest_sessionstart(session):
    pytest_runtest_logreport.config = session.config


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config._acceptance
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results, key=int):
        outcomes = [o for _, o in results[number]]
        verdict = "PASS" if outcomes and all(o == "passed" for o in outcomes) else "FAIL"
        failing = [n.split("::")[-1] for n, o in results[number] if o != "passed"]
        suffix = f"  (failing: {', '.join(failing)})" if failing else ""
        terminalreporter.write_line(f"ACCEPTANCE {number} {verdict}: {config._acceptance_titles[number]}{suffix}")
