import pytest

from tidysim import data_path
from tidysim import preference as pm


@pytest.fixture(scope="session")
def fixture_model():
    return pm.load_model(data_path("fixture_model.tfm").read_bytes())


@pytest.fixture(scope="session")
def fixture_corpus():
    return pm.ingest_corpus(data_path("fixture_corpus.csv").read_text())


@pytest.fixture(scope="session")
def apartment_text():
    return data_path("apartment.map").read_text()


def scenario(name):
    return data_path("scenarios", name + ".yaml")


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
