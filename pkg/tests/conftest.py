import pytest

from gwlab.model import fixture_model


@pytest.fixture(scope="session")
def model_a():
    return fixture_model("A")


@pytest.fixture(scope="session")
def model_b():
    return fixture_model("B")


@pytest.fixture(scope="session")
def model_c():
    return fixture_model("C")


@pytest.fixture(scope="session")
def model_d():
    return fixture_model("D")


@pytest.fixture(scope="session")
def model_e():
    return fixture_model("E")
