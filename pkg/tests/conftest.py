import pytest

from morseflow.cli import builtin_problem, problem_objects


@pytest.fixture(scope="session")
def saddle():
    return problem_objects(builtin_problem("saddle"))


@pytest.fixture(scope="session")
def quartic():
    return problem_objects(builtin_problem("quartic"))


@pytest.fixture(scope="session")
def planes():
    return problem_objects(builtin_problem("planes"))


@pytest.fixture(scope="session")
def cone():
    return problem_objects(builtin_problem("cone"))
