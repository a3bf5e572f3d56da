import pytest

from kclab.types import Problem


@pytest.fixture
def problem():
    return Problem(problem_id="p1", statement="Sum the even numbers in an array.")
