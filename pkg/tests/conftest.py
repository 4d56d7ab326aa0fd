import pytest

from helpers import make_domain, make_table  # noqa: F401  (fixture deps)
from fewshot_mlc.thresholding import default_lexicons


@pytest.fixture(scope="session")
def lexicons():
    return default_lexicons()
