import pytest

from encoder_fixtures import HIDDEN_SIZE, write_corpus  # noqa: F401


@pytest.fixture(scope="session")
def tiny_encoder(tmp_path_factory):
    from encoder_fixtures import build_tiny_encoder
    return build_tiny_encoder(tmp_path_factory.mktemp("tiny-encoder"))


@pytest.fixture()
def sample_corpus(tmp_path):
    from encoder_fixtures import build_sample_corpus
    return build_sample_corpus(tmp_path)
