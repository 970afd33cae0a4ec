import pytest

from reasonedit.provider import MockProvider


@pytest.fixture
def mock_provider():
    return MockProvider(seed=0)
