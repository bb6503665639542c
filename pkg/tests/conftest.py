import pytest

from dreamprvr.data import generate_dataset
from helpers import micro_spec


@pytest.fixture(scope="session")
def micro_dataset():
    return generate_dataset(micro_spec())
