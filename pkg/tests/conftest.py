import numpy as np
import pytest
from hypothesis import settings

from blockboost.datamatrix import quantize_matrix
from oracles import toy_matrix

settings.register_profile("ci", deadline=None, max_examples=60)
settings.load_profile("ci")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria runs")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_q():
    return quantize_matrix(toy_matrix(), 16)


@pytest.fixture
def write_file(tmp_path):
    def _write(text, name="data.svm"):
        p = tmp_path / name
        p.write_text(text)
        return p
    return _write
