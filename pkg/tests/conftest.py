import importlib

import numpy as np
import pytest

from seme import _kernels_py


def _compiled():
    try:
        return importlib.import_module("seme._kernels")
    except ImportError:
        return None


BACKENDS = [pytest.param(_kernels_py, id="python")]
if _compiled() is not None:
    BACKENDS.append(pytest.param(_compiled(), id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
