import os
import tempfile

# the logger configures itself on import; keep test logs out of the working tree
os.environ.setdefault("ERGODIC_LAB_LOG_DIR", tempfile.mkdtemp(prefix="ergodic_lab_logs_"))

import pytest

from ergodic_lab.components.constant.builtin_models import markov_models, semiflow_models
from ergodic_lab.components.hyperbolic import octagon_group, schottky_group
from ergodic_lab.components.markov import model_from_dict
from ergodic_lab.components.semiflow import semiflow_from_dict


@pytest.fixture(scope="session")
def lazy_exact():
    return model_from_dict(markov_models["lazy-walk"], "exact")


@pytest.fixture(scope="session")
def lazy_float():
    return model_from_dict(markov_models["lazy-walk"], "float")


@pytest.fixture(scope="session")
def split_exact():
    return model_from_dict(markov_models["lazy-walk-split"], "exact")


@pytest.fixture(scope="session")
def split_float():
    return model_from_dict(markov_models["lazy-walk-split"], "float")


def _semiflow(name, backend):
    return semiflow_from_dict(semiflow_models[name], backend,
                              resolve=lambda base: model_from_dict(markov_models[base], backend))


@pytest.fixture(scope="session")
def two_valued_exact():
    return _semiflow("two-valued-roof", "exact")


@pytest.fixture(scope="session")
def two_valued_float():
    return _semiflow("two-valued-roof", "float")


@pytest.fixture(scope="session")
def unit_roof_float():
    return _semiflow("unit-roof-lazy-walk", "float")


@pytest.fixture(scope="session")
def pm_roof_exact():
    return _semiflow("pm-roof", "exact")


@pytest.fixture(scope="session")
def schottky():
    return schottky_group()


@pytest.fixture(scope="session")
def octagon():
    return octagon_group()


@pytest.fixture(scope="session")
def unit_split_exact():
    return _semiflow("unit-roof-split", "exact")
