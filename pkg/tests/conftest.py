import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from h0meta.likelihood import LensSystem, ModelParams, PairMeasurement  # noqa: E402
from h0meta.simulate import PopulationSpec, generate_population  # noqa: E402


@pytest.fixture
def quad_lens():
    pairs = (PairMeasurement(-100.0, 3.0, -2.0e-11, 1.0e-12, "AB"),
             PairMeasurement(-40.0, 1.5, -0.9e-11, 0.4e-12, "AC"),
             PairMeasurement(25.0, 2.0, 0.5e-11, 0.3e-12, "AD"))
    return LensSystem("Q1", (0.5, 2.0), pairs)


@pytest.fixture
def double_lens():
    return LensSystem("D1", (0.3, 1.4), (PairMeasurement(-60.0, 2.0, -1.1e-11, 0.5e-12),))


@pytest.fixture
def params():
    return ModelParams(70.0, 0.3, {"Q1": 0.02, "D1": -0.01})


@pytest.fixture
def small_population():
    spec = PopulationSpec(n_quads=3, n_doubles=1, h0_true=70.0)
    return generate_population(spec, np.random.default_rng(7))
