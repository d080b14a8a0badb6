import numpy as np
import pytest

from stochsyn import synth
from stochsyn.transform import fit_map_with_fallback, forward_map

SOURCE_SEED = 20240817


@pytest.fixture(scope="session")
def ref_bundle():
    return synth.reference_bundle()


@pytest.fixture(scope="session")
def source_features(ref_bundle):
    """100k ground-truth feature vectors shared by fitting tests."""
    return synth.sample_features(ref_bundle, 100_000, SOURCE_SEED)


@pytest.fixture(scope="session")
def fitted_map(source_features):
    return fit_map_with_fallback(source_features)


@pytest.fixture(scope="session")
def source_normalized(fitted_map, source_features):
    z, _ = forward_map(fitted_map, source_features)
    return z
