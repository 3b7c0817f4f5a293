import numpy as np
import pytest

from xjunction.geometry import (JunctionParams, SegmentationPlan, build_junction,
                                build_linear_fivewire, segment_controls)
from xjunction.physics import DEFAULT_CONTEXT

FINAL_ARMS = (750.0, 750.0, 750.0, 2700.0)


@pytest.fixture(scope="session")
def ctx():
    return DEFAULT_CONTEXT


@pytest.fixture(scope="session")
def junction():
    return build_junction(JunctionParams.reference(50.0, arm_lengths=FINAL_ARMS))


@pytest.fixture(scope="session")
def segmented(junction):
    return segment_controls(junction, SegmentationPlan())


@pytest.fixture(scope="session")
def linear():
    return build_linear_fivewire(50.0)


@pytest.fixture(scope="session")
def linear_segmented(linear):
    return segment_controls(linear, SegmentationPlan(segments={"R": 9, "L": 9}))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
