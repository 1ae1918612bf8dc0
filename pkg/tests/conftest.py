import pytest

from magtrack.domain import Detection, LayoutConfig, build_layout

DIR = (0.0, 0.0, 1.0)


def det(sensor_id, t_us, strength=300.0):
    return Detection(sensor_id, int(t_us), DIR, strength)


@pytest.fixture
def lane3():
    """One lane, three sensors 15 m apart."""
    return build_layout(LayoutConfig(n_lanes=1, lane_length_m=30.0, spacing_m=15.0))


@pytest.fixture
def road():
    """Two lanes, 150 m, 15 m spacing (11 sensors per lane)."""
    return build_layout(LayoutConfig(n_lanes=2, lane_length_m=150.0, spacing_m=15.0))
