import numpy as np
import pytest

from flowfuse import Events, FlowField, GridShape


@pytest.fixture
def shape8():
    return GridShape(8, 8)


def make_flow(u, v, valid=None):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if valid is None:
        valid = np.ones(u.shape, bool)
    return FlowField(u, v, np.asarray(valid, bool))


def const_flow(shape, uu, vv, valid=True):
    h, w = shape.hw
    return FlowField(np.full((h, w), float(uu)), np.full((h, w), float(vv)),
                     np.full((h, w), bool(valid)))


def make_events(shape, records):
    """records: list of (t, x, y, p)."""
    if not records:
        return Events.empty(shape)
    t, x, y, p = zip(*records)
    return Events(shape, np.array(t, np.uint64), np.array(x, np.uint16),
                  np.array(y, np.uint16), np.array(p, np.int8))
