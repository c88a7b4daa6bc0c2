import numpy as np
import pytest

from submap_frontier.geometry import RigidTransform2
from submap_frontier.grid import Submap, probability_to_storage


def make_submap(probabilities, resolution=0.05, submap_id=0, offset=(0, 0), finished=True):
    """Submap whose cell (a, b) holds ``probabilities[a][b]``; NaN means unobserved."""
    p = np.asarray(probabilities, dtype=float)
    storage = np.zeros(p.shape, dtype=np.uint16)
    seen = ~np.isnan(p)
    storage[seen] = probability_to_storage(p[seen])
    sm = Submap(submap_id, resolution, 10, RigidTransform2.identity())
    sm.storage = storage
    sm.offset = tuple(offset)
    sm.inserted_scans = 10 if finished else 1
    sm.finished = finished
    return sm


U = float("nan")


@pytest.fixture
def identity():
    return RigidTransform2.identity()
