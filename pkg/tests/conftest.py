import math

import numpy as np
import pytest

from perddqn.world import load_map


def grid_text(rows, resolution=0.5):
    return f"resolution {resolution}\nsize {len(rows[0])} {len(rows)}\n" + "\n".join(rows) + "\n"


def open_rows(w, h):
    return ["#" * w] + ["#" + "." * (w - 2) + "#" for _ in range(h - 2)] + ["#" * w]


def march(omap, x, y, angle, max_range, step=1e-3):
    """Brute-force ray marcher: walk in tiny steps until the point is in an occupied cell."""
    c, s = math.cos(angle), math.sin(angle)
    r = 0.0
    while r < max_range:
        r += step
        if omap.is_occupied(x + r * c, y + r * s):
            return r
    return max_range


@pytest.fixture
def open_map():
    return load_map(grid_text(open_rows(10, 10)), "open")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
