import numpy as np
import pytest


def make_square_target(width=64, height=64):
    """White square over smooth color gradients; the standard fitting target."""
    yy, xx = np.mgrid[0:height, 0:width]
    target = np.zeros((height, width, 3))
    target[..., 0] = xx / (width - 1) * 0.4
    target[..., 1] = 0.15
    target[..., 2] = yy / (height - 1) * 0.4
    target[16:38, 12:34] = 1.0
    return target


@pytest.fixture(scope="session")
def square_target():
    return make_square_target()
