import numpy as np
import pytest

from convabed.tensor import LayerShape, Tensor4D


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_layer(rng, shape: LayerShape):
    x = Tensor4D(rng.integers(-128, 128, shape.input_dims, dtype=np.int8))
    f = Tensor4D(rng.integers(-128, 128, shape.filter_dims, dtype=np.int8))
    return x, f


def random_shape(rng, max_nck=4, max_hw=8, rs=(1, 3), strides=(1, 2), pads=(0, 1)) -> LayerShape:
    while True:
        r = int(rng.choice(rs))
        s = int(rng.choice(rs))
        h = int(rng.integers(1, max_hw + 1))
        w = int(rng.integers(1, max_hw + 1))
        pad_h, pad_w = int(rng.choice(pads)), int(rng.choice(pads))
        if r <= h + 2 * pad_h and s <= w + 2 * pad_w:
            return LayerShape(
                n=int(rng.integers(1, max_nck + 1)), c=int(rng.integers(1, max_nck + 1)),
                h=h, w=w, k=int(rng.integers(1, max_nck + 1)), r=r, s=s,
                stride_h=int(rng.choice(strides)), stride_w=int(rng.choice(strides)),
                pad_h=pad_h, pad_w=pad_w,
            )


def ones_twos():
    """1x1x3x3 all-ones input with two 3x3 filters: all ones and all twos."""
    shape = LayerShape(1, 1, 3, 3, 2, 3, 3)
    x = Tensor4D(np.ones((1, 1, 3, 3), np.int8))
    f = Tensor4D(np.stack([np.ones((1, 3, 3), np.int8), np.full((1, 3, 3), 2, np.int8)]))
    return shape, x, f


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
