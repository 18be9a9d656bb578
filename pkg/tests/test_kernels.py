"""The compiled kernels must reproduce the numpy fallback bit for bit."""

import numpy as np
import pytest

from imarker import _kernels, imgcore
from imarker._kernels import ckernels, pykernels

pytestmark = pytest.mark.skipif(ckernels is None, reason="compiled extension not built")

SHAPES = [(1, 1), (3, 2), (17, 31), (64, 48)]


def _both(name, *args):
    return getattr(pykernels, name)(*args), getattr(ckernels, name)(*args)


def test_backend_reported():
    assert _kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("radius,iters", [(1, 1), (2, 1), (3, 2), (6, 1)])
def test_min_filter(shape, radius, iters):
    a = np.random.default_rng(radius).integers(0, 256, shape, dtype=np.uint8)
    p, c = _both("min_filter", a, radius, iters)
    assert np.array_equal(p, c)


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("sigma", [0.5, 1.0, 3.0])
def test_convolve(shape, sigma):
    a = np.random.default_rng(1).integers(0, 256, shape, dtype=np.uint8)
    p, c = _both("convolve_separable", a, imgcore.gaussian_kernel(sigma))
    assert np.array_equal(p, c)


def test_color_kernels():
    rgb = np.random.default_rng(2).integers(0, 256, (37, 23, 3), dtype=np.uint8)
    rgb[0, :4] = [[0, 0, 0], [255, 255, 255], [7, 7, 7], [255, 0, 0]]
    p, c = _both("rgb_to_gray", rgb)
    assert np.array_equal(p, c)
    hp, hc = _both("rgb_to_hsv", rgb)
    for x, y in zip(hp, hc):
        assert np.array_equal(x, y)
    for rng_ in [(90, 150, 0.3, 1, 0.2, 1), (340, 20, 0, 1, 0, 1), (0, 359.9, 0.5, 0.6, 0.1, 0.9)]:
        p, c = _both("hsv_mask", *hp, *map(float, rng_))
        assert np.array_equal(p, c)


def test_fast_scores():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 256, (40, 50), dtype=np.uint8)
    a[10:22, 10:22] = 255
    for t in (5, 20, 60):
        p, c = _both("fast_scores", a, t, 9)
        assert np.array_equal(p, c)
    p, c = _both("fast_scores", a[:5, :5], 20, 9)
    assert np.array_equal(p, c)


@pytest.mark.parametrize("channels", [1, 3])
def test_warp(channels):
    rng = np.random.default_rng(4)
    shape = (30, 40) if channels == 1 else (30, 40, 3)
    src = rng.integers(0, 256, shape, dtype=np.uint8)
    hinv = np.array([[1.05, 0.1, -2.0], [-0.05, 0.95, 3.0], [1e-3, -5e-4, 1.0]])
    (op, vp), (oc, vc) = _both("warp_bilinear", src, hinv, 33, 37)
    assert np.array_equal(op, oc) and np.array_equal(vp, vc)


def test_trace_components_random():
    rng = np.random.default_rng(5)
    for k in range(300):
        h, w = rng.integers(1, 24, size=2)
        a = np.where(rng.random((h, w)) < rng.uniform(0.1, 0.8), 255, 0).astype(np.uint8)
        p, c = _both("trace_components", a, int(k % 4))
        assert len(p) == len(c)
        for x, y in zip(p, c):
            assert np.array_equal(x, y)
