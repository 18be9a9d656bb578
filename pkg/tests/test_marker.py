import itertools

import numpy as np
import pytest

from imarker import marker
from imarker.align import apply_homography
from imarker.imgcore import Frame, FrameFormat
from imarker.marker import Dictionary, DictionaryExhaustedError, Quad

D = marker.default_dictionary()


def _bin(a) -> Frame:
    return Frame(np.where(a, 255, 0).astype(np.uint8), FrameFormat.BIN1)


def _poly_mask(corners, shape, ss=4):
    """Pixels whose sub-sample majority lies inside the convex polygon."""
    h, w = shape
    off = (np.arange(ss) + 0.5) / ss - 0.5
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    acc = np.zeros(shape)
    c = np.asarray(corners, float)
    for dy, dx in itertools.product(off, off):
        px, py = xs + dx, ys + dy
        inside = np.ones(shape, bool)
        sgn = None
        for i in range(4):
            a, b = c[i], c[(i + 1) % 4]
            cr = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
            s = np.sign(cr)
            sgn = s if sgn is None else sgn
            inside &= (s == sgn) | (s == 0)
        acc += inside
    return acc / ss ** 2 >= 0.5


# -- dictionary

def test_default_dictionary_invariants():
    assert len(D) == 50 and D.grid_n == 4 and D.min_hamming == 4
    for i, j in itertools.combinations(range(len(D)), 2):
        assert marker.rotation_min_distance(D.markers[i], D.markers[j]) >= 4
    for m in D.markers:
        assert marker.self_rotation_distance(m) >= 4
    assert D.verify() >= 4


def test_generate_examples():
    one = marker.generate_dictionary(1, 4, 4, seed=3)
    assert len(one) == 1 and one.verify() >= 4
    again = marker.generate_dictionary(50, 4, 4, seed=14)
    assert np.array_equal(again.markers, D.markers)
    with pytest.raises(DictionaryExhaustedError):
        marker.generate_dictionary(2 ** 16 + 1, 4, 4)


def test_dictionary_text_round_trip(tmp_path):
    D.save(tmp_path / "d.txt")
    back = Dictionary.load(tmp_path / "d.txt")
    assert np.array_equal(back.markers, D.markers) and back.min_hamming == D.min_hamming
    with pytest.raises(ValueError):
        Dictionary.from_text("imdict v1 grid_n=4 min_h=4\n1ffff\n")


# -- decode

@pytest.mark.parametrize("k", range(4))
def test_decode_rotations(k):
    bits = np.rot90(D.marker_bits(3), k)
    r = marker.decode(bits, D)
    assert (r.id, r.rotation, r.distance) == (3, 90 * k, 0)


def test_decode_corrects_one_bit():
    for pos in range(16):
        bits = D.marker_bits(3)
        y, x = divmod(pos, 4)
        bits[1 + y, 1 + x] ^= 1
        r = marker.decode(bits, D)
        assert r.id == 3 and r.distance == 1


def test_decode_rejections():
    assert marker.decode(np.ones((6, 6), np.uint8), D).reason == "border"
    rng = np.random.default_rng(99)
    accepted = 0
    for _ in range(1000):
        accepted += marker.decode(rng.integers(0, 2, (6, 6)), D).ok
    assert accepted <= 1


# -- quads

def test_axis_aligned_square():
    a = np.zeros((200, 200), bool)
    a[50:150, 50:150] = True
    quads = marker.find_quads(_bin(a))
    assert len(quads) == 1
    want = np.array([[49.5, 49.5], [149.5, 49.5], [149.5, 149.5], [49.5, 149.5]])
    assert np.abs(quads[0].corners - want).max() <= 0.5


def test_blank_frame_has_no_quads():
    assert marker.find_quads(_bin(np.zeros((50, 50), bool))) == []
    assert marker.recognize(_bin(np.zeros((50, 50), bool)), D) == []


def test_rotated_perspective_square():
    ang = np.radians(30)
    rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    sq = (np.array([[-40, -40], [40, -40], [40, 40], [-40, 40]]) @ rot.T) + [120, 110]
    h = np.array([[1.05, 0.08, -6.0], [-0.03, 0.97, 4.0], [4e-4, 2e-4, 1.0]])
    truth = apply_homography(h, sq)
    quads = marker.find_quads(_bin(_poly_mask(truth, (240, 260))))
    assert len(quads) == 1
    got = quads[0].corners
    # compare as sets: quad order is defined on screen, not by the source square
    err = max(np.min(np.hypot(*(got - t).T)) for t in truth)
    assert err <= 1.5


# -- bit sampling and recognition

def test_sample_frontal_render():
    f = marker.render_marker(D, 7, cell_px=20, bright_ink=True)
    quads = marker.find_quads(f)
    assert len(quads) == 1
    bits = marker.sample_bits(f, quads[0], 4, bright_ink=True)
    assert np.array_equal(np.rot90(bits, 0), D.marker_bits(7))


def test_sample_all_white_interior():
    q = Quad([[10, 10], [70, 10], [70, 70], [10, 70]])
    bits = marker.sample_bits(_bin(np.ones((80, 80), bool)), q, 4)
    assert (bits == 1).all()
    assert marker.decode(bits, D).reason == "border"


def test_sample_oblique_render():
    # the marker viewed at 60 degrees: x foreshortened by cos(60) plus perspective
    cells = 6
    canon = np.array([[0, 0], [cells, 0], [cells, cells], [0, cells]], float)
    img_corners = np.array([[60, 40], [150, 55], [150, 185], [60, 200]], float)
    from imarker.align import dlt_homography

    hm = dlt_homography(img_corners, canon).m
    ys, xs = np.mgrid[0:240, 0:220].astype(float)
    uv = apply_homography(hm, np.stack([xs.ravel(), ys.ravel()], 1))
    u, v = uv[:, 0].reshape(xs.shape), uv[:, 1].reshape(xs.shape)
    inside = (u >= 0) & (u < cells) & (v >= 0) & (v < cells)
    bits = D.marker_bits(11)
    ink = np.zeros(xs.shape, bool)
    ink[inside] = bits[v[inside].astype(int), u[inside].astype(int)] == 0
    f = _bin(ink)
    dets = marker.recognize(f, D)
    assert [d.id for d in dets] == [11]
    q = marker.find_quads(f)[0]
    assert np.array_equal(marker.sample_bits(f, q, 4, bright_ink=True), bits)


@pytest.mark.parametrize("marker_id", [0, 7, 23, 49])
def test_recognize_both_polarities(marker_id):
    bright = marker.render_marker(D, marker_id, bright_ink=True)
    assert [d.id for d in marker.recognize(bright, D)] == [marker_id]
    dark = marker.render_marker(D, marker_id, bright_ink=False)
    assert marker.recognize(dark, D) == []
    dets = marker.recognize(dark, D, invert=True)
    assert [(d.id, d.polarity) for d in dets] == [(marker_id, "dark")]


def test_ordered_corners_follow_rotation():
    f = marker.render_marker(D, 5, bright_ink=True)
    base = marker.recognize(f, D)[0]
    turned = Frame(np.rot90(f.data).copy(), FrameFormat.BIN1)
    det = marker.recognize(turned, D)[0]
    assert det.id == 5 and det.rotation == (base.rotation + 90) % 360


# -- corner refinement

def _corner_image(cx, cy, size=100):
    # exact pixel-area render of the quadrant x > cx, y > cy
    i = np.arange(size, dtype=float)
    fx = np.clip(i + 0.5 - cx, 0, 1)
    fy = np.clip(i + 0.5 - cy, 0, 1)
    return Frame((30 + 200 * np.outer(fy, fx)).round().astype(np.uint8), FrameFormat.GRAY8)


def test_refine_integer_corner_stays():
    out = marker.refine_corners(_corner_image(49.5, 39.5), [[49.5, 39.5]])
    assert np.hypot(*(out[0] - [49.5, 39.5])) < 0.1


def test_refine_subpixel_corner():
    out = marker.refine_corners(_corner_image(50.3, 40.7), [[50, 41]])
    assert np.hypot(*(out[0] - [50.3, 40.7])) <= 0.15


def test_refine_noise_window_unchanged():
    rng = np.random.default_rng(0)
    f = Frame(rng.integers(0, 256, (60, 60), dtype=np.uint8), FrameFormat.GRAY8)
    out, ok = marker.refine_corners(f, [[30, 30]], return_status=True)
    if not ok[0]:
        assert np.array_equal(out[0], [30, 30])
    flat = Frame(np.full((60, 60), 80, np.uint8), FrameFormat.GRAY8)
    out, ok = marker.refine_corners(flat, [[30, 30]], return_status=True)
    assert not ok[0] and np.array_equal(out[0], [30, 30])
