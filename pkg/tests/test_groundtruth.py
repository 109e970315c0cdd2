import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sensearea import groundtruth as gt


def spot_pair(center, shape=(300, 300), sigma=3.0, peak=200.0, noise=0, seed=0):
    v, u = np.mgrid[0 : shape[0], 0 : shape[1]]
    spot = peak * np.exp(-((u - center[0]) ** 2 + (v - center[1]) ** 2) / (2 * sigma**2))
    rng = np.random.default_rng(seed)
    off = np.zeros(shape + (3,))
    if noise:
        off += rng.integers(0, noise + 1, size=off.shape)
    on = off.copy()
    if noise:
        on = rng.integers(0, noise + 1, size=off.shape).astype(float)
    on[..., 0] += spot
    return np.clip(np.rint(on), 0, 255).astype(np.uint8), np.clip(np.rint(off), 0, 255).astype(np.uint8)


def test_noise_free_gaussian_spot():
    on, off = spot_pair((100.0, 200.0))
    seg = gt.subtract_and_segment(on, off)
    assert seg.valid
    assert np.linalg.norm(seg.centroid - [100.0, 200.0]) < 0.2


def test_subpixel_spot():
    on, off = spot_pair((100.3, 57.8))
    seg = gt.subtract_and_segment(on, off)
    assert np.linalg.norm(seg.centroid - [100.3, 57.8]) < 0.2


def test_no_spot_is_invalid():
    on, _ = spot_pair((50.0, 50.0), noise=4)
    seg = gt.subtract_and_segment(on, on)
    assert not seg.valid and seg.centroid is None
    assert not seg.mask.any()


def test_noise_only_stays_below_floor():
    rng = np.random.default_rng(3)
    on = rng.integers(0, 7, size=(60, 80, 3)).astype(np.uint8)
    off = rng.integers(0, 7, size=(60, 80, 3)).astype(np.uint8)
    assert not gt.subtract_and_segment(on, off).valid


def test_size_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        gt.subtract_and_segment(np.zeros((10, 10, 3)), np.zeros((10, 11, 3)))


def test_small_blob_is_invalid_but_keeps_mask():
    off = np.zeros((20, 20, 3), np.uint8)
    on = off.copy()
    on[5, 5:7, 0] = 200  # two pixels, below the default min_area of 3
    seg = gt.subtract_and_segment(on, off)
    assert not seg.valid and seg.mask.sum() == 2


def test_largest_component_wins():
    off = np.zeros((40, 40, 3), np.uint8)
    on = off.copy()
    on[2:4, 2:4, 0] = 250  # 4 px
    on[20:25, 30:33, 0] = 240  # 15 px
    seg = gt.subtract_and_segment(on, off)
    assert seg.mask.sum() == 15
    np.testing.assert_allclose(seg.centroid, [31.0, 22.0])


def test_four_connectivity():
    off = np.zeros((10, 10, 3), np.uint8)
    on = off.copy()
    # a diagonal chain is three separate 4-connected blobs
    for k in range(3):
        on[k, k, 0] = 200
    on[6:8, 6:8, 0] = 200
    seg = gt.subtract_and_segment(on, off, gt.SegmentConfig(min_area=1))
    assert seg.mask.sum() == 4


def test_weighted_vs_binary_centroid():
    off = np.zeros((10, 10, 3), np.uint8)
    on = off.copy()
    on[4, 3, 0], on[4, 4, 0], on[4, 5, 0] = 200, 200, 100
    weighted = gt.subtract_and_segment(on, off)
    binary = gt.subtract_and_segment(on, off, gt.SegmentConfig(weighted=False))
    np.testing.assert_allclose(binary.centroid, [4.0, 4.0])
    assert weighted.centroid[0] == pytest.approx((3 * 200 + 4 * 200 + 5 * 100) / 500)


def test_float_images_accepted():
    on, off = spot_pair((30.0, 40.0), shape=(80, 80))
    seg = gt.subtract_and_segment(on / 255.0, off / 255.0)
    ref = gt.subtract_and_segment(on, off)
    np.testing.assert_allclose(seg.centroid, ref.centroid, atol=1e-12)


def test_segmentation_invariant():
    with pytest.raises(ValueError):
        gt.LaserSegmentation(np.zeros((2, 2), bool), True, None)
    with pytest.raises(ValueError):
        gt.LaserSegmentation(np.zeros((2, 2), bool), False, np.zeros(2))


# ---------------------------------------------------------------------------
# centroid


def test_centroid_single_pixel():
    m = np.zeros((10, 10), bool)
    m[7, 5] = True
    np.testing.assert_array_equal(gt.centroid(m), [5.0, 7.0])


def test_centroid_symmetric_pair():
    m = np.zeros((3, 3), bool)
    m[0, 0] = m[0, 2] = True
    np.testing.assert_array_equal(gt.centroid(m), [1.0, 0.0])


def test_centroid_weighted_oracle(rng):
    m = rng.random((30, 40)) > 0.6
    w = rng.random((30, 40)) ** 3
    num_u = num_v = den = 0.0
    for r in range(30):
        for c in range(40):
            if m[r, c]:
                num_u += w[r, c] * c
                num_v += w[r, c] * r
                den += w[r, c]
    np.testing.assert_allclose(gt.centroid(m, w), [num_u / den, num_v / den], rtol=0, atol=1e-12)


def test_centroid_empty():
    with pytest.raises(ValueError):
        gt.centroid(np.zeros((4, 4), bool))


@settings(max_examples=60, deadline=None)
@given(cu=st.floats(12, 40), cv=st.floats(12, 40), dx=st.integers(-10, 10), dy=st.integers(-10, 10),
       seed=st.integers(0, 1000))
def test_translation_equivariance(cu, cv, dx, dy, seed):
    on, off = spot_pair((cu, cv), shape=(52, 52), noise=4, seed=seed)
    pad = ((12, 12), (12, 12), (0, 0))
    on_p, off_p = np.pad(on, pad), np.pad(off, pad)
    a = gt.subtract_and_segment(on_p, off_p)
    b = gt.subtract_and_segment(np.roll(on_p, (dy, dx), axis=(0, 1)), np.roll(off_p, (dy, dx), axis=(0, 1)))
    assert a.valid and b.valid
    np.testing.assert_allclose(b.centroid - a.centroid, [dx, dy], atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), lo=st.floats(0.0, 1.0), hi=st.floats(0.0, 1.0))
def test_raising_threshold_never_validates(seed, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    rng = np.random.default_rng(seed)
    on = rng.integers(0, 256, size=(12, 12, 3)).astype(np.uint8)
    off = rng.integers(0, 256, size=(12, 12, 3)).astype(np.uint8)
    low = gt.subtract_and_segment(on, off, gt.SegmentConfig(rel_frac=lo))
    high = gt.subtract_and_segment(on, off, gt.SegmentConfig(rel_frac=hi))
    if not low.valid:
        assert not high.valid


# ---------------------------------------------------------------------------
# failure accounting


def _segs(n_valid, n_invalid):
    ok = [gt.LaserSegmentation(np.ones((1, 1), bool), True, np.array([1.0, 2.0]))] * n_valid
    bad = [gt.LaserSegmentation(np.zeros((1, 1), bool), False, None)] * n_invalid
    return ok + bad


def test_failure_rate_reference_value():
    # 34 invalid of 100, the structure of the learned-segmenter comparison
    assert gt.failure_rate(_segs(66, 34)) == pytest.approx(0.34)


def test_failure_rate_extremes():
    assert gt.failure_rate(_segs(5, 0)) == 0.0
    segs = _segs(0, 5)
    assert gt.failure_rate(segs) == 1.0
    assert gt.accuracy_on_valid(segs, np.zeros((5, 2))) is None


def test_failure_rate_empty():
    with pytest.raises(ValueError):
        gt.failure_rate([])


def test_accuracy_uses_valid_frames_only():
    segs = _segs(2, 1)
    gts = np.array([[1.0, 2.0], [4.0, 6.0], [1000.0, 1000.0]])
    stats = gt.accuracy_on_valid(segs, gts)
    assert stats.mean == pytest.approx(2.5)
    assert stats.median == pytest.approx(2.5)
