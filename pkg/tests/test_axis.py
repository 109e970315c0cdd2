import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sensearea import axis as ax
from sensearea import geometry as geo
from sensearea import scene as sc

from conftest import SMALL


def exhaustive_axis_angle(coords, n_angles=3600, zoom_rounds=8):
    """Angle maximizing projected variance: a 3600-angle scan, then repeated 10x zooms.

    The plain scan only resolves the angle to pi / 7200 (|cos| ~ 1 - 1e-7);
    each zoom re-scans 21 angles across the two neighbouring grid cells.
    """
    rel = coords - coords.mean(axis=0)

    def var(theta):
        d = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return np.var(rel @ d.T, axis=0)

    thetas = np.arange(n_angles) * (np.pi / n_angles)
    best = thetas[np.argmax(var(thetas))]
    width = np.pi / n_angles
    for _ in range(zoom_rounds):
        local = best + np.linspace(-width, width, 21)
        best = local[np.argmax(var(local))]
        width /= 10
    return best


def random_cloud(rng, n=400):
    ratio = rng.uniform(2.0, 60.0)
    angle = rng.uniform(0, np.pi)
    pts = rng.normal(size=(n, 2)) * np.array([np.sqrt(ratio), 1.0]) * rng.uniform(1, 20)
    c, s = np.cos(angle), np.sin(angle)
    return pts @ np.array([[c, s], [-s, c]]) + rng.uniform(-100, 100, size=2)


def test_collinear_points():
    m = np.zeros((3, 3), bool)
    m[0, 0] = m[1, 1] = m[2, 2] = True
    axis = ax.pca_axis(m)
    np.testing.assert_allclose(axis.centroid, [1, 1])
    assert abs(axis.direction @ np.array([1, 1]) / math.sqrt(2)) == pytest.approx(1.0, abs=1e-15)


def test_rectangle():
    m = np.zeros((20, 120), bool)
    m[5:9, 10:110] = True  # 100 wide, 4 tall
    axis = ax.pca_axis(m)
    np.testing.assert_allclose(axis.centroid, [59.5, 6.5])
    np.testing.assert_allclose(np.abs(axis.direction), [1.0, 0.0], atol=1e-15)
    assert axis.extent[1] - axis.extent[0] == pytest.approx(99.0)


def test_matches_exhaustive_angle_oracle():
    rng = np.random.default_rng(77)
    worst = 1.0
    for _ in range(100):
        coords = random_cloud(rng)
        axis = ax.pca_axis_points(coords, strict=False)
        theta = exhaustive_axis_angle(coords)
        cos = abs(axis.direction @ np.array([np.cos(theta), np.sin(theta)]))
        worst = min(worst, cos)
    assert worst > 1 - 1e-8


def test_matches_numpy_eigh(rng):
    for _ in range(50):
        coords = random_cloud(rng)
        vals, vecs = np.linalg.eigh(np.cov(coords.T, bias=True))
        axis = ax.pca_axis_points(coords, strict=False)
        assert abs(axis.direction @ vecs[:, 1]) > 1 - 1e-12
        assert axis.anisotropy == pytest.approx(vals[1] / vals[0], rel=1e-9)


def test_variance_maximized_over_test_directions(rng):
    for _ in range(20):
        coords = random_cloud(rng)
        rel = coords - coords.mean(axis=0)
        d = ax.pca_axis_points(coords, strict=False).direction
        best = np.var(rel @ d)
        for t in np.arange(360) * np.pi / 180:
            assert best >= np.var(rel @ np.array([np.cos(t), np.sin(t)])) - 1e-9


@settings(max_examples=100, deadline=None)
@given(theta=st.floats(-np.pi, np.pi), seed=st.integers(0, 10_000))
def test_rotation_equivariance(theta, seed):
    coords = random_cloud(np.random.default_rng(seed))
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    d0 = ax.pca_axis_points(coords, strict=False).direction
    d1 = ax.pca_axis_points(coords @ rot.T, strict=False).direction
    angle = math.acos(min(1.0, abs(float((rot @ d0) @ d1))))
    assert angle < 1e-6


def test_isotropic_square_is_flagged_or_rejected():
    m = np.zeros((10, 10), bool)
    m[2:8, 2:8] = True
    with pytest.raises(ax.DegenerateMaskError, match="anisotropy"):
        ax.pca_axis(m)
    axis = ax.pca_axis(m, strict=False)
    assert axis.low_anisotropy


@pytest.mark.parametrize("n_pixels", [0, 1])
def test_too_few_pixels(n_pixels):
    m = np.zeros((5, 5), bool)
    m.flat[:n_pixels] = True
    with pytest.raises(ax.DegenerateMaskError, match="degenerate mask"):
        ax.pca_axis(m)


def test_duplicate_points_have_zero_covariance():
    with pytest.raises(ax.DegenerateMaskError, match="degenerate mask"):
        ax.pca_axis_points(np.ones((5, 2)))


# ---------------------------------------------------------------------------
# principal points


def test_three_points_on_unit_axis():
    axis = ax.ProbeAxis2D(np.zeros(2), np.array([1.0, 0.0]), (-1.0, 1.0))
    pts = ax.sample_principal_points(axis, 3).points
    np.testing.assert_array_equal(pts, [[-1, 0], [0, 0], [1, 0]])


def test_fifty_points_end_to_end():
    axis = ax.ProbeAxis2D(np.array([10.0, 20.0]), np.array([0.6, 0.8]), (-5.0, 30.0))
    pp = ax.sample_principal_points(axis, 50, image_size=(100, 50))
    assert len(pp) == 50
    start, end = axis.endpoints()
    np.testing.assert_allclose(pp.points[0], start)
    np.testing.assert_allclose(pp.points[-1], end)
    np.testing.assert_allclose(pp.normalized, pp.points / [100, 50])


def test_points_collinear_and_uniform(rng):
    for _ in range(20):
        axis = ax.pca_axis_points(random_cloud(rng), strict=False)
        pts = ax.sample_principal_points(axis, 50).points
        gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        assert np.max(np.abs(gaps - gaps.mean())) < 1e-9
        rel = pts - axis.centroid
        off_axis = rel @ np.array([-axis.direction[1], axis.direction[0]])
        assert np.max(np.abs(off_axis)) < 1e-9


def test_points_reproduce_direction(rng):
    for _ in range(20):
        axis = ax.pca_axis_points(random_cloud(rng), strict=False)
        again = ax.pca_axis_points(ax.sample_principal_points(axis, 50).points)
        assert abs(again.direction @ axis.direction) > 1 - 1e-12


def test_needs_two_points():
    axis = ax.ProbeAxis2D(np.zeros(2), np.array([1.0, 0.0]), (-1.0, 1.0))
    with pytest.raises(ValueError):
        ax.sample_principal_points(axis, 1)


# ---------------------------------------------------------------------------
# orientation


def _bar_from_left(width=80, height=40):
    m = np.zeros((height, width), bool)
    m[18:22, 0:50] = True
    return m


def test_probe_from_left_points_right():
    m = _bar_from_left()
    axis = ax.orient_axis(ax.pca_axis(m), m)
    assert axis.direction[0] > 0
    pts = ax.probe_points(m).points
    assert pts[0][0] < pts[-1][0]


def test_mirrored_probe_points_left():
    m = _bar_from_left()[:, ::-1]
    assert ax.orient_axis(ax.pca_axis(m), m).direction[0] < 0
    m = _bar_from_left().T  # enters from the top
    assert ax.orient_axis(ax.pca_axis(m), m).direction[1] > 0


def test_orientation_tie_prefers_positive_u():
    m = np.zeros((40, 80), bool)
    m[18:22, 20:60] = True  # floating bar, both ends equally far from the border
    for start in (ax.pca_axis(m), ax.pca_axis(m).flipped()):
        assert ax.orient_axis(start, m).direction[0] > 0


def test_probe_silhouette_independent_of_stage():
    # the probe sits in front of the phantom, so no stage can occlude it
    a = sc.generate_sample(6, 0, 0, SMALL)
    b = sc.generate_sample(6, 7, 0, SMALL)
    np.testing.assert_array_equal(a.probe_mask_left, b.probe_mask_left)
    np.testing.assert_array_equal(a.probe_mask_right, b.probe_mask_right)


def test_last_point_near_tip_for_all_canonical_poses():
    # One probe-only cast per pose covers all ten stages (see the test above).
    config = sc.SceneConfig()
    rig = config.rig()
    origin, dirs = geo.pixel_rays(geo.pixel_grid(rig), rig, "left")
    dirs = dirs.reshape(-1, 3)
    worst = 0.0
    for pose in range(120):
        probe = sc.probe_pose_for(0, pose, config)
        t, s = geo.intersect_rays_cylinder(origin, dirs, probe.tip, probe.axis_dir, probe.radius,
                                           probe.visible_length)
        mask = np.isfinite(t).reshape(rig.height, rig.width)
        rows, cols = np.nonzero((np.isfinite(t) & (s >= -probe.cap_length)).reshape(mask.shape))
        cap_centroid = np.array([cols.mean(), rows.mean()])
        pts = ax.probe_points(mask).points
        worst = max(worst, np.linalg.norm(pts[-1] - cap_centroid))
        assert np.linalg.norm(pts[0] - cap_centroid) > np.linalg.norm(pts[-1] - cap_centroid)
    assert worst < 10.0
