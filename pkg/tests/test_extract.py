import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sunsplat import extract, raster
from sunsplat.scene import Camera, Gaussians, Scene, seeded_features


def make_scene(n=12, n_images=3, seed=0, sunny=None):
    rng = np.random.default_rng(seed)
    g = Gaussians(
        positions=rng.normal([0.0, 0.0, 0.5], 0.6, (n, 3)),
        scales=rng.uniform(0.1, 0.3, (n, 3)),
        quats=np.tile((1.0, 0.0, 0.0, 0.0), (n, 1)),
        opacities=rng.uniform(0.4, 0.9, n),
        colors=rng.uniform(0.0, 1.0, (n, 3)),
        sky_semantic=np.zeros(n),
        **seeded_features(n, rng),
    )
    return Scene.create(g, n_images, seed=seed, sunny=sunny)


def make_camera():
    return Camera.look_at(
        np.array([0.0, -4.0, 2.0]), np.zeros(3), np.array([0.0, 0.0, 1.0]),
        fx=40.0, fy=40.0, cx=16.0, cy=12.0, width=32, height=24,
    )


def test_coarse_visibility_threshold_boundary():
    # response = (maxRGB - 0.1)^1.5 crosses 0.3 at maxRGB = 0.1 + 0.3^(2/3)
    img = np.zeros((1, 2, 3))
    img[0, 0] = (0.549, 0.1, 0.1)
    img[0, 1] = (0.547, 0.547, 0.547)
    got = extract.coarse_visibility(img)
    np.testing.assert_array_equal(got, [[1.0, 0.0]])


def test_coarse_visibility_cloudy_is_all_zero():
    img = np.ones((3, 3, 3))
    np.testing.assert_array_equal(extract.coarse_visibility(img, sunny=False), 0.0)


def test_coarse_visibility_uses_max_channel():
    img = np.zeros((1, 1, 3))
    img[0, 0] = (0.0, 0.9, 0.0)
    assert extract.coarse_visibility(img)[0, 0] == 1.0


def test_sky_mask_from_disparity_thresholds():
    depth = np.array([[5.0, 20.0, 1e9, 10.0]])
    got = extract.sky_mask_from_disparity(depth)
    # disparity 0.2, 0.05, 1e-9, 0.1 -> sky strictly below 0.1
    np.testing.assert_array_equal(got, [[0.0, 1.0, 1.0, 0.0]])


def test_sky_mask_nonpositive_depth_is_not_sky():
    got = extract.sky_mask_from_disparity(np.array([[0.0, -3.0]]))
    np.testing.assert_array_equal(got, [[0.0, 0.0]])


def test_ambient_residual_channel_mean():
    img = np.zeros((1, 1, 3))
    amb = np.array([[[0.3, 0.0, 0.6]]])
    assert extract.ambient_residual(img, amb)[0, 0] == pytest.approx(0.3, abs=1e-15)


def test_render_ambient_matches_hand_composite():
    import sunsplat.autodiff as ad
    from sunsplat.shading import decoder_input

    scene = make_scene()
    cam = make_camera()
    splats = raster.project(scene.gaussians, cam)
    got = extract.render_ambient(scene, splats, 1)
    x = decoder_input("amb", ad.Tensor(scene.amb_features), ad.Tensor(scene.embeddings.amb[1]))
    colors = scene.nets["amb"](x).data
    np.testing.assert_array_equal(got, raster.composite(splats, colors, np.zeros(3)))


def test_two_means_separates_two_point_data():
    values = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]])
    r = extract.two_means(values, np.ones_like(values))
    assert not r.degenerate
    assert r.mu_shadow == 0.0 and r.mu_sunlit == 1.0
    np.testing.assert_array_equal(r.assignments, values)


def test_two_means_tie_goes_to_lower_centroid():
    values = np.array([[0.0, 1.0, 0.5]])
    r = extract.two_means(values, np.ones_like(values))
    # 0.5 ties against the p25/p75 start and stays with the shadow side
    np.testing.assert_array_equal(r.assignments, [[0.0, 1.0, 0.0]])


def test_two_means_outside_region_forced_zero():
    values = np.array([[5.0, 5.0, 0.0], [5.0, 0.0, 0.0]])
    region = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 1.0]])
    r = extract.two_means(values, region)
    assert r.assignments[1, 0] == 0.0 and r.assignments[1, 1] == 0.0
    np.testing.assert_array_equal(r.assignments[0], [1.0, 1.0, 0.0])


def test_two_means_constant_data_degenerate():
    r = extract.two_means(np.full((4, 4), 0.7), np.ones((4, 4)))
    assert r.degenerate
    np.testing.assert_array_equal(r.assignments, 0.0)


def test_two_means_tiny_gap_degenerate():
    values = np.where(np.arange(100).reshape(10, 10) % 2 == 0, 0.5, 0.5 + 5e-5)
    r = extract.two_means(values, np.ones((10, 10)))
    assert r.degenerate
    np.testing.assert_array_equal(r.assignments, 0.0)


def test_two_means_empty_cluster_keeps_centroid():
    # p75 of this data equals p25, so one cluster starts empty and the
    # stranded centroid must hold its value instead of going NaN
    values = np.array([[0.0, 0.0, 0.0, 0.0, 100.0]])
    r = extract.two_means(values, np.ones_like(values))
    assert not r.degenerate
    assert r.mu_shadow == 0.0 and r.mu_sunlit == 100.0
    np.testing.assert_array_equal(r.assignments, [[0.0, 0.0, 0.0, 0.0, 1.0]])


def test_two_means_affine_invariance_exact():
    rng = np.random.default_rng(3)
    values = np.concatenate([rng.normal(0.1, 0.05, 500), rng.normal(0.6, 0.05, 500)]).reshape(20, 50)
    region = np.ones_like(values)
    base = extract.two_means(values, region)
    moved = extract.two_means(2.7 * values + 0.13, region)
    np.testing.assert_array_equal(base.assignments, moved.assignments)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(4, 400))
def test_two_means_wcss_nonincreasing_and_ordering(seed, n):
    rng = np.random.default_rng(seed)
    values = rng.uniform(0, 1, n).reshape(1, n)
    r = extract.two_means(values, np.ones_like(values))
    assert r.mu_sunlit >= r.mu_shadow
    for a, b in zip(r.wcss, r.wcss[1:]):
        assert b <= a + 1e-12


def test_two_means_mixture_majority_agreement():
    rng = np.random.default_rng(0)
    lo = rng.normal(0.1, 0.05, 2000)
    hi = rng.normal(0.6, 0.05, 2000)
    values = np.concatenate([lo, hi]).reshape(40, 100)
    labels = np.concatenate([np.zeros(2000), np.ones(2000)]).reshape(40, 100)
    r = extract.two_means(values, np.ones_like(values))
    agree = (r.assignments == labels).mean()
    assert agree >= 0.99


def test_extract_visibility_cloudy_short_circuit():
    scene = make_scene(sunny=[True, False, True])
    cam = make_camera()
    img = np.full((24, 32, 3), 0.4)
    mask, res = extract.extract_visibility(scene, cam, img, np.zeros((24, 32)), 1)
    assert res is None
    np.testing.assert_array_equal(mask, 0.0)


def test_extract_visibility_degenerate_residual_yields_all_shadow():
    scene = make_scene()
    cam = make_camera()
    splats = raster.project(scene.gaussians, cam)
    img = extract.render_ambient(scene, splats, 0)  # residual identically zero
    mask, res = extract.extract_visibility(scene, splats, img, np.zeros(img.shape[:2]), 0)
    assert res is not None and res.degenerate
    np.testing.assert_array_equal(mask, 0.0)
