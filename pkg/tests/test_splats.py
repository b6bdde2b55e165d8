import numpy as np
import pytest

from pg4d.splats import (S_MIN, Scene, Splat, array_to_scene, build_covariance,
                         scene_to_array, splat_contribution)


def test_covariance_axis_aligned():
    cov = build_covariance(np.array([2.0, 3.0]), 0.0)
    np.testing.assert_allclose(cov, [[4.0, 0.0], [0.0, 9.0]], atol=1e-12)


def test_covariance_quarter_turn_swaps_axes():
    cov = build_covariance(np.array([2.0, 3.0]), np.pi / 2)
    np.testing.assert_allclose(cov, [[9.0, 0.0], [0.0, 4.0]], atol=1e-12)


def test_covariance_45_degrees_matches_high_precision_product():
    # Independent oracle: the same 2x2 product composed with mpmath at 50
    # digits, for scale=(1,2), rotation=pi/4.
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 50
    theta = mp.pi / 4
    c, s = mp.cos(theta), mp.sin(theta)
    r = mp.matrix([[c, -s], [s, c]])
    ss = mp.matrix([[1, 0], [0, 4]])
    expected = r * ss * r.T
    cov = build_covariance(np.array([1.0, 2.0]), np.pi / 4)
    for i in range(2):
        for j in range(2):
            assert abs(cov[i, j] - float(expected[i, j])) < 1e-12
    np.testing.assert_allclose(cov, [[2.5, -1.5], [-1.5, 2.5]], atol=1e-12)


def test_covariance_spd_for_random_inputs():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        scale = rng.uniform(S_MIN, 2.0, 2)
        theta = rng.uniform(-10.0, 10.0)
        cov = build_covariance(scale, theta)
        np.testing.assert_allclose(cov, cov.T, atol=1e-15)
        eig = np.linalg.eigvalsh(cov)
        assert np.all(eig >= S_MIN**2 - 1e-12)
        np.testing.assert_allclose(np.sort(eig), np.sort(scale**2), rtol=1e-9)


def test_covariance_pi_periodic():
    rng = np.random.default_rng(8)
    for _ in range(100):
        scale = rng.uniform(0.01, 2.0, 2)
        theta = rng.uniform(-3.0, 3.0)
        a = build_covariance(scale, theta)
        b = build_covariance(scale, theta + np.pi)
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_covariance_rejects_bad_inputs():
    with pytest.raises(ValueError):
        build_covariance(np.array([0.5 * S_MIN, 1.0]), 0.0)
    with pytest.raises(ValueError):
        build_covariance(np.array([np.nan, 1.0]), 0.0)
    with pytest.raises(ValueError):
        build_covariance(np.array([1.0, 1.0]), np.inf)


def _unit_splat(alpha=0.5, color=(1.0, 0.0, 0.0)):
    return Splat(center=np.zeros(2), scale=np.ones(2), rotation=0.0,
                 opacity=alpha, color=np.array(color))


def test_contribution_at_center_is_alpha_color():
    np.testing.assert_allclose(splat_contribution(_unit_splat(), (0.0, 0.0)),
                               [0.5, 0.0, 0.0], atol=1e-15)


def test_contribution_one_sigma_off_center():
    # alpha * exp(-1/2) on the red channel, evaluated independently.
    got = splat_contribution(_unit_splat(), (1.0, 0.0))
    np.testing.assert_allclose(got, [0.5 * np.exp(-0.5), 0.0, 0.0], rtol=1e-12)
    assert abs(got[0] - 0.30327) < 5e-6


def test_zero_opacity_contributes_nothing():
    sp = _unit_splat(alpha=0.0, color=(0.3, 0.7, 0.9))
    np.testing.assert_array_equal(splat_contribution(sp, (0.2, -0.1)), np.zeros(3))


def test_contribution_rejects_nonfinite_query():
    with pytest.raises(ValueError):
        splat_contribution(_unit_splat(), (np.nan, 0.0))


def test_scene_array_round_trip(rng):
    splats = [Splat(center=rng.normal(size=2), scale=rng.uniform(0.01, 1, 2),
                    rotation=rng.normal(), opacity=rng.uniform(),
                    color=rng.uniform(size=3)) for _ in range(5)]
    scene = Scene(splats=splats, background=rng.uniform(size=3))
    arr = scene_to_array(scene)
    back = array_to_scene(arr, scene.background)
    np.testing.assert_array_equal(scene_to_array(back), arr)


def test_empty_scene_rejected_by_packing():
    with pytest.raises(ValueError):
        scene_to_array(Scene(splats=[]))
