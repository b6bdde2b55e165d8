import numpy as np
import pytest

from conftest import random_camera, random_scene
from pg4d.gradcheck import finite_diff_check
from pg4d.rasterizer import render_arrays, render_backward_arrays
from pg4d.splats import SPLAT_DIM, Camera, Scene, Splat, scene_to_array


def test_fd_on_quadratic_is_nearly_exact():
    report = finite_diff_check(
        lambda p: float(np.sum(p * p)),
        lambda p: 2.0 * p,
        np.array([1.0, 2.0]),
    )
    assert report.ok
    np.testing.assert_allclose(report.analytic, [2.0, 4.0])
    assert report.max_abs <= 1e-10


def test_fd_flags_corrupted_gradient():
    def bad_grad(p):
        g = 2.0 * p
        g[1] *= 2.0
        return g

    report = finite_diff_check(lambda p: float(np.sum(p * p)), bad_grad, np.array([1.0, 2.0]))
    assert not report.ok
    assert report.failing == [1]


def test_zero_upstream_gives_zero_gradient(rng):
    scene = random_scene(rng)
    cam = random_camera(rng)
    g, bg = render_backward_arrays(scene_to_array(scene), cam, np.zeros((16, 16, 3)))
    assert np.all(g == 0.0) and np.all(bg == 0.0)


def test_opacity_gradient_at_center_is_color_weight():
    # Pixel at the splat center: d pixel_r / d alpha = c_r * exp(0) = 1.
    sp = Splat(center=np.array([0.2, 0.3]), scale=np.array([0.5, 0.5]), rotation=0.0,
               opacity=0.5, color=np.array([1.0, 0.0, 0.0]))
    scene = Scene(splats=[sp], background=np.zeros(3))
    cam = Camera(center=sp.center, rotation=0.0, zoom=4.0, resolution=(1, 1))
    upstream = np.zeros((1, 1, 3))
    upstream[0, 0, 0] = 1.0
    g, _ = render_backward_arrays(scene_to_array(scene), cam, upstream)
    assert abs(g[0, 5] - 1.0) < 1e-12


def test_nonfinite_upstream_rejected(rng):
    scene = random_scene(rng)
    cam = random_camera(rng)
    up = np.zeros((16, 16, 3))
    up[3, 3, 1] = np.inf
    with pytest.raises(ValueError):
        render_backward_arrays(scene_to_array(scene), cam, up)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_render_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(1000 + seed)
    scene = random_scene(rng, n_splats=4)
    cam = random_camera(rng, resolution=(12, 12))
    upstream = rng.normal(size=(12, 12, 3))
    base = scene_to_array(scene)

    def loss_fn(flat):
        img = render_arrays(flat.reshape(-1, SPLAT_DIM), scene.background, cam)
        return float(np.sum(upstream * img))

    def grad_fn(flat):
        g, _ = render_backward_arrays(flat.reshape(-1, SPLAT_DIM), cam, upstream)
        return g.ravel()

    report = finite_diff_check(loss_fn, grad_fn, base.ravel())
    assert report.ok, f"failing indices {report.failing}, max_rel={report.max_rel:.2e}"


def test_backward_deterministic_and_stable_across_tiles(rng):
    scene = random_scene(rng, n_splats=6)
    cam = random_camera(rng, resolution=(20, 20))
    up = rng.normal(size=(20, 20, 3))
    arr = scene_to_array(scene)
    g1, bg1 = render_backward_arrays(arr, cam, up, n_tiles=4)
    g2, bg2 = render_backward_arrays(arr, cam, up, n_tiles=4)
    np.testing.assert_array_equal(g1, g2)
    np.testing.assert_array_equal(bg1, bg2)
    g8, _ = render_backward_arrays(arr, cam, up, n_tiles=8)
    assert np.max(np.abs(g8 - g1)) <= 1e-9
